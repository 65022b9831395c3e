"""Phone-level mixup: synthesize word samples from per-phone pools.

A word is drawn from the lexicon by training-set frequency; for each of its
phones one quadruplet is drawn from that phone's pool. The features are the
concatenated slices and the label is the mean of the drawn GOPs.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Lexicon, PhoneId, PhonePoolSet, Provenance, WordSample, freeze
from .data_io import lexicon_digest, pool_digest
from .errors import CoverageError, DataValidationError, EmptyLexiconError
from .gop import word_gop
from .pool import require_pool, sample_quadruplet

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1000
MIXUP_UTT_ID = "mixup"


def sample_word(lex: Lexicon, rng: np.random.Generator) -> tuple[str, tuple[PhoneId, ...]]:
    """Draw a word with probability freq(w) / sum(freq).

    Returns:
        (word, canonical phone sequence)
    """
    if len(lex) == 0:
        raise EmptyLexiconError("Cannot sample from an empty lexicon")
    cumulative = lex.cumulative_frequencies
    i = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    word = lex.words[i]
    return word, lex[word].phones


def generate_word_sample(pools: PhonePoolSet, word: str, phones: Sequence[PhoneId],
                         rng: np.random.Generator) -> WordSample:
    """Build one mixup sample by drawing a quadruplet per phone.

    Raises:
        EmptyPoolError: some phone has no pooled instances (no draw is made).
    """
    require_pool(pools, phones)
    drawn = [sample_quadruplet(pools, phone, rng) for phone in phones]
    phones_per_frame = []
    for q in drawn:
        phones_per_frame.extend([q.phone] * q.n_frames)
    return WordSample(
        word=word,
        phones_per_frame=tuple(phones_per_frame),
        mfcc=freeze(np.concatenate([q.mfcc_seg for q in drawn])),
        deep=freeze(np.concatenate([q.deep_seg for q in drawn])),
        target=word_gop(q.gop for q in drawn),
        provenance=Provenance.MIXUP,
        segment_lengths=tuple(q.n_frames for q in drawn),
    )


@dataclass(frozen=True)
class GenerationManifest:
    """What produced a mixup dataset: enough to regenerate it bit-exactly."""
    seed: int
    n_words: int
    chunk_size: int
    pool_sha256: str
    lexicon_sha256: str
    resample_count: int
    covered_words: int
    lexicon_words: int

    @property
    def rejection_rate(self) -> float:
        draws = self.n_words + self.resample_count
        return self.resample_count / draws if draws else 0.0

    def to_dict(self) -> dict:
        data = asdict(self)
        data["rejection_rate"] = self.rejection_rate
        return data


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Independent random substream for one generation chunk."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def generate_dataset(pools: PhonePoolSet, lex: Lexicon, n_words: int, seed: int,
                     workers: int = 1,
                     chunk_size: int = CHUNK_SIZE) -> tuple[list[WordSample], GenerationManifest]:
    """Generate exactly ``n_words`` mixup samples.

    Words whose phones lack pool coverage are redrawn and counted. The
    request is split into fixed-size chunks, each with its own substream
    derived from (seed, chunk index), and merged in chunk order, so the
    output does not depend on ``workers``.

    Args:
        pools: Per-phone pools.
        lex: Lexicon with word frequencies.
        n_words: Number of samples (>= 1).
        seed: Master seed.
        workers: Thread count.
        chunk_size: Words per substream.

    Returns:
        (samples, manifest)
    """
    if n_words < 1:
        raise DataValidationError(f"n_words must be >= 1, got {n_words}")
    if len(lex) == 0:
        raise EmptyLexiconError("Cannot generate from an empty lexicon")
    covered = {w for w in lex.words if all(pools.has(p) for p in lex[w].phones)}
    if not covered:
        raise CoverageError("No lexicon word has pool coverage for all of its phones")
    if len(covered) < len(lex):
        logger.warning("%d of %d lexicon words lack pool coverage and will be redrawn",
                       len(lex) - len(covered), len(lex))

    def run_chunk(chunk: int) -> tuple[list[WordSample], int]:
        rng = chunk_rng(seed, chunk)
        start = chunk * chunk_size
        count = min(chunk_size, n_words - start)
        produced: list[WordSample] = []
        resamples = 0
        while len(produced) < count:
            word, phones = sample_word(lex, rng)
            if word not in covered:
                resamples += 1
                continue
            sample = generate_word_sample(pools, word, phones, rng)
            produced.append(_with_position(sample, start + len(produced)))
        return produced, resamples

    chunks = range((n_words + chunk_size - 1) // chunk_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]

    samples = [s for chunk_samples, _ in results for s in chunk_samples]
    resample_count = sum(r for _, r in results)
    manifest = GenerationManifest(
        seed=seed,
        n_words=n_words,
        chunk_size=chunk_size,
        pool_sha256=pool_digest(pools),
        lexicon_sha256=lexicon_digest(lex),
        resample_count=resample_count,
        covered_words=len(covered),
        lexicon_words=len(lex),
    )
    logger.info("Generated %d mixup words (%d redraws, rejection rate %.3f)",
                len(samples), resample_count, manifest.rejection_rate)
    return samples, manifest


def _with_position(sample: WordSample, index: int) -> WordSample:
    return WordSample(
        word=sample.word,
        phones_per_frame=sample.phones_per_frame,
        mfcc=sample.mfcc,
        deep=sample.deep,
        target=sample.target,
        provenance=sample.provenance,
        utt_id=MIXUP_UTT_ID,
        word_index=index,
        segment_lengths=sample.segment_lengths,
    )


def mix_pretrain_corpus(real: Sequence[WordSample], mixed: Sequence[WordSample],
                        rng: Optional[np.random.Generator] = None) -> list[WordSample]:
    """Concatenate real unlabeled and mixup samples and shuffle them.

    Args:
        real: REAL_UNLABELED samples with word-GOP targets.
        mixed: MIXUP samples.
        rng: Shuffle stream (seed 0 when omitted).

    Returns:
        Shuffled pretraining set; per-provenance counts are preserved.
    """
    for s in real:
        if s.provenance is not Provenance.REAL_UNLABELED:
            raise DataValidationError(
                f"Real pretraining sample {s.utt_id}:{s.word_index} has provenance {s.provenance.value}"
            )
    for s in mixed:
        if s.provenance is not Provenance.MIXUP:
            raise DataValidationError(
                f"Mixup pretraining sample {s.word_index} has provenance {s.provenance.value}"
            )
    combined = list(real) + list(mixed)
    if rng is None:
        rng = np.random.default_rng(0)
    order = rng.permutation(len(combined))
    return [combined[i] for i in order]
