"""Cut real utterances into word samples.

Words are located by walking the transcript: each word consumes as many
consecutive alignment segments as its canonical pronunciation has phones.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .core import Lexicon, Provenance, Segment, UtteranceRecord, WordSample, freeze
from .errors import AlignmentError, ConfigError, DataValidationError, UnknownPhoneError
from .evaluation import scale_human_score
from .gop import GopVariant, PhoneClassMap, phone_gop, word_gop

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WordSpan:
    index: int
    word: str
    segments: tuple[Segment, ...]


def segment_words(rec: UtteranceRecord, lexicon: Lexicon,
                  silence_phones: Iterable[str] = ("SIL", "SP")) -> list[WordSpan]:
    """Group an utterance's alignment segments into words.

    Args:
        rec: Validated utterance.
        lexicon: Canonical pronunciations.
        silence_phones: Phone symbols skipped between words.

    Returns:
        One WordSpan per transcript word, in order.
    """
    silence = set(silence_phones)
    segments = [s for s in rec.align if s.phone.symbol not in silence]
    spans = []
    cursor = 0
    for index, word in enumerate(rec.text):
        if word not in lexicon:
            raise UnknownPhoneError(f"{rec.utt_id}: word {index} {word!r} is not in the lexicon")
        canonical = lexicon[word].phones
        taken = segments[cursor:cursor + len(canonical)]
        if len(taken) < len(canonical):
            raise AlignmentError(
                f"{rec.utt_id}: alignment ends inside word {index} {word!r} "
                f"({len(taken)} of {len(canonical)} phones)"
            )
        aligned = tuple(s.phone for s in taken)
        if aligned != canonical:
            raise AlignmentError(
                f"{rec.utt_id}: word {index} {word!r} expects /{' '.join(map(str, canonical))}/ "
                f"but alignment has /{' '.join(map(str, aligned))}/"
            )
        spans.append(WordSpan(index, word, tuple(taken)))
        cursor += len(canonical)
    if cursor != len(segments):
        raise AlignmentError(
            f"{rec.utt_id}: {len(segments) - cursor} aligned phones left after the last word"
        )
    return spans


def extract_word_samples(rec: UtteranceRecord, lexicon: Lexicon, class_map: PhoneClassMap,
                         provenance: Provenance,
                         labels: Optional[dict] = None,
                         variant: GopVariant = GopVariant.MEAN_POSTERIOR,
                         silence_phones: Iterable[str] = ("SIL", "SP")) -> list[WordSample]:
    """Turn each word of an utterance into a WordSample.

    Frames are the word's concatenated segment slices. REAL_UNLABELED targets
    are the word GOP; HUMAN_LABELED targets are the scaled human score looked
    up in ``labels`` by (utt_id, word_index).
    """
    if provenance is Provenance.HUMAN_LABELED and labels is None:
        raise ConfigError("HUMAN_LABELED samples need labels")
    samples = []
    for span in segment_words(rec, lexicon, silence_phones):
        if provenance is Provenance.HUMAN_LABELED:
            key = (rec.utt_id, span.index)
            if key not in labels:
                raise DataValidationError(f"{rec.utt_id}: no human label for word {span.index} {span.word!r}")
            target = scale_human_score(labels[key].score)
        else:
            target = word_gop(phone_gop(rec.post, class_map, s, variant) for s in span.segments)
        phones = []
        for s in span.segments:
            phones.extend([s.phone] * s.n_frames)
        samples.append(WordSample(
            word=span.word,
            phones_per_frame=tuple(phones),
            mfcc=freeze(np.concatenate([rec.mfcc[s.start:s.end] for s in span.segments])),
            deep=freeze(np.concatenate([rec.deep[s.start:s.end] for s in span.segments])),
            target=target,
            provenance=provenance,
            utt_id=rec.utt_id,
            word_index=span.index,
            segment_lengths=tuple(s.n_frames for s in span.segments),
        ))
    return samples


def corpus_word_samples(corpus: Iterable[UtteranceRecord], lexicon: Lexicon,
                        class_map: PhoneClassMap, provenance: Provenance,
                        labels: Optional[dict] = None,
                        variant: GopVariant = GopVariant.MEAN_POSTERIOR) -> list[WordSample]:
    """Word samples of every utterance, in corpus order."""
    samples = []
    for rec in corpus:
        samples.extend(extract_word_samples(rec, lexicon, class_map, provenance, labels, variant))
    logger.info("Extracted %d %s word samples", len(samples), provenance.value)
    return samples
