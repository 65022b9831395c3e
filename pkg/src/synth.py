"""Synthetic corpora with a known quality ground truth.

Every phone instance gets a latent quality q in [0,1]. The acoustic-model
posteriors put mass ~q on the phone's own classes, the features drift from a
per-phone prototype along a per-phone direction in proportion to q, and the
simulated rater scores a word as mean(q) plus noise. GOP, features and human
labels therefore all carry the same signal, with the deep stream carrying
more of it than MFCC.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    Lexicon,
    LexiconEntry,
    PhoneAlignment,
    PhoneId,
    PhoneInventory,
    Segment,
    UtteranceRecord,
    validate_utterance,
)
from .data_io import (
    UtteranceDescriptor,
    WordLabel,
    write_alignment,
    write_json,
    write_labels,
    write_lexicon,
    write_manifest,
    write_matrix,
    write_phone_class_map,
)
from .errors import ConfigError, EmptyDatasetError
from .gop import PhoneClassMap

logger = logging.getLogger(__name__)

ARPABET = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P",
    "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)

_WORLD_STREAM = 0
_UTTERANCE_STREAM = 1
_SPLIT_STREAM = 2


@dataclass(frozen=True)
class QualityModel:
    """How latent phone quality drives posteriors, features and labels."""
    skill_alpha: float = 4.0
    skill_beta: float = 2.0
    phone_sd: float = 0.15
    posterior_jitter: float = 0.05
    mfcc_shift: float = 1.0
    mfcc_noise: float = 0.6
    deep_shift: float = 2.5
    deep_noise: float = 0.6
    label_noise: float = 0.05

    def validate(self) -> None:
        if self.skill_alpha <= 0 or self.skill_beta <= 0:
            raise ConfigError("skill_alpha and skill_beta must be positive")
        for name in ("phone_sd", "posterior_jitter", "mfcc_shift", "mfcc_noise",
                     "deep_shift", "deep_noise", "label_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"quality.{name} must be non-negative")


@dataclass(frozen=True)
class SynthSpec:
    n_utts: int = 2000
    n_phones: int = 40
    lexicon_size: int = 300
    min_frames: int = 3
    max_frames: int = 12
    min_words: int = 2
    max_words: int = 6
    max_word_phones: int = 5
    d_mfcc: int = 13
    d_deep: int = 32
    n_classes: int = 120
    zipf_exponent: float = 1.0
    split: tuple[float, float, float] = (0.25, 0.15, 0.6)
    quality: QualityModel = field(default_factory=QualityModel)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(r) for r in self.split))
        if isinstance(self.quality, dict):
            object.__setattr__(self, "quality", _from_dict(QualityModel, self.quality, "quality"))

    def validate(self) -> "SynthSpec":
        for name in ("n_utts", "n_phones", "lexicon_size", "min_frames", "min_words",
                     "max_word_phones", "d_mfcc", "d_deep"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_frames < self.min_frames or self.max_words < self.min_words:
            raise ConfigError("max_frames/max_words must not be below their minimum")
        if self.n_phones < 2 or self.n_classes < self.n_phones:
            raise ConfigError(
                f"need at least 2 phones and n_classes >= n_phones, got "
                f"{self.n_phones} phones and {self.n_classes} classes"
            )
        capacity = sum(self.n_phones ** n for n in range(1, self.max_word_phones + 1))
        if self.lexicon_size > capacity:
            raise ConfigError(
                f"lexicon_size {self.lexicon_size} exceeds the {capacity} distinct pronunciations "
                f"of up to {self.max_word_phones} phones"
            )
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be non-negative")
        check_ratios(self.split)
        self.quality.validate()
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["split"] = list(self.split)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        return _from_dict(cls, data, "synth spec")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
        return cls.from_dict(data)


def _from_dict(cls, data: dict, what: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"Unknown {what} field(s): {', '.join(unknown)}")
    return cls(**data)


def check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"Split ratios must be three non-negative numbers summing to 1, got {ratios}")


def phone_symbols(n_phones: int) -> list[str]:
    """ARPAbet symbols, extended with X<n> when more phones are requested."""
    symbols = list(ARPABET[:n_phones])
    symbols.extend(f"X{i}" for i in range(n_phones - len(symbols)))
    return symbols


def phone_class_map(inventory: PhoneInventory, n_classes: int) -> PhoneClassMap:
    """Give each phone n_classes // n_phones contiguous classes."""
    per_phone = n_classes // len(inventory)
    return PhoneClassMap({p: range(p.index * per_phone, (p.index + 1) * per_phone) for p in inventory})


def phone_posteriors(own_classes: np.ndarray, quality: float, n_frames: int, n_classes: int,
                     jitter: float, rng: np.random.Generator) -> np.ndarray:
    """Posterior rows for one phone instance.

    Each frame puts mass q + N(0, jitter * 4q(1-q)) (clipped to [0,1]) on the
    phone's own classes and spreads the remainder uniformly over the rest, so
    q = 0 and q = 1 are reproduced exactly.
    """
    sd = jitter * 4.0 * quality * (1.0 - quality)
    own = np.clip(quality + rng.normal(0.0, 1.0, n_frames) * sd, 0.0, 1.0)
    rows = np.empty((n_frames, n_classes), dtype=np.float64)
    others = np.ones(n_classes, dtype=bool)
    others[own_classes] = False
    rows[:, others] = ((1.0 - own) / others.sum())[:, None]
    split = rng.dirichlet(np.ones(len(own_classes)), size=n_frames)
    rows[:, own_classes] = split * own[:, None]
    return rows


@dataclass
class _World:
    """Everything shared by all utterances: lexicon and feature prototypes."""
    inventory: PhoneInventory
    class_map: PhoneClassMap
    words: list[str]
    pronunciations: list[tuple[PhoneId, ...]]
    word_probs: np.ndarray
    mfcc_proto: np.ndarray
    mfcc_dir: np.ndarray
    deep_proto: np.ndarray
    deep_dir: np.ndarray


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _build_world(spec: SynthSpec) -> _World:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(_WORLD_STREAM,)))
    inventory = PhoneInventory(phone_symbols(spec.n_phones))
    phones = list(inventory)
    words, pronunciations, seen = [], [], set()
    while len(words) < spec.lexicon_size:
        n = int(rng.integers(1, spec.max_word_phones + 1))
        pron = tuple(phones[i] for i in rng.integers(0, len(phones), n))
        if pron in seen:
            continue
        seen.add(pron)
        words.append(f"w{len(words):04d}")
        pronunciations.append(pron)
    ranks = np.arange(1, spec.lexicon_size + 1, dtype=np.float64)
    probs = ranks ** -spec.zipf_exponent
    return _World(
        inventory=inventory,
        class_map=phone_class_map(inventory, spec.n_classes),
        words=words,
        pronunciations=pronunciations,
        word_probs=probs / probs.sum(),
        mfcc_proto=rng.normal(size=(spec.n_phones, spec.d_mfcc)),
        mfcc_dir=_unit_rows(rng, spec.n_phones, spec.d_mfcc),
        deep_proto=rng.normal(size=(spec.n_phones, spec.d_deep)),
        deep_dir=_unit_rows(rng, spec.n_phones, spec.d_deep),
    )


@dataclass(frozen=True)
class SynthUtterance:
    record: UtteranceRecord
    word_scores: tuple[float, ...]
    phone_qualities: tuple[float, ...]


def _synth_utterance(spec: SynthSpec, world: _World, index: int) -> SynthUtterance:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(_UTTERANCE_STREAM, index)))
    qm = spec.quality
    utt_id = f"utt{index:05d}"
    skill = rng.beta(qm.skill_alpha, qm.skill_beta)
    n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
    word_ids = rng.choice(len(world.words), size=n_words, p=world.word_probs)

    segments, qualities, word_scores = [], [], []
    mfcc_rows, deep_rows, post_rows = [], [], []
    frame = 0
    for w in word_ids:
        word_q = []
        for phone in world.pronunciations[w]:
            q = float(np.clip(skill + rng.normal(0.0, qm.phone_sd), 0.0, 1.0))
            n_frames = int(rng.integers(spec.min_frames, spec.max_frames + 1))
            k = phone.index
            shift = q - 0.5
            mfcc_rows.append(world.mfcc_proto[k] + shift * qm.mfcc_shift * world.mfcc_dir[k]
                             + rng.normal(0.0, qm.mfcc_noise, (n_frames, spec.d_mfcc)))
            deep_rows.append(world.deep_proto[k] + shift * qm.deep_shift * world.deep_dir[k]
                             + rng.normal(0.0, qm.deep_noise, (n_frames, spec.d_deep)))
            post_rows.append(phone_posteriors(world.class_map.classes(phone), q, n_frames,
                                              spec.n_classes, qm.posterior_jitter, rng))
            segments.append(Segment(phone, frame, frame + n_frames))
            frame += n_frames
            word_q.append(q)
            qualities.append(q)
        score = float(np.clip(np.mean(word_q) + rng.normal(0.0, qm.label_noise), 0.0, 1.0)) * 10.0
        word_scores.append(round(score, 4))

    record = validate_utterance(UtteranceRecord(
        utt_id=utt_id,
        mfcc=np.concatenate(mfcc_rows),
        deep=np.concatenate(deep_rows),
        post=np.concatenate(post_rows),
        align=PhoneAlignment(tuple(segments), utt_id=utt_id),
        text=tuple(world.words[w] for w in word_ids),
    ))
    return SynthUtterance(record, tuple(word_scores), tuple(qualities))


@dataclass(frozen=True)
class CorpusSplit:
    unlabeled: tuple[str, ...]
    train: tuple[str, ...]
    test: tuple[str, ...]


def split_corpus(utt_ids: Sequence[str], ratios: Sequence[float] = (0.25, 0.15, 0.6),
                 seed: int = 0) -> CorpusSplit:
    """Seeded, disjoint, exhaustive split into unlabeled / train / test.

    Split sizes are round(ratio * n) for the first two parts; the test part
    takes the rest. Each part keeps the input order.
    """
    check_ratios(ratios)
    n = len(utt_ids)
    n_unlabeled = int(round(ratios[0] * n))
    n_train = int(round(ratios[1] * n))
    n_test = n - n_unlabeled - n_train
    if min(n_unlabeled, n_train, n_test) < 1:
        raise EmptyDatasetError(
            f"Split of {n} utterances at {tuple(ratios)} leaves a part empty "
            f"({n_unlabeled}/{n_train}/{n_test})"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SPLIT_STREAM,)))
    order = rng.permutation(n)
    part = np.empty(n, dtype=np.int8)
    part[order[:n_unlabeled]] = 0
    part[order[n_unlabeled:n_unlabeled + n_train]] = 1
    part[order[n_unlabeled + n_train:]] = 2
    ids = list(utt_ids)
    return CorpusSplit(
        unlabeled=tuple(ids[i] for i in range(n) if part[i] == 0),
        train=tuple(ids[i] for i in range(n) if part[i] == 1),
        test=tuple(ids[i] for i in range(n) if part[i] == 2),
    )


@dataclass
class SynthCorpus:
    spec: SynthSpec
    inventory: PhoneInventory
    class_map: PhoneClassMap
    lexicon: Lexicon
    utterances: list[SynthUtterance]
    split: CorpusSplit

    def records(self, utt_ids: Optional[Sequence[str]] = None) -> list[UtteranceRecord]:
        by_id = {u.record.utt_id: u.record for u in self.utterances}
        return [by_id[i] for i in (utt_ids if utt_ids is not None else by_id)]

    def labels(self, utt_ids: Optional[Sequence[str]] = None) -> dict[tuple[str, int], WordLabel]:
        keep = set(utt_ids) if utt_ids is not None else None
        labels = {}
        for u in self.utterances:
            if keep is not None and u.record.utt_id not in keep:
                continue
            for i, (word, score) in enumerate(zip(u.record.text, u.word_scores)):
                labels[(u.record.utt_id, i)] = WordLabel(word, score)
        return labels


def build_corpus(spec: SynthSpec, workers: int = 1) -> SynthCorpus:
    """Generate a synthetic corpus in memory.

    Lexicon frequencies are the word counts of the train split transcripts,
    floored at 1.
    """
    spec.validate()
    world = _build_world(spec)
    indices = range(spec.n_utts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            utterances = list(executor.map(lambda i: _synth_utterance(spec, world, i), indices))
    else:
        utterances = [_synth_utterance(spec, world, i) for i in indices]

    split = split_corpus([u.record.utt_id for u in utterances], spec.split, spec.seed)
    train_ids = set(split.train)
    counts = dict.fromkeys(world.words, 0)
    for u in utterances:
        if u.record.utt_id in train_ids:
            for word in u.record.text:
                counts[word] += 1
    lexicon = Lexicon({
        w: LexiconEntry(pron, max(counts[w], 1))
        for w, pron in zip(world.words, world.pronunciations)
    })
    logger.info("Synthesized %d utterances (%d words): %d unlabeled / %d train / %d test",
                len(utterances), sum(len(u.record.text) for u in utterances),
                len(split.unlabeled), len(split.train), len(split.test))
    return SynthCorpus(spec, world.inventory, world.class_map, lexicon, utterances, split)


def write_corpus(corpus: SynthCorpus, out_dir) -> dict[str, Path]:
    """Write a corpus in the standard file formats.

    Returns:
        Output paths by role.
    """
    out = Path(out_dir)
    feats = out / "feats"
    feats.mkdir(parents=True, exist_ok=True)
    paths = {
        "manifest": out / "manifest.jsonl",
        "unlabeled": out / "unlabeled.jsonl",
        "train": out / "train.jsonl",
        "test": out / "test.jsonl",
        "labels": out / "labels.tsv",
        "lexicon": out / "lexicon.tsv",
        "phone_map": out / "phone_map.tsv",
        "align": out / "align.tsv",
        "spec": out / "synth_spec.json",
    }
    descriptors = {}
    for u in corpus.utterances:
        rec = u.record
        for name in ("mfcc", "deep", "post"):
            write_matrix(getattr(rec, name), feats / f"{rec.utt_id}.{name}.gmx")
        descriptors[rec.utt_id] = UtteranceDescriptor(
            utt_id=rec.utt_id,
            mfcc=feats / f"{rec.utt_id}.mfcc.gmx",
            deep=feats / f"{rec.utt_id}.deep.gmx",
            post=feats / f"{rec.utt_id}.post.gmx",
            align=paths["align"],
            text=rec.text,
        )
    write_manifest(descriptors.values(), paths["manifest"])
    for part in ("unlabeled", "train", "test"):
        write_manifest([descriptors[i] for i in getattr(corpus.split, part)], paths[part])
    write_alignment({u.record.utt_id: u.record.align for u in corpus.utterances}, paths["align"])
    write_labels(corpus.labels(corpus.split.train + corpus.split.test), paths["labels"])
    write_lexicon(corpus.lexicon, paths["lexicon"])
    write_phone_class_map(corpus.class_map, paths["phone_map"])
    write_json(corpus.spec.to_dict(), paths["spec"])
    return paths


def generate_corpus(spec: SynthSpec, out_dir, workers: int = 1) -> tuple[SynthCorpus, dict[str, Path]]:
    """Build a corpus and write it under ``out_dir``."""
    corpus = build_corpus(spec, workers)
    return corpus, write_corpus(corpus, out_dir)
