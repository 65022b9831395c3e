"""Pytest fixtures and builders for the phone mixup tests."""

from typing import Optional, Sequence

import numpy as np
import pytest

from src.core import (
    Lexicon,
    LexiconEntry,
    PhoneAlignment,
    PhoneInventory,
    PhonePoolSet,
    Provenance,
    Quadruplet,
    Segment,
    UtteranceRecord,
    WordSample,
    validate_utterance,
)
from src.gop import PhoneClassMap
from src.scorer import ScorerConfig, init_model
from src.synth import SynthSpec

SYMBOLS = ("AA", "B", "K", "T", "SIL")
D_MFCC = 4
D_DEEP = 6


def make_inventory(symbols: Sequence[str] = SYMBOLS) -> PhoneInventory:
    """Helper to create a small phone inventory."""
    return PhoneInventory(symbols)


def make_class_map(inventory: PhoneInventory, per_phone: int = 1) -> PhoneClassMap:
    """Phone i owns classes [i*per_phone, (i+1)*per_phone)."""
    return PhoneClassMap({p: range(p.index * per_phone, (p.index + 1) * per_phone) for p in inventory})


def make_posteriorgram(own_phone_indices: Sequence[int], own_mass: Sequence[float],
                       n_classes: int) -> np.ndarray:
    """One row per frame: ``own_mass`` on the frame's phone class, the rest spread evenly."""
    rows = np.empty((len(own_phone_indices), n_classes), dtype=np.float64)
    for t, (k, mass) in enumerate(zip(own_phone_indices, own_mass)):
        rows[t, :] = (1.0 - mass) / (n_classes - 1)
        rows[t, k] = mass
    return rows


def make_record(
    utt_id: str,
    segments: Sequence[tuple[str, int, float]],
    inventory: PhoneInventory,
    text: Sequence[str] = (),
    rng: Optional[np.random.Generator] = None,
    gap: int = 0,
) -> UtteranceRecord:
    """Helper to create a validated utterance.

    ``segments`` lists (phone symbol, frames, posterior mass on the phone);
    ``gap`` unaligned frames are left between consecutive segments.
    """
    rng = rng or np.random.default_rng(0)
    aligned, phone_idx, mass = [], [], []
    frame = 0
    for symbol, n_frames, quality in segments:
        phone = inventory[symbol]
        if aligned and gap:
            phone_idx.extend([phone.index] * gap)
            mass.extend([0.5] * gap)
            frame += gap
        aligned.append(Segment(phone, frame, frame + n_frames))
        phone_idx.extend([phone.index] * n_frames)
        mass.extend([quality] * n_frames)
        frame += n_frames
    return validate_utterance(UtteranceRecord(
        utt_id=utt_id,
        mfcc=rng.normal(size=(frame, D_MFCC)),
        deep=rng.normal(size=(frame, D_DEEP)),
        post=make_posteriorgram(phone_idx, mass, len(inventory)),
        align=PhoneAlignment(tuple(aligned), utt_id=utt_id),
        text=tuple(text),
    ))


def make_lexicon(inventory: PhoneInventory, entries: dict[str, tuple[str, int]]) -> Lexicon:
    """``entries`` maps word -> ("PH1 PH2", frequency)."""
    return Lexicon({
        word: LexiconEntry(tuple(inventory[s] for s in phones.split()), freq)
        for word, (phones, freq) in entries.items()
    })


def make_quadruplet(inventory: PhoneInventory, symbol: str, n_frames: int, gop: float,
                    rng: np.random.Generator) -> Quadruplet:
    return Quadruplet(
        phone=inventory[symbol],
        mfcc_seg=rng.normal(size=(n_frames, D_MFCC)).astype(np.float32),
        deep_seg=rng.normal(size=(n_frames, D_DEEP)).astype(np.float32),
        gop=gop,
    )


def make_pool(inventory: PhoneInventory, sizes: dict[str, int], seed: int = 0) -> PhonePoolSet:
    """Pool with ``sizes[symbol]`` instances per phone, 1-6 frames each, random GOPs."""
    rng = np.random.default_rng(seed)
    pools = PhonePoolSet(inventory)
    for symbol, count in sizes.items():
        for _ in range(count):
            pools.append(make_quadruplet(inventory, symbol, int(rng.integers(1, 7)),
                                         float(rng.random()), rng))
    return pools


def make_sample(
    n_frames: int = 8,
    target: float = 0.5,
    provenance: Provenance = Provenance.REAL_UNLABELED,
    inventory: Optional[PhoneInventory] = None,
    rng: Optional[np.random.Generator] = None,
    utt_id: str = "utt",
    word_index: int = 0,
    word: str = "word",
    d_mfcc: int = D_MFCC,
    d_deep: int = D_DEEP,
) -> WordSample:
    """Helper to create a WordSample with random features and two phones."""
    inventory = inventory or make_inventory()
    rng = rng or np.random.default_rng(0)
    first = inventory.by_index(0)
    second = inventory.by_index(1)
    split = max(1, n_frames // 2)
    phones = (first,) * split + (second,) * (n_frames - split)
    return WordSample(
        word=word,
        phones_per_frame=phones,
        mfcc=rng.normal(size=(n_frames, d_mfcc)).astype(np.float32),
        deep=rng.normal(size=(n_frames, d_deep)).astype(np.float32),
        target=target,
        provenance=provenance,
        utt_id=utt_id,
        word_index=word_index,
    )


def make_samples(count: int, provenance: Provenance = Provenance.REAL_UNLABELED, seed: int = 0,
                 min_frames: int = 2, max_frames: int = 12) -> list[WordSample]:
    """Samples whose target depends on their mean deep feature."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        n = int(rng.integers(min_frames, max_frames + 1))
        s = make_sample(n, 0.5, provenance, rng=rng, utt_id=f"u{i:04d}", word_index=i % 3)
        target = float(np.clip(0.5 + 0.3 * np.tanh(s.deep.mean()), 0.0, 1.0))
        samples.append(WordSample(s.word, s.phones_per_frame, s.mfcc, s.deep, target, provenance,
                                  s.utt_id, s.word_index))
    return samples


def tiny_config(**overrides) -> ScorerConfig:
    """Small scorer for fast tests."""
    values = dict(d_mfcc=D_MFCC, d_deep=D_DEEP, d_hidden=8, n_phones=len(SYMBOLS), filters=8,
                  batch_size=8, pretrain_epochs=2, finetune_epochs=2, valid_fraction=0.0)
    values.update(overrides)
    return ScorerConfig(**values).validate()


def tiny_synth_spec(**overrides) -> SynthSpec:
    """A corpus small enough for end-to-end tests."""
    values = dict(n_utts=40, n_phones=8, lexicon_size=12, d_mfcc=D_MFCC, d_deep=D_DEEP,
                  n_classes=16, max_word_phones=3, seed=7)
    values.update(overrides)
    return SynthSpec(**values)


@pytest.fixture
def inventory() -> PhoneInventory:
    """Return the five-phone test inventory."""
    return make_inventory()


@pytest.fixture
def class_map(inventory) -> PhoneClassMap:
    """Return a one-class-per-phone map."""
    return make_class_map(inventory)


@pytest.fixture
def rng() -> np.random.Generator:
    """Return a seeded random stream."""
    return np.random.default_rng(1234)


@pytest.fixture
def lexicon(inventory) -> Lexicon:
    """Return a three-word lexicon with 3:1:1 frequencies."""
    return make_lexicon(inventory, {"cab": ("K AA B", 3), "bat": ("B AA T", 1), "tab": ("T AA B", 1)})


@pytest.fixture
def pools(inventory) -> PhonePoolSet:
    """Return a pool covering AA, B, K and T."""
    return make_pool(inventory, {"AA": 20, "B": 15, "K": 10, "T": 12})


@pytest.fixture
def tiny_cfg() -> ScorerConfig:
    """Return the tiny scorer configuration."""
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    """Return a freshly initialised tiny scorer."""
    return init_model(tiny_cfg, np.random.default_rng(0))
