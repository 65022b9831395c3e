"""Domain types shared by every other module.

All types are immutable after construction: dataclasses are frozen and the
numpy arrays they hold are flagged read-only, so records can be shared across
threads without copying.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import (
    AlignmentError,
    DimensionMismatchError,
    DuplicateKeyError,
    EmptyLexiconError,
    EmptyPoolError,
    NonFiniteValueError,
    RowSumError,
    ScoreRangeError,
    UnknownPhoneError,
)

ROW_SUM_TOLERANCE = 1e-4


@dataclass(frozen=True)
class PhoneId:
    """A phoneme label and its dense index in the phone inventory."""
    symbol: str
    index: int

    def __post_init__(self):
        if not self.symbol:
            raise UnknownPhoneError("Phone symbol must be non-empty")
        if self.index < 0:
            raise UnknownPhoneError(f"Phone index must be non-negative: {self.symbol}={self.index}")

    def __str__(self) -> str:
        return self.symbol


class PhoneInventory:
    """Ordered set of phones; index is the position in the source file."""

    def __init__(self, symbols: Iterable[str]):
        phones: list[PhoneId] = []
        by_symbol: dict[str, PhoneId] = {}
        for i, symbol in enumerate(symbols):
            if symbol in by_symbol:
                raise DuplicateKeyError(f"Duplicate phone symbol in inventory: {symbol}")
            phone = PhoneId(symbol, i)
            phones.append(phone)
            by_symbol[symbol] = phone
        self._phones = tuple(phones)
        self._by_symbol = by_symbol

    def __len__(self) -> int:
        return len(self._phones)

    def __iter__(self) -> Iterator[PhoneId]:
        return iter(self._phones)

    def __contains__(self, item) -> bool:
        if isinstance(item, PhoneId):
            return item.index < len(self._phones) and self._phones[item.index] == item
        return item in self._by_symbol

    def __getitem__(self, symbol: str) -> PhoneId:
        try:
            return self._by_symbol[symbol]
        except KeyError:
            raise UnknownPhoneError(f"Unknown phone symbol: {symbol!r}") from None

    def __eq__(self, other) -> bool:
        return isinstance(other, PhoneInventory) and self._phones == other._phones

    def __hash__(self) -> int:
        return hash(self._phones)

    def __repr__(self) -> str:
        return f"PhoneInventory({len(self)} phones)"

    def by_index(self, index: int) -> PhoneId:
        if not 0 <= index < len(self._phones):
            raise UnknownPhoneError(f"Phone index out of range: {index} (inventory size {len(self)})")
        return self._phones[index]

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(p.symbol for p in self._phones)


def freeze(array: np.ndarray) -> np.ndarray:
    """Mark an array read-only and return it."""
    array.flags.writeable = False
    return array


def check_feature_matrix(data, owner: str, name: str, dtype=np.float32) -> np.ndarray:
    """Validate a T x D real matrix and return it as a read-only array.

    Args:
        data: Array-like of shape (T, D).
        owner: Utterance id or other owner named in error messages.
        name: Field name named in error messages.
        dtype: Storage dtype.

    Returns:
        Read-only numpy array.
    """
    array = np.asarray(data, dtype=dtype)
    if array.ndim != 2:
        raise DimensionMismatchError(f"{owner}: {name} must be 2-D, got shape {array.shape}")
    if array.shape[0] < 1 or array.shape[1] < 1:
        raise DimensionMismatchError(f"{owner}: {name} has invalid dimensions {array.shape}")
    if not np.isfinite(array).all():
        row = int(np.argwhere(~np.isfinite(array))[0][0])
        raise NonFiniteValueError(f"{owner}: {name} has a non-finite value in frame {row}")
    if array.flags.writeable:
        array = freeze(array.copy() if array is data else array)
    return array


def check_posteriorgram(data, owner: str, name: str = "post") -> np.ndarray:
    """Validate a T x C posterior matrix (entries in [0,1], rows sum to 1)."""
    array = check_feature_matrix(data, owner, name)
    if (array < 0).any() or (array > 1 + ROW_SUM_TOLERANCE).any():
        row = int(np.argwhere((array < 0) | (array > 1 + ROW_SUM_TOLERANCE))[0][0])
        raise RowSumError(f"{owner}: {name} has an entry outside [0,1] in frame {row}")
    sums = array.sum(axis=1, dtype=np.float64)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)
    if bad.size:
        row = int(bad[0])
        raise RowSumError(f"{owner}: {name} frame {row} sums to {sums[row]:.6f}, expected 1")
    return array


@dataclass(frozen=True)
class Segment:
    """One aligned phone, frames [start, end)."""
    phone: PhoneId
    start: int
    end: int

    def __post_init__(self):
        if self.start < 0:
            raise AlignmentError(f"Segment {self.phone} starts at negative frame {self.start}")
        if self.end <= self.start:
            raise AlignmentError(
                f"Segment {self.phone} is empty or reversed: [{self.start}, {self.end})"
            )

    @property
    def n_frames(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class PhoneAlignment:
    """Ordered, non-overlapping phone segments of one utterance."""
    segments: tuple[Segment, ...]
    utt_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for i in range(1, len(self.segments)):
            prev, seg = self.segments[i - 1], self.segments[i]
            if seg.start < prev.end:
                raise AlignmentError(
                    f"{self.utt_id}: segment {i} ({seg.phone} [{seg.start},{seg.end})) overlaps "
                    f"or precedes segment {i - 1} ({prev.phone} [{prev.start},{prev.end}))"
                )

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __getitem__(self, i: int) -> Segment:
        return self.segments[i]

    @property
    def end_frame(self) -> int:
        return self.segments[-1].end if self.segments else 0


@dataclass(frozen=True)
class UtteranceRecord:
    """One utterance: features, posteriorgram, alignment and transcript."""
    utt_id: str
    mfcc: np.ndarray
    deep: np.ndarray
    post: np.ndarray
    align: PhoneAlignment
    text: tuple[str, ...] = ()

    @property
    def n_frames(self) -> int:
        return int(self.mfcc.shape[0])


def validate_utterance(rec: UtteranceRecord) -> UtteranceRecord:
    """Check every core invariant of an utterance record.

    Args:
        rec: The record to check.

    Returns:
        A record whose arrays are validated, read-only numpy arrays.

    Raises:
        DataValidationError: exactly one categorized error naming the
            utterance id and the offending field.
    """
    utt = rec.utt_id or "<no utt_id>"
    mfcc = check_feature_matrix(rec.mfcc, utt, "mfcc")
    deep = check_feature_matrix(rec.deep, utt, "deep")
    post = check_posteriorgram(rec.post, utt, "post")

    n_frames = mfcc.shape[0]
    if deep.shape[0] != n_frames:
        raise DimensionMismatchError(
            f"{utt}: deep has {deep.shape[0]} frames but mfcc has {n_frames}"
        )
    if post.shape[0] != n_frames:
        raise DimensionMismatchError(
            f"{utt}: post has {post.shape[0]} frames but mfcc has {n_frames}"
        )
    if rec.align.end_frame > n_frames:
        raise AlignmentError(
            f"{utt}: align ends at frame {rec.align.end_frame} beyond utterance length {n_frames}"
        )

    return UtteranceRecord(
        utt_id=rec.utt_id,
        mfcc=mfcc,
        deep=deep,
        post=post,
        align=rec.align,
        text=tuple(rec.text),
    )


@dataclass(frozen=True)
class Quadruplet:
    """One pooled phone instance: label, feature slices and GOP."""
    phone: PhoneId
    mfcc_seg: np.ndarray
    deep_seg: np.ndarray
    gop: float

    def __post_init__(self):
        if self.mfcc_seg.ndim != 2 or self.deep_seg.ndim != 2:
            raise DimensionMismatchError(f"Quadruplet {self.phone}: segments must be 2-D")
        if self.mfcc_seg.shape[0] != self.deep_seg.shape[0] or self.mfcc_seg.shape[0] < 1:
            raise DimensionMismatchError(
                f"Quadruplet {self.phone}: mfcc has {self.mfcc_seg.shape[0]} frames, "
                f"deep has {self.deep_seg.shape[0]}"
            )
        if not 0.0 <= self.gop <= 1.0:
            raise ScoreRangeError(f"Quadruplet {self.phone}: gop {self.gop} outside [0,1]")

    @property
    def n_frames(self) -> int:
        return int(self.mfcc_seg.shape[0])


class PhonePoolSet:
    """Per-phone lists of quadruplets.

    Built once (append in corpus order), then only read.
    """

    def __init__(self, inventory: PhoneInventory):
        self.inventory = inventory
        self._pools: dict[PhoneId, list[Quadruplet]] = {}

    def append(self, quad: Quadruplet) -> None:
        if quad.phone not in self.inventory:
            raise UnknownPhoneError(f"Phone {quad.phone} is not in the pool inventory")
        self._pools.setdefault(quad.phone, []).append(quad)

    def pool(self, phone: PhoneId) -> list[Quadruplet]:
        """Return the non-empty pool of a phone or raise EmptyPoolError."""
        items = self._pools.get(phone)
        if not items:
            raise EmptyPoolError(f"No pooled instances for phone {phone}")
        return items

    def __getitem__(self, phone: PhoneId) -> list[Quadruplet]:
        return self.pool(phone)

    def has(self, phone: PhoneId) -> bool:
        return bool(self._pools.get(phone))

    def size(self, phone: PhoneId) -> int:
        return len(self._pools.get(phone, ()))

    def phones(self) -> list[PhoneId]:
        """Phones with a non-empty pool, in inventory order."""
        return [p for p in self.inventory if self._pools.get(p)]

    def __len__(self) -> int:
        return sum(len(v) for v in self._pools.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhonePoolSet) or self.inventory != other.inventory:
            return False
        for phone in self.inventory:
            mine, theirs = self._pools.get(phone, []), other._pools.get(phone, [])
            if len(mine) != len(theirs):
                return False
            for a, b in zip(mine, theirs):
                if a.gop != b.gop or not np.array_equal(a.mfcc_seg, b.mfcc_seg) \
                        or not np.array_equal(a.deep_seg, b.deep_seg):
                    return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class LexiconEntry:
    phones: tuple[PhoneId, ...]
    frequency: int


class Lexicon:
    """Word -> (canonical phone sequence, training-set frequency).

    One pronunciation per word.
    """

    def __init__(self, entries: dict[str, LexiconEntry]):
        for word, entry in entries.items():
            if not word:
                raise EmptyLexiconError("Lexicon word must be non-empty")
            if not entry.phones:
                raise EmptyLexiconError(f"Lexicon word {word!r} has an empty phone sequence")
            if entry.frequency < 1:
                raise ScoreRangeError(f"Lexicon word {word!r} has frequency {entry.frequency} < 1")
        self.entries = dict(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __getitem__(self, word: str) -> LexiconEntry:
        try:
            return self.entries[word]
        except KeyError:
            raise UnknownPhoneError(f"Word {word!r} is not in the lexicon") from None

    def __eq__(self, other) -> bool:
        return isinstance(other, Lexicon) and self.entries == other.entries

    __hash__ = None

    @cached_property
    def words(self) -> tuple[str, ...]:
        return tuple(self.entries)

    @cached_property
    def cumulative_frequencies(self) -> np.ndarray:
        """Running sum of frequencies in insertion order (for weighted draws)."""
        return np.cumsum([e.frequency for e in self.entries.values()], dtype=np.float64)

    def restricted_to(self, words: Iterable[str]) -> "Lexicon":
        keep = set(words)
        return Lexicon({w: e for w, e in self.entries.items() if w in keep})


class Provenance(str, Enum):
    """Where a word sample's target came from."""
    REAL_UNLABELED = "real_unlabeled"
    MIXUP = "mixup"
    HUMAN_LABELED = "human_labeled"


def run_lengths(phones_per_frame) -> list[tuple[PhoneId, int]]:
    """Collapse a per-frame phone list into (phone, run length) pairs."""
    runs: list[tuple[PhoneId, int]] = []
    for phone in phones_per_frame:
        if runs and runs[-1][0] == phone:
            runs[-1] = (phone, runs[-1][1] + 1)
        else:
            runs.append((phone, 1))
    return runs


@dataclass(frozen=True)
class WordSample:
    """A scorer example: per-frame features and phones plus a target in [0,1].

    ``segment_lengths`` holds the frame count of each canonical phone so the
    phone sequence survives repeated adjacent phones; it defaults to the run
    lengths of ``phones_per_frame``.
    """
    word: str
    phones_per_frame: tuple[PhoneId, ...]
    mfcc: np.ndarray
    deep: np.ndarray
    target: float
    provenance: Provenance
    utt_id: str = ""
    word_index: int = -1
    segment_lengths: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "phones_per_frame", tuple(self.phones_per_frame))
        n_frames = len(self.phones_per_frame)
        owner = f"{self.utt_id or self.provenance.value}:{self.word}"
        if n_frames < 1:
            raise DimensionMismatchError(f"{owner}: word sample has no frames")
        if self.mfcc.shape[0] != n_frames or self.deep.shape[0] != n_frames:
            raise DimensionMismatchError(
                f"{owner}: phones_per_frame has {n_frames} frames, mfcc {self.mfcc.shape[0]}, "
                f"deep {self.deep.shape[0]}"
            )
        if not 0.0 <= self.target <= 1.0:
            raise ScoreRangeError(f"{owner}: target {self.target} outside [0,1]")
        if not self.segment_lengths:
            lengths = tuple(n for _, n in run_lengths(self.phones_per_frame))
            object.__setattr__(self, "segment_lengths", lengths)
        elif min(self.segment_lengths) < 1:
            raise DimensionMismatchError(f"{owner}: zero-length segment in {self.segment_lengths}")
        elif sum(self.segment_lengths) != n_frames:
            raise DimensionMismatchError(
                f"{owner}: segment lengths sum to {sum(self.segment_lengths)}, expected {n_frames}"
            )

    @property
    def n_frames(self) -> int:
        return len(self.phones_per_frame)

    @cached_property
    def phone_indices(self) -> np.ndarray:
        return freeze(np.fromiter((p.index for p in self.phones_per_frame), dtype=np.int64,
                                  count=self.n_frames))

    def phones(self) -> list[PhoneId]:
        """Canonical phone sequence recovered from the per-frame phones."""
        result = []
        offset = 0
        for n in self.segment_lengths:
            result.append(self.phones_per_frame[offset])
            offset += n
        return result


def sort_key(sample: WordSample) -> tuple[str, int, str]:
    """Reproducible ordering by utterance id and word position."""
    return (sample.utt_id, sample.word_index, sample.word)


def find_phone(inventory: PhoneInventory, symbol: str, context: Optional[str] = None) -> PhoneId:
    """Look a symbol up in the inventory, naming ``context`` on failure."""
    try:
        return inventory[symbol]
    except UnknownPhoneError:
        where = f"{context}: " if context else ""
        raise UnknownPhoneError(f"{where}unknown phone symbol {symbol!r}") from None
