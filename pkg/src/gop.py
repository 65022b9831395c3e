"""Goodness-of-pronunciation scores from posteriorgrams and alignments.

A phone's GOP is the mean, over its aligned frames, of the posterior mass the
acoustic model puts on that phone's classes. The word GOP is the unweighted
mean of its phone GOPs.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .core import PhoneId, Segment, UtteranceRecord
from .errors import AlignmentError, DimensionMismatchError, ScoreRangeError, UnknownPhoneError

logger = logging.getLogger(__name__)

POSTERIOR_FLOOR = 1e-8


class GopVariant(str, Enum):
    MEAN_POSTERIOR = "mean_posterior"
    LOG_MEAN = "log_mean"


class PhoneClassMap:
    """Phone -> set of posterior-class indices."""

    def __init__(self, classes: Mapping[PhoneId, Iterable[int]]):
        self._classes: dict[PhoneId, np.ndarray] = {}
        for phone, indices in classes.items():
            arr = np.array(sorted(set(int(i) for i in indices)), dtype=np.int64)
            if arr.size == 0:
                raise UnknownPhoneError(f"Phone {phone} has an empty class set")
            if arr[0] < 0:
                raise DimensionMismatchError(f"Phone {phone} has a negative class index")
            arr.flags.writeable = False
            self._classes[phone] = arr

    def classes(self, phone: PhoneId) -> np.ndarray:
        try:
            return self._classes[phone]
        except KeyError:
            raise UnknownPhoneError(f"Phone {phone} is not in the phone-class map") from None

    def __contains__(self, phone: PhoneId) -> bool:
        return phone in self._classes

    def __len__(self) -> int:
        return len(self._classes)

    def phones(self) -> list[PhoneId]:
        return list(self._classes)

    @property
    def max_class(self) -> int:
        return max((int(c[-1]) for c in self._classes.values()), default=-1)

    def check_classes(self, n_classes: int, owner: str = "") -> None:
        """Raise if any class index does not exist in a C-class posteriorgram."""
        if self.max_class >= n_classes:
            where = f"{owner}: " if owner else ""
            raise DimensionMismatchError(
                f"{where}phone-class map references class {self.max_class} "
                f"but the posteriorgram has {n_classes} classes"
            )


def phone_frame_posterior(post: np.ndarray, class_map: PhoneClassMap,
                          phone: PhoneId, frame: int) -> float:
    """Posterior mass on a phone's classes at one frame, clamped to [0,1]."""
    classes = class_map.classes(phone)
    if not 0 <= frame < post.shape[0]:
        raise AlignmentError(f"Frame {frame} out of range for posteriorgram with {post.shape[0]} frames")
    class_map.check_classes(post.shape[1])
    value = float(np.sum(post[frame, classes], dtype=np.float64))
    return min(max(value, 0.0), 1.0)


def frame_posteriors(post: np.ndarray, class_map: PhoneClassMap, segment: Segment) -> np.ndarray:
    """Clamped per-frame phone posteriors over a segment, in float64."""
    classes = class_map.classes(segment.phone)
    if segment.end > post.shape[0]:
        raise AlignmentError(
            f"Segment {segment.phone} [{segment.start},{segment.end}) exceeds "
            f"{post.shape[0]} posterior frames"
        )
    class_map.check_classes(post.shape[1])
    mass = post[segment.start:segment.end][:, classes].sum(axis=1, dtype=np.float64)
    return np.clip(mass, 0.0, 1.0)


def phone_gop(post: np.ndarray, class_map: PhoneClassMap, segment: Segment,
              variant: GopVariant = GopVariant.MEAN_POSTERIOR) -> float:
    """GOP of one aligned phone.

    Args:
        post: T x C posteriorgram.
        class_map: Phone to class-set map.
        segment: The aligned phone, frames [start, end).
        variant: ``mean_posterior`` (arithmetic mean) or ``log_mean``
            (exp of the mean log posterior, floored at 1e-8).

    Returns:
        GOP in [0,1].
    """
    mass = frame_posteriors(post, class_map, segment)
    if GopVariant(variant) is GopVariant.LOG_MEAN:
        value = float(np.exp(np.mean(np.log(np.maximum(mass, POSTERIOR_FLOOR)))))
    else:
        value = float(np.mean(mass))
    return min(max(value, 0.0), 1.0)


def word_gop(phone_gops) -> float:
    """Unweighted mean of a word's phone GOPs."""
    values = np.asarray(list(phone_gops), dtype=np.float64)
    if values.size == 0:
        raise ScoreRangeError("word_gop needs at least one phone GOP")
    if (values < 0).any() or (values > 1).any():
        raise ScoreRangeError(f"Phone GOPs must lie in [0,1], got {values.tolist()}")
    value = float(values.mean())
    # The mean of values in [lo, hi] can round one ulp outside the range.
    return min(max(value, float(values.min())), float(values.max()))


@dataclass(frozen=True)
class SegmentGop:
    index: int
    segment: Segment
    gop: float


def utterance_gops(rec: UtteranceRecord, class_map: PhoneClassMap,
                   variant: GopVariant = GopVariant.MEAN_POSTERIOR) -> list[SegmentGop]:
    """One GOP per alignment segment of a validated utterance, in order."""
    result = []
    for i, segment in enumerate(rec.align):
        if segment.phone not in class_map:
            raise UnknownPhoneError(
                f"{rec.utt_id}: segment {i} phone {segment.phone} is not in the phone-class map"
            )
        try:
            gop = phone_gop(rec.post, class_map, segment, variant)
        except (AlignmentError, DimensionMismatchError) as e:
            raise type(e)(f"{rec.utt_id}: segment {i}: {e}") from e
        result.append(SegmentGop(i, segment, gop))
    return result
