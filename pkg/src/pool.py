"""Per-phoneme pools of (phone, MFCC slice, deep slice, GOP) quadruplets."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import PhoneId, PhoneInventory, PhonePoolSet, Quadruplet, UtteranceRecord, freeze
from .errors import DataValidationError, EmptyPoolError
from .gop import GopVariant, PhoneClassMap, utterance_gops

logger = logging.getLogger(__name__)

LONG_SEGMENT_FRAMES = 200


def utterance_quadruplets(rec: UtteranceRecord, class_map: PhoneClassMap,
                          variant: GopVariant = GopVariant.MEAN_POSTERIOR) -> list[Quadruplet]:
    """One quadruplet per alignment segment; feature slices are copies."""
    result = []
    for item in utterance_gops(rec, class_map, variant):
        seg = item.segment
        try:
            result.append(Quadruplet(
                phone=seg.phone,
                mfcc_seg=freeze(np.array(rec.mfcc[seg.start:seg.end])),
                deep_seg=freeze(np.array(rec.deep[seg.start:seg.end])),
                gop=item.gop,
            ))
        except DataValidationError as e:
            raise type(e)(f"{rec.utt_id}: segment {item.index}: {e}") from e
    return result


def build_pool(corpus: Iterable[UtteranceRecord], class_map: PhoneClassMap,
               inventory: PhoneInventory,
               variant: GopVariant = GopVariant.MEAN_POSTERIOR,
               workers: int = 1) -> PhonePoolSet:
    """Harvest every aligned phone of a corpus into per-phone pools.

    Args:
        corpus: Validated utterance records.
        class_map: Phone to posterior-class map.
        inventory: Phone inventory of the pool.
        variant: GOP variant.
        workers: Utterances are processed by up to this many threads; results
            are merged in corpus order so the pool is identical for any count.

    Returns:
        The populated PhonePoolSet.
    """
    pools = PhonePoolSet(inventory)
    n_utts = 0

    def harvest(rec: UtteranceRecord) -> list[Quadruplet]:
        return utterance_quadruplets(rec, class_map, variant)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            batches = executor.map(harvest, corpus)
            for quads in batches:
                for q in quads:
                    pools.append(q)
                n_utts += 1
    else:
        for rec in corpus:
            for q in harvest(rec):
                pools.append(q)
            n_utts += 1

    logger.info("Built pools for %d phones from %d utterances (%d instances)",
                len(pools.phones()), n_utts, len(pools))
    return pools


def sample_quadruplet(pools: PhonePoolSet, phone: PhoneId, rng: np.random.Generator) -> Quadruplet:
    """Draw one quadruplet uniformly (with replacement) from a phone's pool."""
    items = pools.pool(phone)
    return items[int(rng.integers(len(items)))]


@dataclass(frozen=True)
class PoolStats:
    phone: PhoneId
    count: int
    mean_gop: float
    mean_duration: float
    long_segments: int


def pool_stats(pools: PhonePoolSet) -> list[PoolStats]:
    """Per-phone count, mean GOP and mean duration (frames), inventory order.

    Phones without instances are reported with count 0. Segments longer than
    200 frames are counted in ``long_segments`` but kept in the pool.
    """
    report = []
    for phone in pools.inventory:
        if not pools.has(phone):
            report.append(PoolStats(phone, 0, 0.0, 0.0, 0))
            continue
        items = pools.pool(phone)
        gops = np.array([q.gop for q in items], dtype=np.float64)
        frames = np.array([q.n_frames for q in items], dtype=np.float64)
        long_count = int((frames > LONG_SEGMENT_FRAMES).sum())
        if long_count:
            logger.warning("Phone %s has %d segments longer than %d frames",
                           phone, long_count, LONG_SEGMENT_FRAMES)
        report.append(PoolStats(phone, len(items), float(gops.mean()), float(frames.mean()), long_count))
    return report


def require_pool(pools: PhonePoolSet, phones: Iterable[PhoneId]) -> None:
    """Raise EmptyPoolError naming the first phone without pooled instances."""
    for phone in phones:
        if not pools.has(phone):
            raise EmptyPoolError(f"No pooled instances for phone {phone}")
