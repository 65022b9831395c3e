"""Pretrain/fine-tune comparisons and augmentation-size sweeps.

Three systems are compared, all fine-tuned on human labels and scored by
test-set PCC:

    no-pretrain      fine-tune from a fresh model
    real-pretrain    pretrain on real unlabeled words (word-GOP targets) first
    mixup-pretrain   pretrain on real unlabeled + mixup words first
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import Lexicon, PhoneInventory, PhonePoolSet, Provenance, UtteranceRecord, WordSample
from .errors import ConfigError, DegenerateCorrelationError, EmptyDatasetError
from .evaluation import SweepPoint, evaluate
from .gop import GopVariant, PhoneClassMap
from .mixup import generate_dataset, mix_pretrain_corpus
from .pool import build_pool
from .samples import corpus_word_samples
from .scorer import ScorerConfig, init_model
from .trainer import TargetField, train

logger = logging.getLogger(__name__)

SYSTEMS = ("no-pretrain", "real-pretrain", "mixup-pretrain")
COMPARISON_COLUMNS = ("system", "real_size", "n_mixup", "seed", "pcc")


@dataclass
class ExperimentData:
    """Everything one experiment needs, already validated."""
    real: list[WordSample]
    train: list[WordSample]
    test: list[WordSample]
    pools: PhonePoolSet
    lexicon: Lexicon

    def __post_init__(self):
        for name, allowed in (("real", Provenance.REAL_UNLABELED),
                              ("train", Provenance.HUMAN_LABELED),
                              ("test", Provenance.HUMAN_LABELED)):
            samples = getattr(self, name)
            if not samples:
                raise EmptyDatasetError(f"Experiment {name} set is empty")
            bad = next((s for s in samples if s.provenance is not allowed), None)
            if bad is not None:
                raise ConfigError(
                    f"Experiment {name} set must be {allowed.value}, found {bad.provenance.value}"
                )

    @property
    def inventory(self) -> PhoneInventory:
        return self.pools.inventory


def data_from_records(unlabeled: Sequence[UtteranceRecord], train_records: Sequence[UtteranceRecord],
                      test_records: Sequence[UtteranceRecord], lexicon: Lexicon,
                      class_map: PhoneClassMap, inventory: PhoneInventory, labels: dict,
                      variant: GopVariant = GopVariant.MEAN_POSTERIOR,
                      workers: int = 1) -> ExperimentData:
    """Pools and real words from the unlabeled utterances, human-labeled words
    from the train and test utterances."""
    unlabeled = list(unlabeled)
    pools = build_pool(unlabeled, class_map, inventory, variant, workers)
    return ExperimentData(
        real=corpus_word_samples(unlabeled, lexicon, class_map, Provenance.REAL_UNLABELED, variant=variant),
        train=corpus_word_samples(train_records, lexicon, class_map, Provenance.HUMAN_LABELED, labels, variant),
        test=corpus_word_samples(test_records, lexicon, class_map, Provenance.HUMAN_LABELED, labels, variant),
        pools=pools,
        lexicon=lexicon,
    )


@dataclass
class SystemResult:
    system: str
    seed: int
    real_size: int
    n_mixup: int
    pcc: float
    pretrain_curve: list[float] = field(default_factory=list)
    finetune_curve: list[float] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return math.isnan(self.pcc)


def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent init / pretrain / mixup-shuffle / fine-tune streams."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))


def run_system(system: str, data: ExperimentData, cfg: ScorerConfig, seed: int,
               n_mixup: int = 0, real: Optional[Sequence[WordSample]] = None) -> SystemResult:
    """Train and score one system for one seed.

    Args:
        system: One of ``SYSTEMS``.
        data: Experiment data.
        cfg: Scorer configuration; ``n_phones`` is taken from the pool inventory.
        seed: Seed for initialization, shuffling, dropout and mixup generation.
        n_mixup: Mixup words added for ``mixup-pretrain``.
        real: Real pretraining words (defaults to ``data.real``).

    Returns:
        SystemResult; a constant-prediction model is reported with a NaN PCC.
    """
    if system not in SYSTEMS:
        raise ConfigError(f"Unknown system {system!r}; expected one of {SYSTEMS}")
    if system == "mixup-pretrain" and n_mixup < 1:
        raise ConfigError("mixup-pretrain needs n_mixup >= 1")
    real = list(data.real if real is None else real)
    cfg = replace(cfg, n_phones=len(data.inventory), seed=seed).validate()
    init_rng, pretrain_rng, shuffle_rng, finetune_rng = _streams(seed)

    model = init_model(cfg, init_rng)
    pretrain_curve: list[float] = []
    if system != "no-pretrain":
        corpus = real
        if system == "mixup-pretrain":
            mixed, _ = generate_dataset(data.pools, data.lexicon, n_mixup, seed)
            corpus = mix_pretrain_corpus(real, mixed, shuffle_rng)
        result = train(model, corpus, cfg, TargetField.GOP, pretrain_rng)
        model, pretrain_curve = result.model, result.loss_curve
    result = train(model, data.train, cfg, TargetField.HUMAN, finetune_rng)

    try:
        pcc = evaluate(result.model, data.test).pcc
    except DegenerateCorrelationError as e:
        logger.warning("%s seed %d: degenerate model (%s)", system, seed, e)
        pcc = float("nan")
    used_mixup = n_mixup if system == "mixup-pretrain" else 0
    real_size = len(real) if system != "no-pretrain" else 0
    logger.info("%s (real %d, mixup %d) seed %d: PCC %.4f", system, real_size, used_mixup, seed, pcc)
    return SystemResult(system, seed, real_size, used_mixup, pcc, pretrain_curve, result.loss_curve)


def subsample(samples: Sequence[WordSample], size: int, seed: int) -> list[WordSample]:
    """Seeded subset of ``size`` samples, kept in input order."""
    if not 1 <= size <= len(samples):
        raise ConfigError(f"Cannot take {size} of {len(samples)} samples")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(size,)))
    keep = np.sort(rng.choice(len(samples), size=size, replace=False))
    return [samples[i] for i in keep]


def run_comparison(data: ExperimentData, cfg: ScorerConfig, seeds: Sequence[int], n_mixup: int,
                   real_sizes: Optional[Sequence[int]] = None) -> list[SystemResult]:
    """All three systems for every seed, plus optional real-pretrain scaling rows.

    ``real_sizes`` adds real-pretrain runs on seeded subsets of the real
    unlabeled set (sizes equal to the full set are skipped as duplicates).
    """
    if not seeds:
        raise ConfigError("run_comparison needs at least one seed")
    results = []
    for seed in seeds:
        for system in SYSTEMS:
            results.append(run_system(system, data, cfg, seed, n_mixup))
        for size in real_sizes or ():
            if size == len(data.real):
                continue
            results.append(run_system("real-pretrain", data, cfg, seed,
                                      real=subsample(data.real, size, seed)))
    return results


def seed_means(results: Sequence[SystemResult]) -> dict[tuple[str, int, int], float]:
    """Mean PCC over seeds per (system, real_size, n_mixup); degenerate runs excluded."""
    grouped: dict[tuple[str, int, int], list[float]] = {}
    for r in results:
        grouped.setdefault((r.system, r.real_size, r.n_mixup), [])
        if not r.degenerate:
            grouped[(r.system, r.real_size, r.n_mixup)].append(r.pcc)
    return {k: (float(np.mean(v)) if v else float("nan")) for k, v in grouped.items()}


def write_comparison_csv(results: Sequence[SystemResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for r in results:
            writer.writerow([r.system, r.real_size, r.n_mixup, r.seed, repr(float(r.pcc))])


def run_sweep(data: ExperimentData, sizes: Sequence[int], feature_sets: Sequence[str],
              cfg: ScorerConfig, seed: int) -> list[SweepPoint]:
    """PCC against pretraining-set size for each feature set.

    A size counts real plus mixup words; the size equal to the real set is the
    no-mixup point.
    """
    n_real = len(data.real)
    for size in sizes:
        if size < n_real:
            raise ConfigError(f"Sweep size {size} is smaller than the {n_real} real pretraining words")
    points = []
    for feature_set in feature_sets:
        fs_cfg = replace(cfg, feature_set=feature_set)
        for size in sizes:
            n_mixup = size - n_real
            system = "mixup-pretrain" if n_mixup else "real-pretrain"
            result = run_system(system, data, fs_cfg, seed, n_mixup)
            points.append(SweepPoint(size, feature_set, result.pcc))
    return points
