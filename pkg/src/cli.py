"""Command-line front end.

Each subcommand is one pipeline phase; every run writes ``<out>.run.json``
recording the command, its arguments, seeds, input hashes and outputs.

Exit codes: 0 ok, 2 usage, 3 data validation, 4 numeric failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import PhoneInventory, Provenance, WordSample
from .data_io import (
    CorpusLoader,
    file_sha256,
    read_checkpoint,
    read_ctm_alignment,
    read_dataset,
    read_labels,
    read_lexicon,
    read_manifest,
    read_phone_class_map,
    read_pool,
    resolve_path,
    write_alignment,
    write_checkpoint,
    write_dataset,
    write_json,
    write_pool,
)
from .errors import ConfigError, DataValidationError, GopMixupError
from .evaluation import evaluate, sweep_report, sweep_table, write_predictions_report
from .experiment import (
    SYSTEMS,
    ExperimentData,
    run_comparison,
    run_sweep,
    seed_means,
    write_comparison_csv,
)
from .gop import GopVariant, utterance_gops
from .mixup import generate_dataset, mix_pretrain_corpus
from .pool import build_pool, pool_stats
from .samples import corpus_word_samples
from .scorer import FEATURE_SETS, ScorerConfig, ScorerModel, init_model
from .synth import SynthSpec, generate_corpus
from .trainer import TargetField, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2

# Fields a fine-tune run may change on a loaded checkpoint.
TRAINING_FIELDS = (
    "learning_rate", "beta1", "beta2", "adam_eps", "batch_size", "pretrain_epochs",
    "finetune_epochs", "valid_fraction", "dropout_p", "bn_momentum", "seed",
)

FLAG_DEFAULTS = {
    "seed": 0,
    "variant": GopVariant.MEAN_POSTERIOR.value,
    "hop": 0.010,
    "feature_sets": list(FEATURE_SETS),
    "seeds": [0, 1, 2, 3, 4],
    "n_mixup": 0,
}


def parse_size(text: str) -> int:
    """'50k' -> 50000, '1.5m' -> 1500000, '300' -> 300."""
    text = text.strip().lower()
    scale = {"k": 1_000, "m": 1_000_000}.get(text[-1:], 1)
    number = text[:-1] if scale != 1 else text
    try:
        value = float(number) * scale
    except ValueError:
        raise ConfigError(f"Not a size: {text!r}") from None
    if value != int(value) or value < 0:
        raise ConfigError(f"Not a whole non-negative size: {text!r}")
    return int(value)


def parse_list(text: str, convert=str) -> list:
    return [convert(item) for item in text.split(",") if item.strip()]


def size_list(text: str) -> list[int]:
    return parse_list(text, parse_size)


def int_list(text: str) -> list[int]:
    return parse_list(text, int)


def feature_set_list(text: str) -> list[str]:
    names = parse_list(text)
    for name in names:
        if name not in FEATURE_SETS:
            raise ConfigError(f"Unknown feature set {name!r}; expected one of {FEATURE_SETS}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phone-mixup",
        description="Phone-level mixup augmentation for word pronunciation scoring.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s synth --out corpus
  %(prog)s build-pool --manifest corpus/unlabeled.jsonl --phone-map corpus/phone_map.tsv --out pool.gmpl
  %(prog)s mixup --pool pool.gmpl --lexicon corpus/lexicon.tsv --n 18000 --out mixup.gmds
  %(prog)s compare --real real.gmds --pool pool.gmpl --lexicon corpus/lexicon.tsv \\
      --train train.gmds --test test.gmds --n-mixup 18000 --out-csv compare.csv
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--workers", type=int, default=None, help="Thread cap (default: 1)")
    parser.add_argument("--config", help="Flat JSON file with flag values and scorer settings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic corpus")
    p.add_argument("--spec", help="SynthSpec JSON file (default: built-in desk-scale spec)")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--seed", type=int, help="Override the generator seed")

    p = sub.add_parser("convert-ctm", help="Convert a CTM phone alignment to frame indices")
    p.add_argument("--ctm", required=True)
    p.add_argument("--phone-map", required=True)
    p.add_argument("--hop", type=float, help="Frame hop in seconds (default: 0.010)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gop", help="Dump per-phone (and per-word) GOPs")
    _corpus_args(p)
    p.add_argument("--lexicon", help="Also dump word GOPs (needs transcripts)")
    p.add_argument("--out", required=True, help="Phone GOP TSV")
    p.add_argument("--words-out", help="Word GOP TSV (default: <out>.words.tsv)")

    p = sub.add_parser("extract-words", help="Cut a corpus into a word-sample dataset")
    _corpus_args(p)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--labels", help="Human labels; makes the samples HUMAN_LABELED")
    p.add_argument("--out", required=True, help="Dataset file")

    p = sub.add_parser("build-pool", help="Materialize per-phone pools")
    _corpus_args(p)
    p.add_argument("--out", required=True, help="Pool file")

    p = sub.add_parser("mixup", help="Generate a mixup dataset")
    p.add_argument("--pool", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--n", type=parse_size, required=True, help="Number of words (accepts 450k)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="Dataset file")

    p = sub.add_parser("pretrain", help="Train on word-GOP targets")
    p.add_argument("--real", required=True, help="REAL_UNLABELED dataset file")
    p.add_argument("--mixup", help="MIXUP dataset file")
    p.add_argument("--init-ckpt", help="Continue from a checkpoint")
    _training_args(p)
    p.add_argument("--out-ckpt", required=True)

    p = sub.add_parser("finetune", help="Train on human targets (no --ckpt = no-pretrain)")
    p.add_argument("--ckpt", help="Pretrained checkpoint")
    _labeled_args(p, "train")
    _training_args(p)
    p.add_argument("--out-ckpt", required=True)

    p = sub.add_parser("eval", help="PCC and per-word predictions")
    p.add_argument("--ckpt", required=True)
    _labeled_args(p, "test")
    p.add_argument("--report", required=True, help="Predictions CSV")

    for name, help_text in (("sweep", "PCC against pretraining-set size"),
                            ("compare", "No-pretrain / real-pretrain / mixup-pretrain comparison")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--real", required=True, help="REAL_UNLABELED dataset file")
        p.add_argument("--pool", required=True)
        p.add_argument("--lexicon", required=True)
        p.add_argument("--train", required=True, help="HUMAN_LABELED train dataset file")
        p.add_argument("--test", required=True, help="HUMAN_LABELED test dataset file")
        _training_args(p)
        p.add_argument("--out-csv", required=True)
    sweep, compare = sub.choices["sweep"], sub.choices["compare"]
    sweep.add_argument("--sizes", type=size_list, required=True,
                       help="Comma list of real+mixup sizes, e.g. 2k,5k,20k")
    sweep.add_argument("--feature-sets", type=feature_set_list,
                       help="Comma list of mfcc,deep,multi (default: all)")
    compare.add_argument("--seeds", type=int_list, help="Comma list of seeds (default: 0,1,2,3,4)")
    compare.add_argument("--n-mixup", type=parse_size, help="Mixup words for mixup-pretrain")
    compare.add_argument("--real-sizes", type=size_list, help="Extra real-pretrain sizes, comma list")
    return parser


def _corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="Corpus manifest (JSON lines)")
    p.add_argument("--phone-map", required=True, help="Phone-class map TSV")
    p.add_argument("--variant", choices=[v.value for v in GopVariant],
                   help="GOP variant (default: mean_posterior)")


def _labeled_args(p: argparse.ArgumentParser, part: str) -> None:
    p.add_argument(f"--{part}", help=f"HUMAN_LABELED {part} dataset file")
    p.add_argument(f"--{part}-manifest", help=f"{part} corpus manifest (instead of a dataset file)")
    p.add_argument(f"--{part}-labels", help=f"{part} human labels TSV")
    p.add_argument("--phone-map", help="Phone-class map (with a manifest)")
    p.add_argument("--lexicon", help="Lexicon (with a manifest)")
    p.add_argument("--variant", choices=[v.value for v in GopVariant])


def _training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="Epochs of this phase")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--feature-set", choices=FEATURE_SETS)


# ---------------------------------------------------------------------------
# Configuration

class RunContext:
    """Parsed flags merged with the JSON config, plus the run ledger."""

    def __init__(self, args: argparse.Namespace, argv: list[str],
                 flag_actions: Optional[dict[str, argparse.Action]] = None):
        self.args = args
        self.flag_actions = flag_actions or {}
        self.argv = argv
        self.scorer_overrides: dict = {}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self._merge_config()

    def _merge_config(self) -> None:
        file_values = {}
        if self.args.config:
            path = resolve_path(self.args.config)
            try:
                file_values = json.loads(Path(path).read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError(f"Config file not found: {path}") from None
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e.msg})") from None
            if not isinstance(file_values, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            self.record_input(path)
        scorer_fields = {f.name for f in fields(ScorerConfig)}
        for key, value in file_values.items():
            name = key.replace("-", "_")
            if hasattr(self.args, name):
                if getattr(self.args, name) is None:
                    setattr(self.args, name, self._convert(key, name, value))
            elif name in scorer_fields:
                self.scorer_overrides[name] = value
            elif name in self.flag_actions:
                logger.debug("Config key %s does not apply to %s", key, self.args.command)
            else:
                raise ConfigError(f"Unknown config key {key!r}")
        self.explicit = {k for k, v in vars(self.args).items() if v is not None}
        for name, value in FLAG_DEFAULTS.items():
            if getattr(self.args, name, "absent") is None:
                setattr(self.args, name, value)
        if self.args.workers is None:
            self.args.workers = 1

    def _convert(self, key: str, name: str, value):
        """Apply the flag's own type and choices to a config-file value."""
        action = self.flag_actions.get(name)
        if action is None or value is None:
            return value
        if action.type is not None:
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool) or not isinstance(value, (str, int, float)):
                raise ConfigError(f"Config key {key!r}: unsupported value {value!r}")
            try:
                value = action.type(str(value))
            except (ValueError, TypeError, argparse.ArgumentTypeError) as e:
                raise ConfigError(f"Config key {key!r}: {e}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"Config key {key!r}: {value!r} is not one of {sorted(action.choices)}")
        return value

    def path(self, name: str) -> Optional[Path]:
        value = getattr(self.args, name, None)
        return resolve_path(value) if value else None

    def record_input(self, path: Path) -> None:
        p = Path(path)
        self.inputs[str(path)] = file_sha256(p) if p.is_file() else ("directory" if p.is_dir() else "missing")

    def record_output(self, path) -> None:
        self.outputs.append(str(path))

    def scorer_config(self, **data_dims) -> ScorerConfig:
        """Defaults < config file < flags < dimensions taken from the data."""
        values = dict(self.scorer_overrides)
        a = self.args
        if a.batch_size is not None:
            values["batch_size"] = a.batch_size
        if a.learning_rate is not None:
            values["learning_rate"] = a.learning_rate
        if a.feature_set is not None:
            values["feature_set"] = a.feature_set
        if a.epochs is not None:
            values["pretrain_epochs"] = values["finetune_epochs"] = a.epochs
        values["seed"] = a.seed
        values.update(data_dims)
        try:
            return ScorerConfig.from_dict(values).validate()
        except TypeError as e:
            raise ConfigError(f"Bad scorer setting: {e}") from None

    def write_manifest(self, out) -> Path:
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "seed": getattr(self.args, "seed", None),
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        manifest.update(self.extra)
        path = Path(f"{out}.run.json")
        write_json(manifest, path)
        return path


def _variant(ctx: RunContext) -> GopVariant:
    return GopVariant(ctx.args.variant or GopVariant.MEAN_POSTERIOR.value)


def _load_corpus(ctx: RunContext, manifest_path: Path, phone_map: Path):
    ctx.record_input(manifest_path)
    ctx.record_input(phone_map)
    inventory, class_map = read_phone_class_map(phone_map)
    descriptors = read_manifest(manifest_path)
    loader = CorpusLoader(inventory)
    return inventory, class_map, loader.iter_records(descriptors)


def _load_dataset(ctx: RunContext, path: Path, allowed: set[Provenance]):
    ctx.record_input(path)
    samples, inventory = read_dataset(path)
    bad = next((s for s in samples if s.provenance not in allowed), None)
    if bad is not None:
        raise DataValidationError(f"{path}: unexpected {bad.provenance.value} sample")
    return samples, inventory


def _labeled_samples(ctx: RunContext, part: str) -> tuple[list[WordSample], PhoneInventory]:
    """Human-labeled words from a dataset file or from manifest + labels."""
    dataset = ctx.path(part)
    if dataset:
        return _load_dataset(ctx, dataset, {Provenance.HUMAN_LABELED})
    manifest = ctx.path(f"{part}_manifest")
    labels_path = ctx.path(f"{part}_labels")
    phone_map, lexicon_path = ctx.path("phone_map"), ctx.path("lexicon")
    if not (manifest and labels_path and phone_map and lexicon_path):
        raise ConfigError(
            f"Give --{part} DATASET, or --{part}-manifest with --{part}-labels, --phone-map and --lexicon"
        )
    inventory, class_map, records = _load_corpus(ctx, manifest, phone_map)
    ctx.record_input(labels_path)
    ctx.record_input(lexicon_path)
    lexicon = read_lexicon(lexicon_path, inventory)
    labels = read_labels(labels_path)
    samples = corpus_word_samples(records, lexicon, class_map, Provenance.HUMAN_LABELED, labels, _variant(ctx))
    return samples, inventory


def _dims(samples: list[WordSample], inventory) -> dict:
    return {"d_mfcc": int(samples[0].mfcc.shape[1]), "d_deep": int(samples[0].deep.shape[1]),
            "n_phones": len(inventory)}


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth(ctx: RunContext) -> Path:
    a = ctx.args
    spec = SynthSpec()
    if a.spec:
        spec_path = resolve_path(a.spec)
        ctx.record_input(spec_path)
        spec = SynthSpec.from_json(spec_path)
    if "seed" in ctx.explicit:
        spec = replace(spec, seed=a.seed)
    ctx.extra["synth_seed"] = spec.seed
    print(f"🔄 Synthesizing {spec.n_utts} utterances (seed {spec.seed})...")
    corpus, paths = generate_corpus(spec, a.out, workers=a.workers)
    for p in paths.values():
        ctx.record_output(p)
    ctx.extra["split"] = {k: len(v) for k, v in
                          (("unlabeled", corpus.split.unlabeled), ("train", corpus.split.train),
                           ("test", corpus.split.test))}
    print(f"✅ Saved: {a.out} ({len(corpus.split.unlabeled)} unlabeled / "
          f"{len(corpus.split.train)} train / {len(corpus.split.test)} test utterances)")
    return Path(a.out)


def cmd_convert_ctm(ctx: RunContext) -> Path:
    a = ctx.args
    ctm, phone_map = ctx.path("ctm"), ctx.path("phone_map")
    ctx.record_input(ctm)
    ctx.record_input(phone_map)
    inventory, _ = read_phone_class_map(phone_map)
    alignments = read_ctm_alignment(ctm, inventory, hop=a.hop)
    write_alignment(alignments, a.out)
    ctx.record_output(a.out)
    print(f"✅ Saved: {a.out} ({len(alignments)} utterances)")
    return Path(a.out)


def cmd_gop(ctx: RunContext) -> Path:
    a = ctx.args
    variant = _variant(ctx)
    inventory, class_map, records = _load_corpus(ctx, ctx.path("manifest"), ctx.path("phone_map"))
    lexicon = None
    if a.lexicon:
        ctx.record_input(ctx.path("lexicon"))
        lexicon = read_lexicon(ctx.path("lexicon"), inventory)
    words_out = Path(a.words_out or f"{a.out}.words.tsv")
    n_phones = n_words = 0
    with open(a.out, "w", encoding="utf-8") as phones_f:
        words_f = open(words_out, "w", encoding="utf-8") if lexicon else None
        try:
            for rec in records:
                for item in utterance_gops(rec, class_map, variant):
                    seg = item.segment
                    phones_f.write(f"{rec.utt_id}\t{item.index}\t{seg.phone.symbol}\t"
                                   f"{seg.start}\t{seg.end}\t{item.gop!r}\n")
                    n_phones += 1
                if words_f:
                    for s in corpus_word_samples([rec], lexicon, class_map,
                                                 Provenance.REAL_UNLABELED, variant=variant):
                        words_f.write(f"{s.utt_id}\t{s.word_index}\t{s.word}\t{s.target!r}\n")
                        n_words += 1
        finally:
            if words_f:
                words_f.close()
    ctx.record_output(a.out)
    if lexicon:
        ctx.record_output(words_out)
    print(f"✅ Saved: {a.out} ({n_phones} phone GOPs" + (f", {n_words} word GOPs)" if lexicon else ")"))
    return Path(a.out)


def cmd_extract_words(ctx: RunContext) -> Path:
    a = ctx.args
    inventory, class_map, records = _load_corpus(ctx, ctx.path("manifest"), ctx.path("phone_map"))
    ctx.record_input(ctx.path("lexicon"))
    lexicon = read_lexicon(ctx.path("lexicon"), inventory)
    labels = None
    provenance = Provenance.REAL_UNLABELED
    if a.labels:
        ctx.record_input(ctx.path("labels"))
        labels = read_labels(ctx.path("labels"))
        provenance = Provenance.HUMAN_LABELED
    samples = corpus_word_samples(records, lexicon, class_map, provenance, labels, _variant(ctx))
    write_dataset(samples, inventory, a.out, manifest={"provenance": provenance.value,
                                                        "variant": _variant(ctx).value,
                                                        "count": len(samples)})
    ctx.record_output(a.out)
    print(f"✅ Saved: {a.out} ({len(samples)} {provenance.value} words)")
    return Path(a.out)


def cmd_build_pool(ctx: RunContext) -> Path:
    a = ctx.args
    inventory, class_map, records = _load_corpus(ctx, ctx.path("manifest"), ctx.path("phone_map"))
    print("🔄 Building phone pools...")
    pools = build_pool(records, class_map, inventory, _variant(ctx), workers=a.workers)
    write_pool(pools, a.out)
    ctx.record_output(a.out)
    stats = pool_stats(pools)
    empty = [s.phone.symbol for s in stats if s.count == 0]
    if a.verbose:
        for s in stats:
            print(f"  {s.phone.symbol:>4}: {s.count:6d} instances, mean GOP {s.mean_gop:.3f}, "
                  f"mean duration {s.mean_duration:.1f} frames")
    print(f"✅ Saved: {a.out} ({len(pools)} instances over {len(pools.phones())} phones)")
    if empty:
        print(f"⚠️  {len(empty)} phones have no instances: {' '.join(empty)}")
    return Path(a.out)


def cmd_mixup(ctx: RunContext) -> Path:
    a = ctx.args
    pool_path, lexicon_path = ctx.path("pool"), ctx.path("lexicon")
    ctx.record_input(pool_path)
    ctx.record_input(lexicon_path)
    pools = read_pool(pool_path)
    lexicon = read_lexicon(lexicon_path, pools.inventory)
    print(f"🔄 Generating {a.n} mixup words (seed {a.seed})...")
    samples, manifest = generate_dataset(pools, lexicon, a.n, a.seed, workers=a.workers)
    write_dataset(samples, pools.inventory, a.out, manifest=manifest.to_dict())
    ctx.record_output(a.out)
    ctx.record_output(f"{a.out}.json")
    ctx.extra["generation"] = manifest.to_dict()
    print(f"✅ Saved: {a.out} ({len(samples)} words, rejection rate {manifest.rejection_rate:.3f})")
    return Path(a.out)


def _save_model(ctx: RunContext, model: ScorerModel, result, out) -> None:
    write_checkpoint(model, out, manifest={
        "seed": ctx.args.seed,
        "inputs": ctx.inputs,
        "loss_curve": result.loss_curve,
        "valid_curve": result.valid_curve,
        "best_epoch": result.best_epoch,
        "steps": result.steps,
    })
    ctx.record_output(out)
    ctx.record_output(f"{out}.json")
    ctx.extra["loss_curve"] = result.loss_curve


def _with_training_settings(model: ScorerModel, cfg: ScorerConfig) -> ScorerModel:
    updates = {name: getattr(cfg, name) for name in TRAINING_FIELDS}
    return ScorerModel(replace(model.config, **updates).validate(), model.params, model.buffers)


def cmd_pretrain(ctx: RunContext) -> Path:
    a = ctx.args
    real, inventory = _load_dataset(ctx, ctx.path("real"), {Provenance.REAL_UNLABELED})
    mixed = []
    if a.mixup:
        mixed, mixup_inventory = _load_dataset(ctx, ctx.path("mixup"), {Provenance.MIXUP})
        if mixup_inventory != inventory:
            raise DataValidationError("Real and mixup datasets use different phone inventories")
    cfg = ctx.scorer_config(**_dims(real, inventory))
    shuffle_rng, init_rng, train_rng = (np.random.default_rng(s)
                                        for s in np.random.SeedSequence(a.seed).spawn(3))
    corpus = mix_pretrain_corpus(real, mixed, shuffle_rng)
    if a.init_ckpt:
        ctx.record_input(ctx.path("init_ckpt"))
        model = _with_training_settings(read_checkpoint(ctx.path("init_ckpt")), cfg)
    else:
        model = init_model(cfg, init_rng)
    print(f"🔄 Pretraining on {len(real)} real + {len(mixed)} mixup words...")
    result = train(model, corpus, model.config, TargetField.GOP, train_rng, epochs=a.epochs)
    _save_model(ctx, result.model, result, a.out_ckpt)
    print(f"✅ Saved: {a.out_ckpt} (final loss {result.loss_curve[-1]:.5f})" if result.loss_curve
          else f"✅ Saved: {a.out_ckpt} (no training epochs)")
    return Path(a.out_ckpt)


def cmd_finetune(ctx: RunContext) -> Path:
    a = ctx.args
    samples, inventory = _labeled_samples(ctx, "train")
    if not samples:
        raise DataValidationError("Fine-tuning set is empty")
    init_rng, train_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(a.seed).spawn(2))
    if a.ckpt:
        ctx.record_input(ctx.path("ckpt"))
        pretrained = read_checkpoint(ctx.path("ckpt"))
        dims = {"d_mfcc": pretrained.config.d_mfcc, "d_deep": pretrained.config.d_deep,
                "n_phones": pretrained.config.n_phones}
        model = _with_training_settings(pretrained, ctx.scorer_config(**dims))
    else:
        model = init_model(ctx.scorer_config(**_dims(samples, inventory)), init_rng)
    print(f"🔄 Fine-tuning on {len(samples)} human-labeled words...")
    result = train(model, samples, model.config, TargetField.HUMAN, train_rng, epochs=a.epochs)
    _save_model(ctx, result.model, result, a.out_ckpt)
    print(f"✅ Saved: {a.out_ckpt}")
    return Path(a.out_ckpt)


def cmd_eval(ctx: RunContext) -> Path:
    a = ctx.args
    ctx.record_input(ctx.path("ckpt"))
    model = read_checkpoint(ctx.path("ckpt"))
    samples, _ = _labeled_samples(ctx, "test")
    result = evaluate(model, samples)
    write_predictions_report(result.rows, a.report)
    ctx.record_output(a.report)
    ctx.extra["pcc"] = result.pcc
    print(f"✅ PCC {result.pcc:.4f} over {len(result.rows)} words; report: {a.report}")
    return Path(a.report)


def _experiment_data(ctx: RunContext) -> ExperimentData:
    real, inventory = _load_dataset(ctx, ctx.path("real"), {Provenance.REAL_UNLABELED})
    train_set, _ = _load_dataset(ctx, ctx.path("train"), {Provenance.HUMAN_LABELED})
    test_set, _ = _load_dataset(ctx, ctx.path("test"), {Provenance.HUMAN_LABELED})
    ctx.record_input(ctx.path("pool"))
    ctx.record_input(ctx.path("lexicon"))
    pools = read_pool(ctx.path("pool"))
    if pools.inventory != inventory:
        raise DataValidationError("Pool and real dataset use different phone inventories")
    lexicon = read_lexicon(ctx.path("lexicon"), pools.inventory)
    return ExperimentData(real, train_set, test_set, pools, lexicon)


def cmd_sweep(ctx: RunContext) -> Path:
    a = ctx.args
    data = _experiment_data(ctx)
    sizes, feature_sets = a.sizes, a.feature_sets
    cfg = ctx.scorer_config(**_dims(data.real, data.inventory))
    print(f"🔄 Sweeping sizes {sizes} over feature sets {feature_sets}...")
    points = sweep_report(run_sweep(data, sizes, feature_sets, cfg, a.seed), a.out_csv)
    ctx.record_output(a.out_csv)
    print(sweep_table(points))
    print(f"✅ Saved: {a.out_csv}")
    return Path(a.out_csv)


def cmd_compare(ctx: RunContext) -> Path:
    a = ctx.args
    data = _experiment_data(ctx)
    seeds = a.seeds
    cfg = ctx.scorer_config(**_dims(data.real, data.inventory))
    print(f"🔄 Comparing {', '.join(SYSTEMS)} over seeds {seeds}...")
    results = run_comparison(data, cfg, seeds, a.n_mixup, a.real_sizes or None)
    write_comparison_csv(results, a.out_csv)
    ctx.record_output(a.out_csv)
    means = seed_means(results)
    for (system, real_size, n_mixup), pcc in sorted(means.items()):
        print(f"  {system:<15} real {real_size:>7} mixup {n_mixup:>7}: mean PCC {pcc:.4f}")
    ctx.extra["seed_means"] = [
        {"system": s, "real_size": r, "n_mixup": m, "pcc": v} for (s, r, m), v in sorted(means.items())
    ]
    degenerate = sum(r.degenerate for r in results)
    if degenerate:
        print(f"⚠️  {degenerate} runs produced a degenerate (constant) model")
    print(f"✅ Saved: {a.out_csv}")
    return Path(a.out_csv)


def flag_actions(parser: argparse.ArgumentParser) -> dict[str, argparse.Action]:
    """Option actions of the parser and its subcommands, keyed by destination."""
    actions = {}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                for dest, sub_action in flag_actions(sub).items():
                    actions.setdefault(dest, sub_action)
        else:
            actions.setdefault(action.dest, action)
    return actions


def flag_names(parser: argparse.ArgumentParser) -> frozenset:
    """Destinations of every option of the parser and its subcommands."""
    return frozenset(flag_actions(parser))


COMMANDS = {
    "synth": (cmd_synth, "out"),
    "convert-ctm": (cmd_convert_ctm, "out"),
    "gop": (cmd_gop, "out"),
    "extract-words": (cmd_extract_words, "out"),
    "build-pool": (cmd_build_pool, "out"),
    "mixup": (cmd_mixup, "out"),
    "pretrain": (cmd_pretrain, "out_ckpt"),
    "finetune": (cmd_finetune, "out_ckpt"),
    "eval": (cmd_eval, "report"),
    "sweep": (cmd_sweep, "out_csv"),
    "compare": (cmd_compare, "out_csv"),
}


def main(argv: Optional[list[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    logging.basicConfig(
        format="%(asctime)-15s %(levelname)s: %(message)s",
        level=logging.DEBUG if args.verbose else logging.INFO,
    )
    handler, out_attr = COMMANDS[args.command]
    try:
        ctx = RunContext(args, argv, flag_actions(parser))
        handler(ctx)
        run_path = ctx.write_manifest(getattr(args, out_attr))
        logger.debug("Run manifest: %s", run_path)
    except GopMixupError as e:
        print(f"❌ {e.category}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ io: {e}", file=sys.stderr)
        return DataValidationError.exit_code
    return EXIT_OK
