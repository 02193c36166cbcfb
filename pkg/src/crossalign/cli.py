"""Command-line entry point: ``crossalign <subcommand>``.

Settings come from one YAML (or JSON) file, given by ``--config`` or the
``CROSSALIGN_CONFIG`` environment variable, plus ``--set section.key=value``
overrides which win over the file. The whole configuration is validated
before any subcommand writes a file.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error
(missing or malformed input, diverged training, failed gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from crossalign.align.encoders import encode
from crossalign.align.losses import (
    LossConfig,
    class_prototypes,
    classification_loss,
    cross_view_loss,
    mil_nce_loss,
)
from crossalign.align.optim import finite_diff_gradcheck
from crossalign.align.synthetic import SyntheticWorld
from crossalign.align.train import (
    FeatureTableProvider,
    TrainConfig,
    TrainingDiverged,
    build_training_data,
    load_checkpoint,
    read_trace,
    save_checkpoint,
    train,
    write_trace,
)
from crossalign.corrgen import (
    ROTATIONS,
    ConfigError,
    DatasetFormatError,
    ScriptedDetector,
    generate_aligned,
    read_aligned_dataset,
    read_annotations,
    write_aligned_dataset,
)
from crossalign.eval import (
    harmonic_mean,
    load_results,
    map_50_95,
    read_detections,
    read_targets,
    report,
    retrieval_recall_at_k,
    save_results,
)
from crossalign.geometry import box_regression_loss, Assignment
from crossalign.vocab import TemplateGenerator, expand_vocabulary, read_text_bags, validate_bags, variant_totals, write_text_bags

logger = logging.getLogger("crossalign")

CONFIG_ENV = "CROSSALIGN_CONFIG"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
_GRADCHECK_STREAM = 6
_GRADCHECK_LIMIT = 1e-4
GRADCHECK_LOSSES = ("cross_view", "mil_nce", "classification", "box_regression")


class CheckFailed(RuntimeError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _ratio(name: str, v: float, lo_open: bool = False) -> None:
    _check((0 < v if lo_open else 0 <= v) and v <= 1, f"{name} must lie in {'(' if lo_open else '['}0, 1], got {v}")


@dataclass
class CorrgenSection:
    aerial: str | None = None
    ground: str | None = None
    detector: str | None = None
    name_map: dict[str, str] | None = None
    tau: float = 0.3
    iou_threshold: float = 0.5
    pairing_cap: int | None = 64
    crop_jitter: float = 0.1
    rotations: list[int] = field(default_factory=lambda: list(ROTATIONS))
    augment: bool = True
    output: str = "aligned.jsonl"

    def validate(self) -> None:
        _ratio("corrgen.tau", self.tau)
        _ratio("corrgen.iou_threshold", self.iou_threshold, lo_open=True)
        _check(self.pairing_cap is None or self.pairing_cap >= 1, "corrgen.pairing_cap must be >= 1 or null")
        _check(0 <= self.crop_jitter < 0.5, "corrgen.crop_jitter must lie in [0, 0.5)")
        _check(all(r in ROTATIONS for r in self.rotations), f"corrgen.rotations must be drawn from {ROTATIONS}")


@dataclass
class VocabSection:
    categories: str | None = None
    max_variants: int = 6
    n_variants: int = 6
    output: str = "text.jsonl"

    def validate(self) -> None:
        _check(self.max_variants >= 1, "vocab.max_variants must be >= 1")
        _check(self.n_variants >= 0, "vocab.n_variants must be >= 0")


@dataclass
class SyntheticSection:
    n_train: int = 320
    n_test: int = 256
    n_classes: int = 8
    dim: int = 16
    noise: float = 0.1
    instance_spread: float = 0.6
    text_noise: float = 1.0
    text_offset: float = 1.0
    pairing: str = "category"

    def validate(self) -> None:
        _check(self.n_train >= 1 and self.n_test >= 1 and self.n_classes >= 1 and self.dim >= 1, "synthetic sizes must be >= 1")
        _check(min(self.noise, self.instance_spread, self.text_noise, self.text_offset) >= 0, "synthetic noise levels must be >= 0")
        _check(self.pairing in ("category", "instance"), "synthetic.pairing must be category or instance")


@dataclass
class TrainSection:
    source: str = "synthetic"
    aligned: str | None = None
    text: str | None = None
    aerial_features: str | None = None
    ground_features: str | None = None
    text_features: str | None = None
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    encoder: str = "linear"
    hidden: int | None = None
    dim: int = 16
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rho: float = 0.07
    sigma: float = 0.07
    cls_temperature: float = 0.07
    lambda_ag: float = 1.0
    lambda_at: float = 1.0
    lambda_cls: float = 1.0
    lambda_box: float = 1.0
    normalize: bool = True
    symmetric: bool = False
    checkpoint: str = "checkpoint.json"
    trace: str = "trace.csv"

    def validate(self) -> None:
        _check(self.source in ("synthetic", "features"), "train.source must be synthetic or features")
        _check(self.encoder in ("linear", "mlp"), "train.encoder must be linear or mlp")
        _check(self.hidden is None or self.hidden >= 1, "train.hidden must be >= 1")
        _check(self.dim >= 1 and self.epochs >= 0 and self.batch_size >= 1, "train.dim/batch_size >= 1, epochs >= 0")
        _check(self.lr >= 0 and self.eps > 0, "train.lr must be >= 0 and train.eps > 0")
        _check(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "train.beta1/beta2 must lie in [0, 1)")
        _check(min(self.rho, self.sigma, self.cls_temperature) > 0, "temperatures must be > 0")
        _check(min(self.lambda_ag, self.lambda_at, self.lambda_cls, self.lambda_box) >= 0, "loss weights must be >= 0")
        if self.source == "features":
            missing = [k for k in ("aligned", "text", "aerial_features", "ground_features", "text_features") if getattr(self, k) is None]
            _check(not missing, f"train.source=features needs {missing}")
        self.synthetic.validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(
            self.rho, self.sigma, self.cls_temperature, self.lambda_ag, self.lambda_at, self.lambda_cls,
            self.lambda_box, self.normalize, self.symmetric,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, encoder=self.encoder, hidden=self.hidden, dim=self.dim, seed=seed, loss=self.loss_config(),
        )


@dataclass
class GradcheckSection:
    instances: int = 5
    steps: list[float] = field(default_factory=lambda: [1e-4, 1e-5, 1e-6])
    max_batch: int = 8
    max_dim: int = 16

    def validate(self) -> None:
        _check(self.instances >= 1, "gradcheck.instances must be >= 1")
        _check(bool(self.steps) and all(h > 0 for h in self.steps), "gradcheck.steps must be positive")
        _check(self.max_batch >= 2 and self.max_dim >= 2, "gradcheck.max_batch and max_dim must be >= 2")


@dataclass
class EvalSection:
    detections: str | None = None
    targets: str | None = None
    novel: list[int] | None = None
    name: str = "run"
    output: str | None = None
    format: str = "table"

    def validate(self) -> None:
        _check(self.format in ("table", "csv"), "eval.format must be table or csv")


@dataclass
class ReportSection:
    results: list[str] = field(default_factory=list)
    format: str = "table"
    output: str | None = None

    def validate(self) -> None:
        _check(self.format in ("table", "csv"), "report.format must be table or csv")


@dataclass
class RunConfig:
    seed: int = 0
    corrgen: CorrgenSection = field(default_factory=CorrgenSection)
    vocab: VocabSection = field(default_factory=VocabSection)
    train: TrainSection = field(default_factory=TrainSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    eval: EvalSection = field(default_factory=EvalSection)
    report: ReportSection = field(default_factory=ReportSection)

    def validate(self) -> None:
        _check(self.seed >= 0, "seed must be >= 0")
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            if dataclasses.is_dataclass(section):
                section.validate()


# keys that hold file paths, resolved against the config file's directory
_PATH_KEYS = {
    "corrgen": ("aerial", "ground", "detector", "output"),
    "vocab": ("categories", "output"),
    "train": ("aligned", "text", "aerial_features", "ground_features", "text_features", "checkpoint", "trace"),
    "eval": ("detections", "targets", "output"),
    "report": ("output",),
}


def _coerce(cls, key: str, value: Any, hint) -> Any:
    hint = str(hint)
    if value is None:
        _check("None" in hint, f"{key} may not be null")
        return None
    if hint.startswith("int") and not isinstance(value, bool) and isinstance(value, (int, float)) and float(value).is_integer():
        return int(value)
    if hint.startswith("float") and not isinstance(value, bool) and isinstance(value, (int, float)):
        return float(value)
    if hint.startswith("bool"):
        _check(isinstance(value, bool), f"{key} must be true or false")
        return value
    if hint.startswith("str"):
        _check(isinstance(value, (str, int, float)) and not isinstance(value, bool), f"{key} must be a string")
        return str(value)
    if hint.startswith("int"):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if hint.startswith("float"):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if hint.startswith("list"):
        _check(isinstance(value, list), f"{key} must be a list")
        inner = "float" if "float" in hint else "int" if "int" in hint else "str"
        return [_coerce(cls, key, v, inner) for v in value]
    if hint.startswith("dict"):
        _check(isinstance(value, dict), f"{key} must be a mapping")
        return {str(k): str(v) for k, v in value.items()}
    return value


def _build(cls, data: Mapping[str, Any], prefix: str = ""):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(cls, prefix + name, value, f.type)
    return cls(**kwargs)


def _set_dotted(tree: dict, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {dotted}: {k} is not a section")
    node[keys[-1]] = yaml.safe_load(raw) if raw != "" else None


def load_config(path: str | None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read, merge and validate; relative file paths resolve against the config file."""
    tree: dict = {}
    base = Path.cwd()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            tree = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = p.resolve().parent
        for section, keys in _PATH_KEYS.items():
            for k in keys:
                v = tree.get(section, {}).get(k) if isinstance(tree.get(section), dict) else None
                if isinstance(v, str) and not Path(v).is_absolute():
                    tree[section][k] = str(base / v)
        results = tree.get("report", {}).get("results") if isinstance(tree.get("report"), dict) else None
        if isinstance(results, list):
            tree["report"]["results"] = [r if Path(str(r)).is_absolute() else str(base / str(r)) for r in results]
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_dotted(tree, key.strip(), raw)
    cfg = _build(RunConfig, tree)
    cfg.validate()
    return cfg


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


# --- subcommands ----------------------------------------------------------------


def _need(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is not configured")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what}: {path} does not exist")
    return p


def cmd_corrgen(cfg: RunConfig) -> int:
    c = cfg.corrgen
    aerial = read_annotations(_need(c.aerial, "corrgen.aerial"))
    ground = read_annotations(_need(c.ground, "corrgen.ground"))
    detector = ScriptedDetector.from_file(_need(c.detector, "corrgen.detector"))
    records, summary = generate_aligned(
        aerial, ground, detector, c.name_map, c.tau, c.iou_threshold, c.pairing_cap, c.crop_jitter,
        c.rotations, c.augment, cfg.seed,
    )
    write_aligned_dataset(records, c.output)
    print("\n".join(summary.lines()))
    print(f"wrote {c.output}")
    return EXIT_OK


def _category_names(path: Path) -> dict[int, str]:
    text = path.read_text(encoding="utf-8")
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        head = None
    if isinstance(head, dict) and "format" in head:
        return read_annotations(path).categories
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if isinstance(obj, dict) and "aerial_categories" in obj:
        obj = obj["aerial_categories"]
    if isinstance(obj, list):
        return dict(enumerate(map(str, obj)))
    if isinstance(obj, dict):
        return {int(k): str(v) for k, v in obj.items()}
    raise DatasetFormatError(path, 1, "expected a category list or mapping")


def cmd_vocab(cfg: RunConfig) -> int:
    v = cfg.vocab
    names = _category_names(_need(v.categories, "vocab.categories"))
    bags = expand_vocabulary(names, TemplateGenerator(v.n_variants), v.max_variants, cfg.seed)
    write_text_bags(bags, v.output)
    totals = variant_totals(bags)
    rep = validate_bags(bags)
    print(f"bags: {len(bags)}")
    print(f"variants: {totals['variations']}")
    print(f"variants with canonical names: {totals['with_canonical']}")
    print(f"collisions: {len(rep.collisions)}")
    for key, owners in rep.collisions:
        print(f"  {key!r}: categories {list(owners)}")
    print(f"wrote {v.output}")
    return EXIT_OK


def _training_inputs(cfg: RunConfig):
    t = cfg.train
    if t.source == "synthetic":
        s = t.synthetic
        world = SyntheticWorld(
            s.n_classes, s.dim, s.noise, s.instance_spread, s.text_noise, s.text_offset, pairing=s.pairing, seed=cfg.seed
        )
        records, bags, provider = world.dataset(s.n_train)
        return build_training_data(records, bags, provider), world
    records = read_aligned_dataset(_need(t.aligned, "train.aligned"))
    bags = read_text_bags(_need(t.text, "train.text"))
    provider = FeatureTableProvider.from_files(
        _need(t.aerial_features, "train.aerial_features"),
        _need(t.ground_features, "train.ground_features"),
        _need(t.text_features, "train.text_features"),
    )
    return build_training_data(records, bags, provider), None


def cmd_train(cfg: RunConfig, resume: str | None = None) -> int:
    t = cfg.train
    tc = t.train_config(cfg.seed)
    data, world = _training_inputs(cfg)
    state, prior = None, []
    if resume:
        state, stored = load_checkpoint(_need(resume, "--resume"))
        mine = dataclasses.asdict(tc)
        if {k: v for k, v in stored.items() if k != "epochs"} != {k: v for k, v in mine.items() if k != "epochs"}:
            raise ConfigError("checkpoint was written with different settings (only epochs may change on resume)")
        if Path(t.trace).exists():
            prior = [r for r in read_trace(t.trace) if r["epoch"] <= state.epoch]
    result = train(data, tc, state)
    trace = prior + result.trace
    save_checkpoint(result.state, tc, t.checkpoint)
    write_trace(trace, t.trace)
    means = {}
    for r in trace:
        means.setdefault(r["epoch"], []).append(r["total"])
    if means:
        first, last = min(means), max(means)
        print(f"epoch {first} mean loss: {np.mean(means[first]):.6f}")
        print(f"epoch {last} mean loss: {np.mean(means[last]):.6f}")
    if world is not None:
        s = t.synthetic
        test = world.sample(s.n_test, stream=1)
        recall = retrieval_recall_at_k(encode(result.state.aerial, test.aerial), world.ground_prototypes(), test.labels, 1)
        print(f"held-out cross-view recall@1: {recall:.4f}")
    print(f"wrote {t.checkpoint} and {t.trace}")
    return EXIT_OK


def _gradcheck_cases(seed: int, g: GradcheckSection, index: int):
    """One random instance per loss: (loss_fn, x, analytic gradient)."""
    rng = np.random.default_rng([seed, _GRADCHECK_STREAM, index])
    n = int(rng.integers(2, g.max_batch + 1))
    d = int(rng.integers(2, g.max_dim + 1))
    a, other = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    rho = float(rng.uniform(0.1, 1.0))
    yield "cross_view", (lambda x: cross_view_loss(x, other, rho)[0]), a, cross_view_loss(a, other, rho)[1]

    m = n + int(rng.integers(1, 4))
    texts = rng.normal(size=(m, d))
    mask = rng.random((n, m)) < 0.4
    mask[np.arange(n), rng.integers(0, m, n)] = True
    yield "mil_nce", (lambda x: mil_nce_loss(x, texts, mask, rho)[0]), a, mil_nce_loss(a, texts, mask, rho)[1]

    n_cls = int(rng.integers(2, 5))
    bag = rng.integers(0, n_cls, size=3 * n_cls)
    bag[:n_cls] = np.arange(n_cls)
    protos = class_prototypes(rng.normal(size=(3 * n_cls, d)), bag, n_cls)
    labels = rng.integers(0, n_cls, n)
    yield (
        "classification",
        (lambda x: classification_loss(x, protos, labels, rho)[0]),
        a,
        classification_loss(a, protos, labels, rho)[1],
    )

    corner = rng.uniform(0, 50, size=(n, 2))
    size = rng.uniform(5, 20, size=(n, 2))
    target = np.hstack([corner, corner + size])
    pred = target + rng.uniform(-3, 3, size=target.shape)
    pred[:, 2:] = np.maximum(pred[:, 2:], pred[:, :2] + 1.0)
    match = Assignment(tuple((i, i) for i in range(n)))
    yield (
        "box_regression",
        (lambda x: box_regression_loss(x, target, match)[0]),
        pred,
        box_regression_loss(pred, target, match)[1],
    )


def gradcheck_table(cfg: RunConfig, corrupt: str | None = None) -> dict[str, dict[float, float]]:
    """Max relative error per loss and step size over ``gradcheck.instances`` random cases."""
    g = cfg.gradcheck
    table = {name: {h: 0.0 for h in g.steps} for name in GRADCHECK_LOSSES}
    for k in range(g.instances):
        for name, fn, x, grad in _gradcheck_cases(cfg.seed, g, k):
            if name == corrupt:
                grad = grad * 1.01 + 1e-3
            for h in g.steps:
                table[name][h] = max(table[name][h], finite_diff_gradcheck(fn, x, grad, h))
    return table


def cmd_gradcheck(cfg: RunConfig, corrupt: str | None = None) -> int:
    table = gradcheck_table(cfg, corrupt)
    steps = cfg.gradcheck.steps
    print(f"{'loss':<16}" + "".join(f"  {'h=' + format(h, 'g'):>10}" for h in steps))
    for name, row in table.items():
        print(f"{name:<16}" + "".join(f"  {row[h]:>10.2e}" for h in steps))
    worst = max(max(row.values()) for row in table.values())
    if worst >= _GRADCHECK_LIMIT:
        raise CheckFailed(f"max relative error {worst:.2e} >= {_GRADCHECK_LIMIT:g}")
    print(f"all relative errors below {_GRADCHECK_LIMIT:g}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, from_map: Sequence[float] | None = None) -> int:
    e = cfg.eval
    if from_map is not None:
        base, novel = from_map
        if base < 0 or novel < 0:
            raise ConfigError("--from-map values must be non-negative")
        print(f"{'mAP_base':>9}  {'mAP_novel':>9}  {'HM':>9}")
        print(f"{base:>9.2f}  {novel:>9.2f}  {harmonic_mean(base, novel):>9.2f}")
        return EXIT_OK
    dets = read_detections(_need(e.detections, "eval.detections"))
    targets = read_targets(_need(e.targets, "eval.targets"))
    result = map_50_95(dets, targets, novel=e.novel, name=e.name)
    if e.output:
        save_results([result], e.output)
    sys.stdout.write(report([result], e.format))
    for flag in result.flags:
        print(f"flag: {flag}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    r = cfg.report
    results = []
    for path in r.results:
        results.extend(load_results(_need(path, "report.results")))
    text = report(results, r.format)
    if r.output:
        Path(r.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossalign", description="Aerial-ground-text alignment toolkit.")
    parser.add_argument("--config", help=f"YAML/JSON config file (default: ${CONFIG_ENV})")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set train.lr=0.03 (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("corrgen", help="build the aligned aerial-ground dataset")
    sub.add_parser("vocab", help="expand category names into text bags")
    p = sub.add_parser("train", help="train the aerial encoder")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint")
    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--corrupt", choices=GRADCHECK_LOSSES, help="perturb one analytic gradient (negative control)")
    p = sub.add_parser("eval", help="COCO-style mAP with base/novel split")
    p.add_argument("--from-map", nargs=2, type=float, metavar=("BASE", "NOVEL"), help="only compute HM of two given mAPs")
    sub.add_parser("report", help="render saved evaluation results")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config or os.environ.get(CONFIG_ENV), args.overrides)
        if args.command == "corrgen":
            return cmd_corrgen(cfg)
        if args.command == "vocab":
            return cmd_vocab(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.corrupt)
        if args.command == "eval":
            return cmd_eval(cfg, args.from_map)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, DatasetFormatError, TrainingDiverged, CheckFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
