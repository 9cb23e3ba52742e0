"""User-facing report generation, plot-data emission and the CLI.

The report turns an (original, adversarial) pair into per-feature advice
lines ("Increasing <name> by about <p>%"), ordered by impact. Percentages
are displayed rounded to two decimals; the report command verifies that
re-applying the rounded advice still flips the prediction and pads the
adversarial point slightly outward when rounding would eat the margin.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from . import muc_core, trainer
from .exceptions import (
    DirectionError,
    ModelFormatError,
    NoCandidateError,
    NoCoreError,
    NoRegionError,
    OracleTooLargeError,
)
from .forest_model import (
    Dataset,
    Forest,
    feature_stats,
    load_model,
    predict,
    save_model,
)
from .m_shapley import ImportanceVector, MucTable, imputation_eval, m_shapley
from .muc_attack import AttackConfig, attack
from .reach_solver import Box, oracle_selftest

DEFAULT_VERBS = ("Increasing", "Reducing")


@dataclass(frozen=True)
class RunConfig:
    """Defaults shared by the CLI subcommands; flags override config keys."""

    model: str | None = None
    data: str | None = None
    label: str = "label"
    klass: int = 1
    split: float = 0.8
    seed: int = 0
    jobs: int = 1
    M: int | None = None
    immutable: tuple[str, ...] = ()
    free_domain: str = "unbounded"
    n_candidates: int = 1000
    alpha: float = 0.05
    epsilon: float | None = None
    beta: float = 0.005
    eta0: float = 0.2
    T: int = 200
    kappa_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split fraction must lie in (0, 1)")
        if self.free_domain not in ("unbounded", "data"):
            raise ValueError("free_domain must be 'unbounded' or 'data'")


@dataclass(frozen=True)
class Recommendation:
    """One advice line: change ``feature`` by ``percent`` (or by ``delta``
    in feature units when the original value is zero)."""

    feature: str
    verb: str
    percent: float | None
    delta: float

    @property
    def shown_percent(self) -> float | None:
        return None if self.percent is None else round(self.percent, 2)

    def line(self) -> str:
        if self.percent is None:
            return f"{self.verb} {self.feature} by about {_fmt(abs(self.delta))} (absolute)"
        return f"{self.verb} {self.feature} by about {_fmt(abs(self.shown_percent))}%"


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def recommendations(
    x_org,
    x_adv,
    feature_names: Sequence[str],
    immutable: Sequence[int] = (),
    verbs: dict[str, tuple[str, str]] | None = None,
) -> list[Recommendation]:
    """Per-feature changes, largest relative change first.

    Only mutable features whose value actually changed appear. Features with
    a zero original value fall back to an absolute delta (and sort after the
    percentage entries).
    """
    x_org = np.asarray(x_org, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    verbs = verbs or {}
    blocked = set(immutable)
    recs = []
    for i, name in enumerate(feature_names):
        if i in blocked or x_adv[i] == x_org[i]:
            continue
        delta = float(x_adv[i] - x_org[i])
        up, down = verbs.get(name, DEFAULT_VERBS)
        verb = up if delta > 0 else down
        percent = None if x_org[i] == 0.0 else delta / float(x_org[i]) * 100.0
        recs.append(Recommendation(feature=name, verb=verb, percent=percent, delta=delta))
    percent_recs = [r for r in recs if r.percent is not None]
    absolute_recs = [r for r in recs if r.percent is None]
    percent_recs.sort(key=lambda r: -abs(r.percent))
    absolute_recs.sort(key=lambda r: -abs(r.delta))
    return percent_recs + absolute_recs


def generate_report(
    x_org,
    x_adv,
    feature_names: Sequence[str],
    immutable: Sequence[int] = (),
    client_id: str = "client",
    verbs: dict[str, tuple[str, str]] | None = None,
) -> str:
    """Advice text for moving ``x_org`` toward ``x_adv``. Deterministic."""
    recs = recommendations(x_org, x_adv, feature_names, immutable, verbs)
    if not recs:
        raise ValueError("the two samples do not differ on any mutable feature")
    header = f"Dear {client_id}, we provide you the following advice on your application:"
    body = ";\n".join(r.line() for r in recs)
    return f"{header}\n{body}\n"


def apply_recommendations(
    x_org, feature_names: Sequence[str], recs: Sequence[Recommendation],
    rounded: bool = True,
) -> np.ndarray:
    """Reconstruct the advised sample from the recommendation records."""
    x = np.asarray(x_org, dtype=np.float64).copy()
    index = {name: i for i, name in enumerate(feature_names)}
    for rec in recs:
        i = index[rec.feature]
        if rec.percent is None:
            x[i] = x[i] + rec.delta
        else:
            p = rec.shown_percent if rounded else rec.percent
            x[i] = x[i] * (1.0 + p / 100.0)
    return x


_LINE_RE = re.compile(r"^(?P<verb>\S+) (?P<feature>.+) by about (?P<amount>[-+0-9.eE]+)(?P<unit>%| \(absolute\))$")


def apply_report(
    report: str,
    x_org,
    feature_names: Sequence[str],
    verbs: dict[str, tuple[str, str]] | None = None,
) -> np.ndarray:
    """Parse a report's advice lines and re-apply them to ``x_org``."""
    x = np.asarray(x_org, dtype=np.float64).copy()
    index = {name: i for i, name in enumerate(feature_names)}
    verbs = verbs or {}
    for raw in report.splitlines()[1:]:
        line = raw.strip().rstrip(";")
        if not line:
            continue
        m = _LINE_RE.match(line)
        if m is None:
            raise ValueError(f"unparseable advice line: {line!r}")
        name = m.group("feature")
        if name not in index:
            raise ValueError(f"unknown feature {name!r} in report")
        up, down = verbs.get(name, DEFAULT_VERBS)
        verb = m.group("verb")
        if verb == up:
            sign = 1.0
        elif verb == down:
            sign = -1.0
        else:
            raise ValueError(f"unknown verb {verb!r} for feature {name!r}")
        amount = float(m.group("amount"))
        i = index[name]
        if m.group("unit") == "%":
            x[i] = x[i] * (1.0 + sign * amount / 100.0)
        else:
            x[i] = x[i] + sign * amount
    return x


def consistent_report_target(
    forest: Forest,
    x_org: np.ndarray,
    y: int,
    x_adv: np.ndarray,
    bounds: Box,
    feature_names: Sequence[str],
    immutable: Sequence[int] = (),
    verbs: dict[str, tuple[str, str]] | None = None,
) -> np.ndarray:
    """An adversarial point whose two-decimal advice survives rounding.

    Rounding displayed percentages can pull a reconstruction back across the
    decision boundary when the adversarial point sits within the search
    tolerance of it. Pad the offset outward until applying the rounded
    advice still flips the prediction.
    """
    offset = x_adv - x_org
    for margin in (0.0, 1e-4, 1e-3, 1e-2, 3e-2, 0.1, 0.3):
        x_try = np.clip(x_org + (1.0 + margin) * offset, bounds.lower, bounds.upper)
        if predict(forest, x_try)[0] == y:
            continue
        recs = recommendations(x_org, x_try, feature_names, immutable, verbs)
        x_rec = apply_recommendations(x_org, feature_names, recs, rounded=True)
        if predict(forest, x_rec)[0] != y:
            return x_try
    raise NoCandidateError("no padding makes the rounded advice flip the prediction")


def emit_plot_data(kind: str, **inputs) -> str:
    """CSV payloads for downstream rendering of the three standard plots."""
    if kind == "core-size-histogram":
        cores = inputs.get("cores")
        if not cores:
            raise ValueError("no cores given")
        sizes = [len(c) for c in cores]
        lines = ["core_size,count"]
        for size in sorted(set(sizes)):
            lines.append(f"{size},{sizes.count(size)}")
        return "\n".join(lines) + "\n"
    if kind == "shapley-bars":
        importance: ImportanceVector = inputs.get("importance")
        names = inputs.get("feature_names")
        if importance is None or names is None:
            raise ValueError("need importance and feature_names")
        lines = ["feature,phi"]
        for i in importance.ranking():
            lines.append(f"{names[i]},{_fmt(importance.phi[i])}")
        return "\n".join(lines) + "\n"
    if kind == "imputation-curve":
        curve = inputs.get("curve")
        if not curve:
            raise ValueError("no curve rows given")
        lines = ["N,accuracy"]
        for n, acc in curve:
            lines.append(f"{n},{_fmt(acc)}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown plot kind {kind!r}")


# ---------------------------------------------------------------------------
# CLI plumbing


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_runconfig(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        doc = json.load(fh)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise _UsageError(f"unknown config keys: {sorted(unknown)}")
    if "immutable" in doc:
        doc["immutable"] = tuple(doc["immutable"])
    return RunConfig(**doc)


def _merge(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            updates[f.name] = value
    if "immutable" in updates:
        updates["immutable"] = tuple(updates["immutable"].split(","))
    return replace(cfg, **updates)


def _require(cfg: RunConfig, *names: str):
    for name in names:
        if getattr(cfg, name) is None:
            raise _UsageError(f"--{name} is required (flag or config key)")


def _load_dataset(cfg: RunConfig) -> Dataset:
    try:
        return Dataset.from_csv(cfg.data, label_column=cfg.label)
    except FileNotFoundError:
        raise _UsageError(f"dataset not found: {cfg.data}")


def _load_forest(cfg: RunConfig) -> Forest:
    try:
        with open(cfg.model, "rb") as fh:
            return load_model(fh.read())
    except FileNotFoundError:
        raise _UsageError(f"model not found: {cfg.model}")


def _immutable_indices(cfg: RunConfig, dataset: Dataset) -> frozenset[int]:
    index = {name: i for i, name in enumerate(dataset.feature_names)}
    missing = [n for n in cfg.immutable if n not in index]
    if missing:
        raise _UsageError(f"immutable feature(s) not in dataset: {missing}")
    return frozenset(index[n] for n in cfg.immutable)


def _free_domain(cfg: RunConfig, dataset: Dataset) -> Box | None:
    if cfg.free_domain == "data":
        stats = feature_stats(dataset)
        return Box.closed(stats.mins, stats.maxs)
    return None


def _attack_config(cfg: RunConfig, dataset: Dataset) -> AttackConfig:
    stats = feature_stats(dataset)
    ranges = stats.ranges
    return AttackConfig.from_stats(
        stats,
        kappa=np.where(ranges > 0, cfg.kappa_fraction * ranges, cfg.kappa_fraction),
        immutable=_immutable_indices(cfg, dataset),
        n_candidates=cfg.n_candidates,
        alpha=cfg.alpha,
        epsilon=cfg.epsilon,
        beta=cfg.beta,
        eta0=cfg.eta0,
        T=cfg.T,
        seed=cfg.seed,
    )


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _parse_samples(raw: str) -> list[int]:
    try:
        return [int(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError:
        raise _UsageError(f"bad sample list {raw!r}")


# Worker functions must be module level so process pools can pickle them.


def _explain_task(payload):
    forest, dataset, row, free_domain = payload
    return muc_core.explain_row(forest, dataset, row, free_domain)


def _attack_task(payload):
    forest, dataset, row, cfg, mode = payload
    x = dataset.X[row]
    y = int(dataset.y[row])
    return attack(forest, x, y, cfg, mode=mode, dataset=dataset, sample_index=row)


def _pmap(task, payloads, jobs: int):
    if jobs <= 1 or len(payloads) <= 1:
        return [task(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(task, payloads))


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_train(cfg: RunConfig, args) -> int:
    _require(cfg, "data")
    dataset = _load_dataset(cfg)
    fps = args.features_per_split
    if fps != "sqrt":
        fps = int(fps)
    params = trainer.TrainParams(
        n_trees=args.trees,
        max_depth=args.depth,
        min_samples_leaf=args.min_samples_leaf,
        bootstrap=not args.no_bootstrap,
        features_per_split=fps,
        rng_seed=cfg.seed,
    )
    forest = trainer.train_forest(dataset, params)
    accuracy = trainer.evaluate_accuracy(forest, dataset)
    print(f"trained {forest.n_trees} trees; training accuracy {accuracy:.4f}", file=sys.stderr)
    payload = save_model(forest).decode()
    _emit(payload if payload.endswith("\n") else payload + "\n", args.out)
    return 0


def _cmd_predict(cfg: RunConfig, args) -> int:
    _require(cfg, "model", "data")
    forest = _load_forest(cfg)
    dataset = _load_dataset(cfg)
    records = []
    for row in _parse_samples(args.sample):
        cls, probs = predict(forest, dataset.X[row])
        records.append({"sample": row, "class": cls, "probs": [float(p) for p in probs]})
    doc = records[0] if len(records) == 1 else records
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def _cmd_explain_local(cfg: RunConfig, args) -> int:
    _require(cfg, "model", "data")
    forest = _load_forest(cfg)
    dataset = _load_dataset(cfg)
    free = _free_domain(cfg, dataset)
    records = []
    for row in _parse_samples(args.sample):
        start = time.perf_counter()
        core = muc_core.local_explanation(
            forest, dataset.X[row], int(dataset.y[row]), free
        )
        elapsed = int(round((time.perf_counter() - start) * 1000))
        ordered = sorted(core)
        records.append(
            {
                "sample": row,
                "label": int(dataset.y[row]),
                "core": ordered,
                "core_names": [dataset.feature_names[i] for i in ordered],
                "time_ms": elapsed,
            }
        )
    doc = records[0] if len(records) == 1 else records
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def _pick_table_rows(dataset: Dataset, cfg: RunConfig, which: str) -> Sequence[int]:
    if which == "all":
        return range(dataset.n_rows)
    perm = np.random.default_rng(cfg.seed).permutation(dataset.n_rows)
    cut = min(max(int(round(dataset.n_rows * cfg.split)), 1), dataset.n_rows - 1)
    return sorted(perm[:cut]) if which == "train" else sorted(perm[cut:])


def _cmd_explain_global(cfg: RunConfig, args) -> int:
    _require(cfg, "model", "data")
    forest = _load_forest(cfg)
    dataset = _load_dataset(cfg)
    free = _free_domain(cfg, dataset)
    rows = _pick_table_rows(dataset, cfg, args.table_split)
    explanations = _pmap(
        _explain_task, [(forest, dataset, int(r), free) for r in rows], cfg.jobs
    )
    table = MucTable.from_explanations(explanations, cfg.klass, dataset.n_features)
    if table.skipped:
        print(f"skipped {len(table.skipped)} misclassified sample(s)", file=sys.stderr)
    if table.n_rows == 0:
        raise NoCoreError("every requested sample is misclassified")
    if args.exact or cfg.M is None:
        importance = m_shapley(table, mode="exact")
    else:
        importance = m_shapley(table, mode="sampled", M=cfg.M, seed=cfg.seed)
    _emit(
        emit_plot_data(
            "shapley-bars", importance=importance, feature_names=dataset.feature_names
        ),
        args.out,
    )
    return 0


def _cmd_attack(cfg: RunConfig, args) -> int:
    _require(cfg, "model", "data")
    forest = _load_forest(cfg)
    dataset = _load_dataset(cfg)
    attack_cfg = _attack_config(cfg, dataset)
    rows = _parse_samples(args.sample)
    results = _pmap(
        _attack_task,
        [(forest, dataset, row, attack_cfg, args.mode) for row in rows],
        cfg.jobs,
    )
    records = [res.to_record(row) for row, res in zip(rows, results)]
    doc = records[0] if len(records) == 1 else records
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    return 0


def _cmd_report(cfg: RunConfig, args) -> int:
    _require(cfg, "model", "data")
    forest = _load_forest(cfg)
    dataset = _load_dataset(cfg)
    attack_cfg = _attack_config(cfg, dataset)
    row = int(args.sample)
    x = dataset.X[row]
    y = int(dataset.y[row])
    result = attack(
        forest, x, y, attack_cfg, mode=args.mode, dataset=dataset, sample_index=row
    )
    immutable = sorted(_immutable_indices(cfg, dataset))
    x_target = consistent_report_target(
        forest, x, y, result.x_adv, attack_cfg.bounds, dataset.feature_names, immutable
    )
    report = generate_report(
        x, x_target, dataset.feature_names, immutable, client_id=args.client_id
    )
    _emit(report, args.out)
    return 0


def _cmd_eval_imputation(cfg: RunConfig, args) -> int:
    _require(cfg, "data")
    dataset = _load_dataset(cfg)
    params = trainer.TrainParams(
        n_trees=args.trees, max_depth=args.depth, rng_seed=cfg.seed
    )
    train, test = dataset.split(cfg.split, seed=cfg.seed)
    forest = trainer.train_forest(train, params)
    free = _free_domain(cfg, dataset)
    explanations = _pmap(
        _explain_task,
        [(forest, test, int(r), free) for r in range(test.n_rows)],
        cfg.jobs,
    )
    table = MucTable.from_explanations(explanations, cfg.klass, dataset.n_features)
    if table.n_rows == 0:
        raise NoCoreError("every test sample is misclassified")
    if args.exact or cfg.M is None:
        importance = m_shapley(table, mode="exact")
    else:
        importance = m_shapley(table, mode="sampled", M=cfg.M, seed=cfg.seed)
    ranking = [int(i) for i in importance.ranking()]
    Ns = [int(s) for s in args.Ns.split(",")]
    curve = imputation_eval(dataset, ranking, Ns, args.shuffles, params, split=cfg.split)
    _emit(emit_plot_data("imputation-curve", curve=curve), args.out)
    return 0


def _cmd_selftest(cfg: RunConfig, args) -> int:
    agree, total = oracle_selftest(n_cases=args.cases, seed=cfg.seed)
    print(f"oracle agreement: {agree}/{total}")
    if agree != total:
        print("solver/oracle disagreement detected", file=sys.stderr)
        return 2
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mucforest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--data", default=None, help="dataset CSV path")
        p.add_argument("--label", default=None, help="label column name")
        p.add_argument("--model", default=None, help="model JSON path")
        p.add_argument("--split", type=float, default=None, dest="split")

    p = sub.add_parser("train", help="fit a forest and write its JSON")
    common(p)
    p.add_argument("--trees", type=int, default=15)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--features-per-split", default="sqrt")
    p.add_argument("--no-bootstrap", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict one or more dataset rows")
    common(p)
    p.add_argument("--sample", required=True, help="row index or comma list")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("explain-local", help="minimal deciding feature set of a row")
    common(p)
    p.add_argument("--sample", required=True)
    p.add_argument("--free-domain", dest="free_domain", choices=["unbounded", "data"], default=None)
    p.set_defaults(func=_cmd_explain_local)

    p = sub.add_parser("explain-global", help="per-class feature importance CSV")
    common(p)
    p.add_argument("--class", dest="klass", type=int, default=None)
    p.add_argument("--M", dest="M", type=int, default=None)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--table-split", choices=["test", "train", "all"], default="test")
    p.add_argument("--free-domain", dest="free_domain", choices=["unbounded", "data"], default=None)
    p.set_defaults(func=_cmd_explain_global)

    p = sub.add_parser("attack", help="generate adversarial samples")
    common(p)
    p.add_argument("--sample", required=True)
    p.add_argument("--mode", choices=["muc", "baseline"], default="muc")
    p.add_argument("--immutable", default=None, help="comma-separated feature names")
    p.add_argument("--T", dest="T", type=int, default=None)
    p.add_argument("--candidates", dest="n_candidates", type=int, default=None)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("report", help="user-centered improvement advice")
    common(p)
    p.add_argument("--sample", required=True)
    p.add_argument("--client-id", default="client")
    p.add_argument("--mode", choices=["muc", "baseline"], default="muc")
    p.add_argument("--immutable", default=None)
    p.add_argument("--T", dest="T", type=int, default=None)
    p.add_argument("--candidates", dest="n_candidates", type=int, default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("eval-imputation", help="accuracy curve under mean imputation")
    common(p)
    p.add_argument("--class", dest="klass", type=int, default=None)
    p.add_argument("--Ns", required=True, help="comma-separated N values")
    p.add_argument("--shuffles", type=int, default=10)
    p.add_argument("--trees", type=int, default=15)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--M", dest="M", type=int, default=None)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--free-domain", dest="free_domain", choices=["unbounded", "data"], default=None)
    p.set_defaults(func=_cmd_eval_imputation)

    p = sub.add_parser("selftest-oracle", help="solver vs cell-oracle equivalence run")
    common(p)
    p.add_argument("--cases", type=int, default=200)
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _merge(_load_runconfig(args.config), args)
        return args.func(cfg, args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ModelFormatError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (NoCoreError, NoRegionError, NoCandidateError, DirectionError, OracleTooLargeError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
