"""Command line interface: train, eval, analyze, sweep, compare, export.

Every command writes UTF-8 text artifacts plus a ``manifest.json`` into the
output directory (``--out``, else ``$DNDT_OUT``, else ``./dndt-out``).
Metric files are deterministic given inputs, flags and seed; wall-clock
timings only ever go into the manifest.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import active_cutpoints, analyze, cart_accuracy, cutpoint_sweep, sweep_csv
from .cart import cart_to_dot, fit_cart
from .data import (
    BUNDLED,
    DataError,
    Dataset,
    apply_normalizer,
    bundled_path,
    load_csv,
    split,
    train_test,
)
from .forest import FOREST_TRIGGER, ForestModel, fit_forest
from .model import DndtModel, to_tree_view, tree_view_to_dot
from .train import TrainConfig, TrainingDiverged, fit

logger = logging.getLogger("dndt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ENV = "DNDT_OUT"


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Run:
    """Collects artifacts and timings for one command invocation."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out = Path(args.out or os.environ.get(OUT_ENV) or "dndt-out")
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}
        self.info: dict = {}
        self._t0 = time.perf_counter()

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        if name not in self.artifacts:
            self.artifacts.append(name)
        return path

    def lap(self, label: str) -> None:
        now = time.perf_counter()
        self.timings[label] = round(now - self._t0, 6)
        self._t0 = now

    def finish(self, config: dict | None = None, dataset: Dataset | None = None, seed=None) -> None:
        manifest = {
            "tool": "dndt",
            "version": __version__,
            "command": self.command,
            "config": config or {},
            "seed": seed,
            "dataset": None if dataset is None else {
                "name": dataset.name,
                "fingerprint": dataset.fingerprint(),
                "n_instances": len(dataset),
                "n_features": dataset.n_features,
                "n_classes": dataset.n_classes,
                "n_dropped": dataset.n_dropped,
            },
            "artifacts": sorted(self.artifacts),
            "timings_s": self.timings,
            **self.info,
        }
        (self.out / "manifest.json").write_text(_dump(manifest), encoding="utf-8")


def _split_list(values) -> list[str]:
    out = []
    for v in values or []:
        out.extend(s.strip() for s in v.split(",") if s.strip())
    return out


def load_dataset(args, categories=None, class_names=None) -> Dataset:
    """Resolve ``--dataset``/``--csv``; a saved model's encodings can be imposed."""
    if bool(args.dataset) == bool(args.csv):
        raise UsageError("give exactly one of --dataset NAME or --csv PATH")
    if args.dataset:
        if args.dataset not in BUNDLED:
            raise DataError(f"unknown bundled dataset {args.dataset!r}; choose from {sorted(BUNDLED)}")
        path, label, categorical = bundled_path(args.dataset), BUNDLED[args.dataset][1], []
    else:
        path, label, categorical = args.csv, args.label_col, _split_list(args.categorical)
        if label is not None and label.lstrip("-").isdigit():
            label = int(label)
    return load_csv(path, label_col=label, categorical=categorical,
                    categories=categories, class_names=class_names)


def config_from_args(args) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=args.lr,
            batch_size=args.batch,
            epochs=args.epochs,
            optimizer=args.optimizer,
            tau=args.tau,
            anneal=args.anneal,
            tau_min=args.tau_min,
            st_gumbel=args.st_gumbel,
            seed=args.seed,
            cutpoints_per_feature=args.cutpoints,
            weight_decay=args.weight_decay,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _accuracy_metrics(pred: np.ndarray, y: np.ndarray, class_names: list[str]) -> dict:
    per_class = {}
    for c, name in enumerate(class_names):
        tp = int(np.sum((pred == c) & (y == c)))
        support = int(np.sum(y == c))
        predicted = int(np.sum(pred == c))
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[name] = {"precision": precision, "recall": recall, "f1": f1, "support": support}
    return {"accuracy": float(np.mean(pred == y)) if y.size else 0.0, "n": int(y.size), "per_class": per_class}


def _use_forest(args, n_features: int) -> bool:
    if args.forest == "always":
        return True
    if args.forest == "never":
        return False
    return n_features > FOREST_TRIGGER


# --- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    run = Run("train", args)
    dataset = load_dataset(args)
    config = config_from_args(args)
    train, test = train_test(dataset, args.train_fraction, args.seed)
    run.lap("load")
    split_meta = {"split_seed": args.seed, "train_fraction": args.train_fraction,
                  "dataset_fingerprint": dataset.fingerprint()}
    if _use_forest(args, dataset.n_features):
        if args.subset > dataset.n_features:
            raise UsageError(f"--subset {args.subset} exceeds the {dataset.n_features} features")
        model, reports = fit_forest(train, config, args.trees, args.subset, val=test, n_jobs=args.jobs)
        model.meta.update(split_meta)
        report_csv = _forest_report_csv(reports)
        run.info["forest"] = {"n_trees": model.n_trees, "subset_size": model.subset_size,
                              "subsets": model.subsets}
        logger.info("trained forest of %d trees x %d features", model.n_trees, model.subset_size)
    else:
        model, report = fit(train, config, val=test)
        model.meta.update(split_meta)
        report_csv = report.to_csv()
    run.lap("fit")
    run.write("model.json", model.dumps() + "\n")
    run.write("train_report.csv", report_csv)
    metrics = {
        "train": _accuracy_metrics(model.predict(train.X), train.y, dataset.class_names),
        "test": _accuracy_metrics(model.predict(test.X), test.y, dataset.class_names),
    }
    run.write("metrics.json", _dump(metrics))
    run.finish(config.to_dict(), dataset, args.seed)
    print(f"test accuracy {metrics['test']['accuracy']:.4f} -> {run.out}")
    return EXIT_OK


def _forest_report_csv(reports) -> str:
    lines = ["tree,epoch,loss,train_acc,val_acc,tau"]
    for t, r in enumerate(reports):
        for row in r.to_csv().splitlines()[1:]:
            lines.append(f"{t},{row}")
    return "\n".join(lines) + "\n"


def load_model(path) -> DndtModel | ForestModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") == "dndt-forest":
        return ForestModel.from_dict(doc)
    return DndtModel.from_dict(doc)


def _model_encoding(model) -> tuple[dict, list[str], np.ndarray, np.ndarray]:
    if isinstance(model, ForestModel):
        cats = model.meta.get("categories", {})
        lo = np.full(model.n_features, np.nan)
        hi = np.full(model.n_features, np.nan)
        for tree, subset in zip(model.trees, model.subsets):
            lo[subset] = tree.lo
            hi[subset] = tree.hi
        return cats, model.class_names, lo, hi
    return model.categories, model.class_names, model.lo, model.hi


def _normalized_for(model, dataset: Dataset) -> Dataset:
    _, _, lo, hi = _model_encoding(model)
    if lo is None:
        return dataset
    lo = np.where(np.isnan(lo), 0.0, lo)
    hi = np.where(np.isnan(hi), 1.0, hi)
    return replace(dataset, X=apply_normalizer(dataset.X, lo, hi), lo=lo, hi=hi)


def cmd_eval(args) -> int:
    run = Run("eval", args)
    model = load_model(args.model)
    cats, class_names, _, _ = _model_encoding(model)
    dataset = load_dataset(args, categories=cats, class_names=class_names)
    n_feat = model.n_features
    if dataset.n_features != n_feat:
        raise DataError(f"model expects {n_feat} features, dataset has {dataset.n_features}")
    if args.split == "all":
        part = dataset
    else:
        seed = model.meta.get("split_seed", 0) if args.split_seed is None else args.split_seed
        frac = model.meta.get("train_fraction", 0.8)
        tr, te = split(dataset, frac, seed)
        part = dataset.subset(tr if args.split == "train" else te)
    part = _normalized_for(model, part)
    metrics = _accuracy_metrics(model.predict(part.X), part.y, list(class_names))
    metrics["split"] = args.split
    run.write("eval_metrics.json", _dump(metrics))
    run.finish({"model": str(args.model), "split": args.split}, dataset, None)
    print(f"accuracy {metrics['accuracy']:.4f} on {metrics['n']} instances ({args.split})")
    return EXIT_OK


def cmd_analyze(args) -> int:
    run = Run("analyze", args)
    dataset = load_dataset(args)
    config = config_from_args(args)
    run.lap("load")
    if args.model:
        model = load_model(args.model)
        if isinstance(model, ForestModel):
            raise UsageError("per-model cut-point analysis needs a single tree")
        train, _ = train_test(dataset, model.meta.get("train_fraction", 0.8), model.meta.get("split_seed", 0))
        act = active_cutpoints(model, train.X)
        lines = ["feature,name,active,total,fraction,ignored"]
        for d, name in enumerate(model.feature_names):
            lines.append(f"{d},{name},{act.counts[d]},{act.totals[d]},{act.fractions[d]!r},{int(act.counts[d] == 0)}")
        run.write("model_active_cutpoints.csv", "\n".join(lines) + "\n")
    report = analyze(dataset, config, args.runs, args.train_fraction, args.jobs)
    run.lap("analyze")
    run.write("analysis.json", report.to_json() + "\n")
    run.write("features.csv", report.features_csv())
    if args.sweep:
        points = cutpoint_sweep(dataset, config, _parse_counts(args.sweep), args.runs, args.train_fraction, args.jobs)
        run.write("sweep.csv", sweep_csv(points))
        run.lap("sweep")
    run.finish(config.to_dict() | {"runs": args.runs}, dataset, args.seed)
    print(f"kendall tau (DNDT vs CART ranking) {report.kendall_tau:.3f}; "
          f"ignore rates {', '.join(f'{r:.0f}' for r in report.ignore_rate)}")
    return EXIT_OK


def _parse_counts(text: str) -> list[int]:
    text = text.strip()
    if "-" in text:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def cmd_sweep(args) -> int:
    run = Run("sweep", args)
    dataset = load_dataset(args)
    config = config_from_args(args)
    points = cutpoint_sweep(dataset, config, _parse_counts(args.counts), args.runs, args.train_fraction, args.jobs)
    run.lap("sweep")
    run.write("sweep.csv", sweep_csv(points))
    run.write("sweep.json", _dump([p.__dict__ for p in points]))
    run.finish(config.to_dict() | {"runs": args.runs, "counts": args.counts}, dataset, args.seed)
    for p in points:
        print(f"n={p.n_cutpoints}: active {p.active_fraction:.3f}, test accuracy {p.test_accuracy:.3f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    run = Run("compare", args)
    dataset = load_dataset(args)
    config = config_from_args(args)
    rows = ["seed,dndt_test_acc,cart_test_acc"]
    d_acc, c_acc = [], []
    for i in range(args.runs):
        seed = args.seed + i
        train, test = train_test(dataset, args.train_fraction, seed)
        model, _ = fit(train, replace(config, seed=seed))
        d = float(np.mean(model.predict(test.X) == test.y))
        _, c = cart_accuracy(dataset, args.train_fraction, seed)
        d_acc.append(d)
        c_acc.append(c)
        rows.append(f"{seed},{d!r},{c!r}")
    run.write("compare.csv", "\n".join(rows) + "\n")
    summary = {"dndt_mean": float(np.mean(d_acc)), "cart_mean": float(np.mean(c_acc)), "runs": args.runs}
    run.write("compare.json", _dump(summary))
    run.finish(config.to_dict() | {"runs": args.runs}, dataset, args.seed)
    print(f"DNDT {summary['dndt_mean']:.4f}  CART {summary['cart_mean']:.4f}")
    return EXIT_OK


def cmd_export(args) -> int:
    if args.cart:
        dataset = load_dataset(args)
        train, _ = train_test(dataset, args.train_fraction, args.seed)
        tree = fit_cart(train.X, train.y, train.n_classes, args.max_depth)
        dot = cart_to_dot(tree, dataset.feature_names, dataset.class_names)
    else:
        if not args.model:
            raise UsageError("export needs --model PATH (or --cart with a dataset)")
        model = load_model(args.model)
        if isinstance(model, ForestModel):
            raise UsageError("a forest has no single tree view; export one member instead")
        counts = None
        if args.dataset or args.csv:
            dataset = load_dataset(args, categories=model.categories, class_names=model.class_names)
            counts = _normalized_for(model, dataset)
        dot = tree_view_to_dot(to_tree_view(model, counts))
    if args.out:
        run = Run("export", args)
        run.write("tree.dot", dot)
        run.finish({"cart": args.cart, "model": args.model}, None, args.seed)
    else:
        sys.stdout.write(dot)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_dataset(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", help="bundled dataset name (iris, haberman)")
    g.add_argument("--csv", help="path to a headed CSV file")
    g.add_argument("--label-col", help="label column name or index (default: last column)")
    g.add_argument("--categorical", action="append", help="categorical column(s), comma separated")
    g.add_argument("--train-fraction", type=float, default=0.8)


def _add_training(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--cutpoints", type=int, default=d.cutpoints_per_feature, help="cut points per feature")
    g.add_argument("--tau", type=float, default=d.tau, help="softmax temperature")
    g.add_argument("--anneal", type=float, default=d.anneal, help="per-epoch temperature decay (1 = off)")
    g.add_argument("--tau-min", type=float, default=d.tau_min)
    g.add_argument("--st-gumbel", action="store_true", help="straight-through Gumbel-softmax binning")
    g.add_argument("--optimizer", choices=["sgd", "sgd-momentum", "adam"], default=d.optimizer)
    g.add_argument("--lr", type=float, default=d.learning_rate)
    g.add_argument("--batch", type=int, default=d.batch_size)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--weight-decay", type=float, default=d.weight_decay)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dndt", description="Deep neural decision trees for tabular data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tree (or a forest for wide data)")
    _add_dataset(p)
    _add_training(p)
    p.add_argument("--trees", type=int, default=10)
    p.add_argument("--subset", type=int, default=10, help="features per forest tree")
    p.add_argument("--forest", choices=["auto", "always", "never"], default="auto",
                   help=f"auto uses a forest when there are more than {FOREST_TRIGGER} features")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--model", required=True)
    _add_dataset(p)
    p.add_argument("--split", choices=["test", "train", "all"], default="test")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="ignore rates, CART importance and Kendall tau over repeated runs")
    _add_dataset(p)
    _add_training(p)
    p.add_argument("--model", help="also report active cut points of this saved tree")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--sweep", help="also sweep cut points per feature, e.g. 1-5")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="active cut points and accuracy versus cut points per feature")
    _add_dataset(p)
    _add_training(p)
    p.add_argument("--counts", default="1-5")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="DNDT versus CART test accuracy over seeds")
    _add_dataset(p)
    _add_training(p)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export", help="Graphviz DOT of a tree")
    p.add_argument("--model")
    p.add_argument("--dot", action="store_true", default=True, help="DOT output (the only format)")
    p.add_argument("--cart", action="store_true", help="export a CART tree fitted to the dataset")
    p.add_argument("--max-depth", type=int)
    p.add_argument("--seed", type=int, default=0)
    _add_dataset(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    fraction = getattr(args, "train_fraction", 0.5)
    if not 0 < fraction < 1:
        parser.error(f"--train-fraction must lie in (0, 1), got {fraction}")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except TrainingDiverged as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
