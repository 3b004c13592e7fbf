"""Command-line entry point: ``monreco <subcommand> [options]``.

Every run writes its reports plus a ``manifest.json`` into ``--out``.
Report files contain no timestamps, so rerunning a command with the same
inputs reproduces them byte for byte; wall-clock data lives only in the
manifest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stats
from .cf import DEFAULT_TOPN_MAX, eligible_classes, run_cf_experiment
from .errors import MonrecoError, ParseError
from .evalkit import density_report, evaluate, format_threshold
from .ingest import FeatureKind, build_label_matrix, load_dataset, parse_service, save_dataset
from .model import RESOURCE_CLASSES, SLO_CLASSES, ResourceClass
from .pipeline import load_models, recommend, save_class_model, train_class_model, training_config
from .protonet import NetworkConfig
from .sampling import split_dataset
from .svd import DEFAULT_RANK, Scenario, run_ablation
from .synth import generate_with_truth, preset, write_truth

log = logging.getLogger("monreco")

SUBCOMMANDS = ("synth", "analyze", "baseline", "ablate-svd", "train", "recommend")


def artifact_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    dataset_path: str | None = None
    dataset_sha256: str | None = None
    version: str = field(default_factory=artifact_version)
    duration_seconds: float = 0.0
    outputs: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "dataset": {"path": self.dataset_path, "sha256": self.dataset_sha256},
            "version": self.version,
            "duration_seconds": self.duration_seconds,
            "outputs": sorted(self.outputs),
        }


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


class Outputs:
    """Writes report files under one directory and remembers their names."""

    def __init__(self, directory: str | os.PathLike):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.names: list[str] = []

    def text(self, name: str, content: str) -> Path:
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        self.names.append(name)
        return path

    def json(self, name: str, data) -> Path:
        return self.text(name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def track(self, path: Path) -> None:
        self.names.append(str(path.relative_to(self.dir)))


# -- subcommands ----------------------------------------------------------------------


def cmd_synth(args, out: Outputs, manifest: RunManifest) -> None:
    cfg = preset(args.preset, args.seed)
    dataset, truth = generate_with_truth(cfg)
    save_dataset(dataset, out.dir / "fleet.jsonl")
    out.names.append("fleet.jsonl")
    write_truth(truth, out.dir / "truth.json")
    out.names.append("truth.json")
    manifest.config["preset"] = args.preset
    manifest.dataset_path = str(out.dir / "fleet.jsonl")
    manifest.dataset_sha256 = file_sha256(out.dir / "fleet.jsonl")
    log.info("generated %d services", len(dataset))


def analysis_reports(dataset) -> dict[str, str]:
    files = {}
    for kind in ("resource", "slo"):
        rows = []
        mon = stats.class_distribution(dataset, kind, "monitor")
        svc = stats.class_distribution(dataset, kind, "service")
        for label in mon.labels:
            rows.append([label.value, mon.count(label), _fmt(mon.fraction(label)), svc.count(label), _fmt(svc.prevalence(label))])
        files[f"{kind}_distribution.csv"] = _csv(
            ["class", "monitors", "monitor_fraction", "services", "service_prevalence"], rows
        )

    within = stats.slo_within_resource(dataset)
    files["slo_within_resource.csv"] = _csv(
        ["resource_class"] + [s.value for s in SLO_CLASSES],
        [[r.value] + [_fmt(f) for f in within[r].fractions] for r in RESOURCE_CLASSES],
    )

    for kind, classes in (("resource", RESOURCE_CLASSES), ("slo", SLO_CLASSES)):
        phi = stats.phi_matrix(build_label_matrix(dataset, kind).binary, [c.value for c in classes])
        files[f"phi_{kind}.csv"] = _csv(
            ["class"] + list(phi.labels),
            [[label] + [_fmt(v) for v in phi.values[i]] for i, label in enumerate(phi.labels)],
        )

    rows = []
    for r, res in stats.per_resource_chi2(dataset).items():
        rows.append([r.value, _fmt(res.statistic), res.dof, f"{res.p_value:.6e}", int(res.reject_at_5pct), res.low_expected_cells])
    files["chi2_goodness_of_fit.csv"] = _csv(
        ["resource_class", "statistic", "dof", "p_value", "reject_at_5pct", "low_expected_cells"], rows
    )
    try:
        ind = stats.chi2_independence(stats.resource_slo_table(dataset))
        block = {
            "statistic": round(ind.statistic, 6),
            "dof": ind.dof,
            "p_value": float(f"{ind.p_value:.6e}"),
            "reject_at_5pct": ind.reject_at_5pct,
            "low_expected_cells": ind.low_expected_cells,
        }
    except MonrecoError as exc:
        block = {"error": exc.code, "message": str(exc)}
    files["chi2_independence.json"] = json.dumps(block, indent=2, sort_keys=True) + "\n"
    return files


def cmd_analyze(args, out: Outputs, manifest: RunManifest) -> None:
    dataset = load_dataset(args.data)
    for name, content in analysis_reports(dataset).items():
        out.text(name, content)


def cmd_baseline(args, out: Outputs, manifest: RunManifest) -> None:
    dataset = load_dataset(args.data)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    split = split_dataset(dataset, 0.8, split_seed)
    kind = FeatureKind.parse(args.features)
    report = run_cf_experiment(dataset, kind, split, topn_max=args.topn_max)
    rows = [
        [c.resource_class.value, c.top_n, _fmt(c.auc), _fmt(c.precision), _fmt(c.recall), format_threshold(c.youden_threshold)]
        for c in report.cells
    ]
    out.text(f"cf_{kind.value}.csv", _csv(["resource_class", "top_n", "auc", "precision", "recall", "youden_threshold"], rows))
    out.json(f"cf_{kind.value}_notes.json", {"feature_kind": kind.value, "split_seed": split_seed, "notes": list(report.notes)})
    manifest.config["split_seed"] = split_seed


def cmd_ablate_svd(args, out: Outputs, manifest: RunManifest) -> None:
    dataset = load_dataset(args.data)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    scenarios = tuple(Scenario) if args.scenario == "all" else (Scenario.parse(args.scenario),)
    report = run_ablation(dataset, split_seed, rank=args.rank, scenarios=scenarios)
    out.text("svd_ablation.csv", report.to_csv())
    out.json("svd_ablation_notes.json", {"rank": args.rank, "split_seed": split_seed, "notes": list(report.notes)})
    manifest.config["split_seed"] = split_seed


def load_network_config(path: str | None, seed: int) -> NetworkConfig:
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.lineno, f"config is not valid JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ParseError(1, "config must be a JSON object")
    data.setdefault("seed", seed)
    return training_config(**data)


def _train_one(task):
    dataset, split, cls, kind, config = task
    model = train_class_model(dataset, split, cls, kind=kind, config=config)
    return model


def cmd_train(args, out: Outputs, manifest: RunManifest) -> None:
    dataset = load_dataset(args.data)
    config = load_network_config(args.config, args.seed)
    kind = FeatureKind.parse(args.features)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    split = split_dataset(dataset, 0.8, split_seed)
    if not args.classes or "all" in args.classes:
        classes = eligible_classes(build_label_matrix(dataset, "resource"))
    else:
        classes = [ResourceClass.parse(c) for c in args.classes]

    tasks = [(dataset, split, cls, kind, config) for cls in classes]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            models = list(pool.map(_train_one, tasks))
    else:
        models = [_train_one(t) for t in tasks]

    rows = []
    for model in models:
        out.track(save_class_model(model, out.dir / "models"))
        ev = model.evaluation
        if not ev:
            rows.append([model.resource_class.value, _fmt(model.threshold), "", "", "", "", ""])
            continue
        scores, labels = np.array(ev["test_scores"]), np.array(ev["test_labels"])
        op = evaluate(scores, labels)
        pred = scores >= model.threshold
        tp = int(np.sum(pred & (labels == 1)))
        precision = tp / pred.sum() if pred.sum() else 1.0
        recall = tp / labels.sum()
        rows.append(
            [
                model.resource_class.value,
                _fmt(model.threshold),
                _fmt(ev["test_auc"]),
                _fmt(precision),
                _fmt(recall),
                format_threshold(op.threshold),
                _fmt(model.history[-1].total) if model.history else "",
            ]
        )
        dens = density_report(scores, 10, labels)
        slug = model.resource_class.slug
        out.text(f"density/{slug}_positive.dat", dens.to_gnuplot("positive"))
        out.text(f"density/{slug}_negative.dat", dens.to_gnuplot("negative"))
    out.text(
        "train_report.csv",
        _csv(["resource_class", "threshold", "test_auc", "precision", "recall", "youden_threshold", "final_loss"], rows),
    )
    manifest.config.update(network=config.to_json(), split_seed=split_seed, classes=[c.value for c in classes])


def cmd_recommend(args, out: Outputs, manifest: RunManifest) -> None:
    text = Path(args.service).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, f"invalid JSON: {exc.msg}") from None
    service = parse_service(obj, 1)
    models = load_models(args.models)
    recs = recommend(service, models)
    payload = {"service_id": service.service_id, "recommendations": [r.to_json() for r in recs]}
    out.json("recommendations.json", payload)
    manifest.dataset_path = str(args.service)
    manifest.dataset_sha256 = file_sha256(args.service)
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


HANDLERS = {
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "baseline": cmd_baseline,
    "ablate-svd": cmd_ablate_svd,
    "train": cmd_train,
    "recommend": cmd_recommend,
}


# -- argument parsing -----------------------------------------------------------------


GLOBAL_DEFAULTS = {"seed": 0, "jobs": 1, "out": "out"}


def _common() -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand.

    Defaults are suppressed here and applied after parsing, otherwise a
    subparser's default would overwrite a value given before the subcommand.
    """
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel workers across classes (default 1)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default ./out)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monreco", description="Monitor recommendation toolkit", parents=[_common()])
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    common = _common()

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic fleet")
    p.add_argument("--preset", default="desk", choices=["desk", "paper-scale"])

    p = sub.add_parser("analyze", parents=[common], help="class distributions, phi and chi-squared reports")
    p.add_argument("--data", required=True)

    kinds = [k.value for k in FeatureKind]
    p = sub.add_parser("baseline", parents=[common], help="collaborative-filtering baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--features", default="components", choices=kinds)
    p.add_argument("--topn-max", type=int, default=DEFAULT_TOPN_MAX)
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")

    p = sub.add_parser("ablate-svd", parents=[common], help="SVD feature-ablation table")
    p.add_argument("--data", required=True)
    p.add_argument("--scenario", default="all", help="UpstreamOnly, ComponentsOnly, Both or all")
    p.add_argument("--rank", type=int, default=DEFAULT_RANK)
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")

    p = sub.add_parser("train", parents=[common], help="train per-class prototype networks")
    p.add_argument("--data", required=True)
    p.add_argument("--class", dest="classes", action="append", help="resource class (repeatable, or 'all')")
    p.add_argument("--features", default="components", choices=kinds)
    p.add_argument("--config", default=None, help="JSON object of network settings")
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")

    p = sub.add_parser("recommend", parents=[common], help="recommend resource classes for one service")
    p.add_argument("--service", required=True, help="JSON file holding one service object")
    p.add_argument("--models", required=True, help="directory of checkpoints written by train")
    return parser


def _config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "out")}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("MONRECO_LOG", "WARNING").upper(), stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if getattr(args, "topn_max", 1) < 1:
        parser.error("--topn-max must be >= 1")

    start = time.perf_counter()
    manifest = RunManifest(args.command, _config_of(args), args.seed)
    data = getattr(args, "data", None)
    try:
        if data is not None:
            manifest.dataset_path = str(data)
            manifest.dataset_sha256 = file_sha256(data)
        out = Outputs(args.out)
        HANDLERS[args.command](args, out, manifest)
    except MonrecoError as exc:
        _error(exc.code, str(exc))
        return 1
    except (OSError, ValueError) as exc:
        _error(f"cli.{type(exc).__name__}", str(exc))
        return 1
    manifest.duration_seconds = round(time.perf_counter() - start, 3)
    manifest.outputs = list(out.names)
    (out.dir / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _error(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


if __name__ == "__main__":
    raise SystemExit(main())
