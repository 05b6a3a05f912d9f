"""Command-line front end.

Every command reads one JSON run configuration (``--config``) and writes its
artifacts under the run directory (``output`` in the config, or
``--output``).  Each command also drops ``manifests/<command>.json`` recording
the hashes of its inputs and outputs, so a chain simulate -> train ->
evaluate can be audited after the fact.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure, 3 I/O or integrity failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import fixtures
from .dataset import Dataset, DatasetConfig, generate_dataset
from .errors import IntegrityError, LeakLocError, NumericalError, StageError
from .experiment import (
    AWGSI,
    METHODS,
    EvalReport,
    Hyper,
    Interpolator,
    TrainedModel,
    apply_pipeline,
    evaluate_cell,
    head_and_residual_errors,
    train_pipeline,
    vs_sweep,
)
from .hydraulics import EPS_DELTA, DemandPattern
from .interp import DEFAULT_MU
from .matrix_io import write_matrix
from .network import Network, load_network
from .placement import PlacementProblem, place_sensors

log = logging.getLogger("leakloc")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

_SIZES = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1}
_IDS = {"type": "array", "items": {"type": "string"}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed", "network"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "network": {"type": "string"},
        "network_format": {"enum": ["inp", "json"]},
        "pattern": {"type": "string"},
        "sensors": {
            "oneOf": [
                _IDS,
                {
                    "type": "object",
                    "required": ["count"],
                    "additionalProperties": False,
                    "properties": {
                        "count": {"type": "integer", "minimum": 0},
                        "fixed": _IDS,
                        "candidates": _IDS,
                    },
                },
            ]
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_t": {"type": "integer", "minimum": 1},
                "hours": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "leak_nodes": _IDS,
                "n_class": {"type": "integer", "minimum": 1},
                "train_sizes_lps": _SIZES,
                "test_sizes_lps": _SIZES,
                "uncertainty": {"type": "number", "minimum": 0, "maximum": 0.05},
            },
        },
        "interpolation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": list(METHODS)},
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "eps_delta": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "learning": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_atom": {"type": "integer", "minimum": 1},
                "s": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "K": {"type": "integer", "minimum": 0},
            },
        },
        "n_vs": {"type": "integer", "minimum": 0},
        "depths": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "vs_counts": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "uncertainty_levels": {
                    "type": "array", "items": {"type": "number", "minimum": 0, "maximum": 0.05}, "minItems": 1,
                },
                "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1},
            },
        },
        "output": {"type": "string"},
    },
}


class ConfigError(LeakLocError, ValueError):
    pass


# -- configuration -------------------------------------------------------------------


class RunConfig:
    """Validated configuration with paths resolved against the config file."""

    def __init__(self, doc: dict, base: Path):
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config {where}: {exc.message}") from None
        self.doc = doc
        self.base = base
        self.seed = doc["seed"]
        self.output = self._path(doc.get("output", "run"))
        ds = doc.get("dataset", {})
        self.dataset = ds
        ip = doc.get("interpolation", {})
        self.method = ip.get("method", AWGSI)
        lr = doc.get("learning", {})
        self.hyper = Hyper(s=lr.get("s", 8), alpha=lr.get("alpha", 1.0), beta=lr.get("beta", 1.0),
                           n_atom=lr.get("n_atom"), K=lr.get("K", 30),
                           mu=ip.get("mu", DEFAULT_MU), eps_delta=ip.get("eps_delta", EPS_DELTA))
        self.n_vs = doc.get("n_vs", 0)
        self.depths = tuple(doc.get("depths", (0, 1, 2)))
        sw = doc.get("sweep", {})
        self.vs_counts = sorted(sw.get("vs_counts", [0]))
        self.levels = sorted(sw.get("uncertainty_levels", [ds.get("uncertainty", 0.0)]))
        self.methods = tuple(sw.get("methods", METHODS))
        net_ref = doc["network"]
        if not net_ref.startswith("fixture:"):
            p = self._path(net_ref)
            if not p.is_file():
                raise ConfigError(f"network file {p} does not exist")
        if "pattern" in doc and not self._path(doc["pattern"]).is_file():
            raise ConfigError(f"pattern file {self._path(doc['pattern'])} does not exist")

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base / p)

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        if args.config is None:
            raise ConfigError("--config is required")
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.network_format is not None:
            doc["network_format"] = args.network_format
        cfg = cls(doc, path.resolve().parent)
        if args.output is not None:
            cfg.output = Path(args.output).resolve()
        return cfg

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()

    # loaders

    def network(self) -> Network:
        ref = self.doc["network"]
        if ref.startswith("fixture:"):
            name = ref.split(":", 1)[1]
            makers = {"grid3": fixtures.grid3, "grid5": fixtures.grid5, "modena_like": fixtures.modena_like}
            makers.update({k: (lambda v=v: v) for k, v in fixtures.small_fixtures().items()})
            if name not in makers:
                raise ConfigError(f"unknown fixture {name!r}; known: {sorted(makers)}")
            return makers[name]()
        return load_network(self._path(ref), self.doc.get("network_format"))

    def pattern(self) -> DemandPattern:
        if "pattern" not in self.doc:
            return fixtures.diurnal_pattern()
        doc = json.loads(self._path(self.doc["pattern"]).read_text())
        mult = doc["multipliers"] if isinstance(doc, dict) else doc
        return DemandPattern(tuple(mult))

    def sensors(self, net: Network) -> list[str]:
        spec = self.doc.get("sensors")
        if spec is None:
            raise ConfigError("config has no 'sensors' entry")
        if isinstance(spec, list):
            net.indices(spec)  # unknown ids raise here
            return list(spec)
        fixed = list(spec.get("fixed", []))
        chosen = place_sensors(PlacementProblem.build(net, spec["count"], fixed, spec.get("candidates")))
        return fixed + chosen

    def dataset_config(self, sensors, level: float | None = None) -> DatasetConfig:
        ds = self.dataset
        kw = {}
        if "train_sizes_lps" in ds:
            kw["train_sizes"] = tuple(1e-3 * x for x in ds["train_sizes_lps"])
        if "test_sizes_lps" in ds:
            kw["test_sizes"] = tuple(1e-3 * x for x in ds["test_sizes_lps"])
        return DatasetConfig(
            sensors=tuple(sensors), leak_nodes=ds.get("leak_nodes"), n_class=ds.get("n_class"),
            hours=ds.get("hours"), n_t=ds.get("n_t"),
            uncertainty=ds.get("uncertainty", 0.0) if level is None else level,
            seed=self.seed, **kw,
        )


# -- helpers ---------------------------------------------------------------------------


def _write_json(path: Path, doc) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(doc, sort_keys=True, indent=1)
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def _record(cfg: RunConfig, command: str, inputs: dict, outputs: dict) -> dict:
    doc = {"command": command, "config_hash": cfg.hash(), "inputs": inputs, "outputs": outputs}
    _write_json(cfg.output / "manifests" / f"{command}.json", doc)
    return doc


def _dataset_dir(cfg, args) -> Path:
    return Path(args.dataset) if args.dataset else cfg.output / "dataset"


def _model_dir(cfg, args) -> Path:
    return Path(args.model) if args.model else cfg.output / "model"


def _load_dataset(path: Path) -> Dataset:
    if not (path / "manifest.json").is_file():
        raise IntegrityError(f"no dataset at {path}; run 'simulate' first")
    return Dataset.load(path)


def _load_model(path: Path) -> TrainedModel:
    if not (path / "model.json").is_file():
        raise IntegrityError(f"no model at {path}; run 'train' first")
    return TrainedModel.load(path)


# -- commands --------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> dict:
    net = cfg.network()
    sensors = cfg.sensors(net)
    ds = generate_dataset(net, cfg.pattern(), cfg.dataset_config(sensors), threads=args.threads)
    out = _dataset_dir(cfg, args)
    h = ds.save(out)
    return _record(cfg, "simulate", {}, {"dataset": str(out), "dataset_hash": h,
                                        "n_columns": ds.n_samp, "n_train": ds.n_train})


def cmd_place(cfg: RunConfig, args) -> dict:
    net = cfg.network()
    spec = cfg.doc.get("sensors")
    if not isinstance(spec, dict):
        raise ConfigError("'place' needs sensors given as {count, fixed, candidates}")
    fixed = list(spec.get("fixed", []))
    problem = PlacementProblem.build(net, spec["count"], fixed, spec.get("candidates"))
    chosen = place_sensors(problem)
    doc = {"sensors": fixed + chosen, "fixed": fixed, "chosen": chosen, "trajectory": problem.trajectory}
    h = _write_json(cfg.output / "placement.json", doc)
    return _record(cfg, "place", {}, {"placement": str(cfg.output / "placement.json"), "sha256": h})


def cmd_interpolate(cfg: RunConfig, args) -> dict:
    src = _dataset_dir(cfg, args)
    ds = _load_dataset(src)
    hp = cfg.hyper
    ip = Interpolator(ds.network, ds.sensors, cfg.method, None, hp.mu, hp.eps_delta)
    res = ip.batch(ds.nominal_sensor, ds.leak_sensor, args.threads)
    out = cfg.output / "interpolation"
    out.mkdir(parents=True, exist_ok=True)
    files = {"residual.bin": write_matrix(out / "residual.bin", res.residual),
             "nominal_heads.bin": write_matrix(out / "nominal_heads.bin", res.nominal_heads)}
    outputs = {"directory": str(out), "files": files}
    if ds.leak_full is not None:
        rows = head_and_residual_errors(ds, cfg.method, res).to_rows(method=cfg.method)
        report = EvalReport([], rows, {"method": cfg.method, "dataset_hash": ds.content_hash()})
        outputs["report_hash"] = report.save(out)
    return _record(cfg, "interpolate", {"dataset_hash": ds.content_hash()}, outputs)


def cmd_train(cfg: RunConfig, args) -> dict:
    ds = _load_dataset(_dataset_dir(cfg, args))
    model = train_pipeline(ds, None, cfg.hyper, cfg.n_vs, cfg.method, args.threads)
    out = _model_dir(cfg, args)
    h = model.save(out)
    return _record(cfg, "train", {"dataset_hash": ds.content_hash()},
                   {"model": str(out), "model_hash": h, "virtual": model.virtual})


def _read_measurements(path: Path, n_sensors: int):
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "nominal" not in doc or "leak" not in doc:
        raise ConfigError(f"{path}: expected an object with 'nominal' and 'leak'")
    nominal = np.asarray(doc["nominal"], dtype=float)
    leak = np.asarray(doc["leak"], dtype=float)
    # rows are events in the file; the library wants one column per event
    nominal, leak = np.atleast_2d(nominal).T, np.atleast_2d(leak).T
    if nominal.shape != leak.shape or nominal.shape[0] != n_sensors:
        raise ConfigError(f"{path}: every event needs {n_sensors} nominal and leak readings")
    return nominal, leak


def cmd_localize(cfg: RunConfig, args) -> dict:
    model = _load_model(_model_dir(cfg, args))
    inputs = {"model_hash": model.content_hash()}
    if args.measurements:
        mpath = Path(args.measurements)
        nominal, leak = _read_measurements(mpath, len(model.sensors))
        inputs["measurements_sha256"] = hashlib.sha256(mpath.read_bytes()).hexdigest()
        truth = None
    else:
        ds = _load_dataset(_dataset_dir(cfg, args))
        if ds.sensors != model.sensors:
            raise ConfigError("dataset and model use different sensors")
        test = ds.test_set()
        nominal, leak = test.nominal_sensor, test.leak_sensor
        truth = [test.leak_nodes[c] for c in test.labels]
        inputs["dataset_hash"] = ds.content_hash()
    pred = apply_pipeline(model, nominal, leak, args.threads)
    events = []
    for j, node in enumerate(pred.nodes):
        ev = {"node": node, "class": int(pred.classes[j]), "reliable": not bool(pred.degenerate[j])}
        if truth is not None:
            ev["truth"] = truth[j]
        events.append(ev)
    h = _write_json(cfg.output / "localization.json", {"events": events, "inputs": inputs})
    return _record(cfg, "localize", inputs, {"localization": str(cfg.output / "localization.json"),
                                            "sha256": h, "n_events": len(events)})


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    model = _load_model(_model_dir(cfg, args))
    ds = _load_dataset(_dataset_dir(cfg, args))
    if ds.sensors != model.sensors:
        raise ConfigError("dataset and model use different sensors")
    test = ds.test_set()
    ip = Interpolator(ds.network, ds.sensors, model.method, model.sigma, model.hyper.mu,
                      model.hyper.eps_delta)
    full = ip.batch(test.nominal_sensor, test.leak_sensor, args.threads)
    cell = {"level": ds.config.get("uncertainty", 0.0), "method": model.method,
            "n_vs": len(model.virtual), "status": "ok"}
    cell.update(evaluate_cell(model, test, full.residual, cfg.depths))
    rows = []
    if test.leak_full is not None:
        rows = head_and_residual_errors(test, model.method, full).to_rows(method=model.method)
    inputs = {"model_hash": model.content_hash(), "dataset_hash": ds.content_hash()}
    report = EvalReport([cell], rows, {"depths": list(cfg.depths), **inputs})
    out = cfg.output / "evaluation"
    return _record(cfg, "evaluate", inputs, {"report": str(out), "report_hash": report.save(out)})


def cmd_sweep(cfg: RunConfig, args) -> dict:
    net = cfg.network()
    sensors = cfg.sensors(net)
    pattern = cfg.pattern()
    root = cfg.output / "sweep"
    datasets, hashes = {}, {}
    for level in cfg.levels:
        ds = generate_dataset(net, pattern, cfg.dataset_config(sensors, level), threads=args.threads)
        hashes[str(level)] = ds.save(root / "datasets" / f"u{level:g}")
        datasets[level] = ds
    t0 = time.perf_counter()
    report, timings = vs_sweep(datasets, cfg.vs_counts, cfg.methods, cfg.hyper, cfg.depths,
                               threads=args.threads)
    report.config["dataset_hashes"] = hashes
    h = report.save(root / "report")
    # wall-clock numbers vary run to run, so they live outside the hashed report
    _write_json(root / "timings.json", {"cells": timings, "total_s": time.perf_counter() - t0})
    return _record(cfg, "sweep", {"dataset_hashes": hashes}, {"report": str(root / "report"),
                                                               "report_hash": h})


COMMANDS = {
    "simulate": (cmd_simulate, "generate the leak / leak-free dataset"),
    "place": (cmd_place, "greedy sensor placement"),
    "interpolate": (cmd_interpolate, "interpolate residual fields for a dataset"),
    "train": (cmd_train, "train an interpolation + dictionary model"),
    "localize": (cmd_localize, "localize leak events with a trained model"),
    "evaluate": (cmd_evaluate, "accuracy and RMSE of a model on the test columns"),
    "sweep": (cmd_sweep, "virtual-sensor x uncertainty x interpolator sweep"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--output", help="run directory (overrides config 'output')")
    common.add_argument("--network-format", choices=("inp", "json"))
    common.add_argument("--dataset", help="dataset directory (default <output>/dataset)")
    common.add_argument("--model", help="model directory (default <output>/model)")
    common.add_argument("--measurements", help="localize: JSON with 'nominal' and 'leak' readings")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="leakloc", description="Leak localization in water networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def exit_code(exc: BaseException) -> int:
    while isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, IntegrityError):
        return EXIT_IO
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_VALIDATION


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("leakloc: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    fn = COMMANDS[args.command][0]
    try:
        cfg = RunConfig.from_args(args)
        result = fn(cfg, args)
    except (LeakLocError, ValueError, KeyError, OSError) as exc:
        code = exit_code(exc)
        print(f"leakloc {args.command}: error: {exc}", file=sys.stderr)
        return code
    print(json.dumps(result, sort_keys=True, indent=1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
