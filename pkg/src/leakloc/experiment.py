"""Training / application pipelines and evaluation.

A model is trained on interpolated, normalised residuals taken at the
physical sensors plus ``n_vs`` virtual sensors, and applied to one or many
(nominal, leak) sensor-head pairs.  ``vs_sweep`` repeats train/evaluate over
a grid of virtual-sensor counts, uncertainty levels and interpolators.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import (
    DimensionMismatch,
    IntegrityError,
    LeakLocError,
    MissingGroundTruth,
    SensorMismatch,
    StageError,
    UnknownNode,
)
from .hydraulics import EPS_DELTA
from .interp import DEFAULT_MU, awgsi_pipeline, gsi_incidence, gsi_solve, gsi_weights
from .matrix_io import read_matrix, write_matrix
from .network import Network, network_from_dict, network_to_dict, sensor_indices
from .placement import PlacementProblem, place_sensors
from .sparse import (
    DictionaryTriple,
    build_label_matrices,
    classify_batch,
    lcksvd_train,
    normalize_residuals,
)

log = logging.getLogger(__name__)

GSI = "gsi"
AWGSI = "awgsi"
METHODS = (GSI, AWGSI)


def rmse(x, x_hat) -> float:
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise DimensionMismatch(f"shapes {x.shape} and {x_hat.shape} differ")
    return float(np.sqrt(np.mean((x - x_hat) ** 2)))


# -- interpolation over many columns -------------------------------------------------


@dataclass
class Interpolated:
    """Per-column interpolation output (all n x N)."""

    residual: np.ndarray
    leak_heads: np.ndarray | None  # GSI only
    nominal_heads: np.ndarray  # GSI estimate (GSI) or sGSI baseline (AW-GSI)


class Interpolator:
    """Column-wise residual interpolation with cached structural matrices."""

    def __init__(self, net: Network, sensors: Sequence[str], method: str, sigma=None,
                 mu: float = DEFAULT_MU, eps_delta: float = EPS_DELTA):
        if method not in METHODS:
            raise ValueError(f"unknown interpolator {method!r}")
        self.net = net
        self.sensors = list(sensors)
        self.sensor_idx = sensor_indices(net, sensors)
        self.method = method
        self.sigma = net.conductivities if sigma is None else np.asarray(sigma, dtype=float)
        self.mu = mu
        self.eps_delta = eps_delta
        self.weights = gsi_weights(net)
        self._lam = gsi_incidence(net) if method == GSI else None

    def column(self, nominal, leak):
        if self.method == GSI:
            h = gsi_solve(self.weights, self._lam, leak, self.sensor_idx, self.mu).estimate
            hn = gsi_solve(self.weights, self._lam, nominal, self.sensor_idx, self.mu).estimate
            return h - hn, h, hn
        out = awgsi_pipeline(self.net, nominal, leak, self.sensor_idx, self.sigma,
                             self.eps_delta, base_weights=self.weights)
        return out.residual, None, out.baseline

    def batch(self, nominal, leak, threads: int = 1) -> Interpolated:
        nominal = np.asarray(nominal, dtype=float)
        leak = np.asarray(leak, dtype=float)
        if nominal.ndim == 1:
            nominal, leak = nominal[:, None], leak[:, None]
        if nominal.shape != leak.shape or nominal.shape[0] != self.sensor_idx.size:
            raise SensorMismatch(
                f"expected {self.sensor_idx.size} sensor rows, got {nominal.shape} / {leak.shape}"
            )
        N = nominal.shape[1]
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            cols = list(pool.map(lambda j: self.column(nominal[:, j], leak[:, j]), range(N)))
        res = np.column_stack([c[0] for c in cols]) if N else np.zeros((self.net.n, 0))
        nom = np.column_stack([c[2] for c in cols]) if N else np.zeros((self.net.n, 0))
        heads = np.column_stack([c[1] for c in cols]) if self.method == GSI and N else None
        return Interpolated(res, heads, nom)


def _group_mean(values, labels, n_class):
    return np.array([values[labels == c].mean() if np.any(labels == c) else np.nan
                     for c in range(n_class)])


@dataclass
class ErrorTable:
    """Per-leak-node RMSE, averaged over that node's columns."""

    leak_nodes: list[str]
    head: np.ndarray
    residual: np.ndarray

    def to_rows(self, **extra) -> list[dict]:
        return [dict(extra, leak=v, head_rmse=float(h), residual_rmse=float(r))
                for v, h, r in zip(self.leak_nodes, self.head, self.residual)]


def head_and_residual_errors(dataset: Dataset, method: str, interp: Interpolated | None = None,
                             threads: int = 1, sigma=None, mu: float = DEFAULT_MU,
                             head_reference: str = "true_nominal") -> ErrorTable:
    """Head and residual RMSE per leak node.

    GSI returns heads; its residual is the difference of its leak and
    leak-free estimates.  AW-GSI returns residuals; its head estimate adds the
    leak-free head vector (``head_reference="true_nominal"``, the simulated
    leak-free state) or the interpolated one (``"interpolated_nominal"``).
    """
    if dataset.leak_full is None or dataset.nominal_full is None:
        raise MissingGroundTruth("dataset carries no full-state heads")
    if interp is None:
        interp = Interpolator(dataset.network, dataset.sensors, method, sigma, mu).batch(
            dataset.nominal_sensor, dataset.leak_sensor, threads)
    true_res = dataset.leak_full - dataset.nominal_full
    if method == GSI:
        heads = interp.leak_heads
    elif head_reference == "true_nominal":
        heads = interp.residual + dataset.nominal_full
    elif head_reference == "interpolated_nominal":
        heads = interp.residual + interp.nominal_heads
    else:
        raise ValueError(f"unknown head reference {head_reference!r}")
    h_err = np.sqrt(np.mean((heads - dataset.leak_full) ** 2, axis=0))
    r_err = np.sqrt(np.mean((interp.residual - true_res) ** 2, axis=0))
    return ErrorTable(list(dataset.leak_nodes), _group_mean(h_err, dataset.labels, dataset.n_class),
                      _group_mean(r_err, dataset.labels, dataset.n_class))


# -- model ---------------------------------------------------------------------------


@dataclass
class Hyper:
    s: int = 8
    alpha: float = 1.0
    beta: float = 1.0
    n_atom: int | None = None  # default 2 * n_class
    K: int = 30
    mu: float = DEFAULT_MU
    eps_delta: float = EPS_DELTA

    def resolved(self, n_class: int) -> "Hyper":
        return Hyper(self.s, self.alpha, self.beta, self.n_atom or 2 * n_class, self.K, self.mu,
                     self.eps_delta)

    def to_dict(self) -> dict:
        return {"s": self.s, "alpha": self.alpha, "beta": self.beta, "n_atom": self.n_atom,
                "K": self.K, "mu": self.mu, "eps_delta": self.eps_delta}


@dataclass
class TrainedModel:
    triple: DictionaryTriple
    network: Network
    sensors: list[str]
    virtual: list[str]
    method: str
    leak_nodes: list[str]
    sigma: np.ndarray
    hyper: Hyper
    manifest: dict = field(default_factory=dict)

    @property
    def rows(self) -> list[str]:
        return self.sensors + self.virtual

    @property
    def n_ts(self) -> int:
        return len(self.rows)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.triple.content_hash().encode())
        meta = {"sensors": self.sensors, "virtual": self.virtual, "method": self.method,
                "leak_nodes": self.leak_nodes, "hyper": self.hyper.to_dict(),
                "network": network_to_dict(self.network), "manifest": self.manifest}
        h.update(json.dumps(meta, sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.sigma, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, directory) -> str:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.triple.save(d / "dictionary")
        sigma_hash = write_matrix(d / "sigma.bin", self.sigma)
        doc = {
            "format": "leakloc-model/1", "sensors": self.sensors, "virtual": self.virtual,
            "method": self.method, "leak_nodes": self.leak_nodes, "hyper": self.hyper.to_dict(),
            "network": network_to_dict(self.network), "manifest": self.manifest,
            "sigma_sha256": sigma_hash, "content_hash": self.content_hash(),
        }
        (d / "model.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
        return doc["content_hash"]

    @classmethod
    def load(cls, directory) -> "TrainedModel":
        d = Path(directory)
        try:
            doc = json.loads((d / "model.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"cannot read model at {d}: {exc}") from exc
        try:
            model = cls(
                triple=DictionaryTriple.load(d / "dictionary"),
                network=network_from_dict(doc["network"]),
                sensors=list(doc["sensors"]), virtual=list(doc["virtual"]), method=doc["method"],
                leak_nodes=list(doc["leak_nodes"]),
                sigma=read_matrix(d / "sigma.bin", doc["sigma_sha256"])[:, 0],
                hyper=Hyper(**doc["hyper"]), manifest=doc.get("manifest", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"model at {d} is malformed: {exc}") from exc
        if model.content_hash() != doc.get("content_hash"):
            raise IntegrityError(f"{d}: model content hash mismatch")
        return model


def virtual_sensors(net: Network, sensors: Sequence[str], n_vs: int) -> list[str]:
    """Greedy virtual-sensor set; prefixes of longer runs are the shorter runs."""
    return place_sensors(PlacementProblem.build(net, n_vs, fixed=list(sensors)))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except LeakLocError as exc:
        raise StageError(name, exc) from exc


def train_from_residuals(residual_full, labels, net: Network, sensors, virtual, method,
                         leak_nodes, hyper: Hyper, sigma=None, manifest=None) -> TrainedModel:
    """LC-KSVD on the physical + virtual rows of an interpolated residual field."""
    hp = hyper.resolved(len(leak_nodes))
    rows = sensor_indices(net, list(sensors) + list(virtual))
    Y, zero = normalize_residuals(residual_full[rows])
    if zero.any():
        log.warning("%d zero-residual training columns excluded", int(zero.sum()))
    keep = ~zero
    H, Q = _stage("labels", build_label_matrices, labels[keep], len(leak_nodes), hp.n_atom)
    triple = _stage("lc-ksvd", lcksvd_train, Y[:, keep], H, Q, hp.s, hp.alpha, hp.beta, hp.n_atom, hp.K)
    man = dict(manifest or {})
    man["excluded_zero_columns"] = int(zero.sum())
    return TrainedModel(triple, net, list(sensors), list(virtual), method, list(leak_nodes),
                        net.conductivities if sigma is None else np.asarray(sigma, dtype=float),
                        hp, man)


def train_pipeline(dataset: Dataset, sigma=None, hyper: Hyper | None = None, n_vs: int = 0,
                   method: str = AWGSI, threads: int = 1) -> TrainedModel:
    """Interpolate the training columns, pick virtual sensors, train LC-KSVD."""
    hyper = hyper or Hyper()
    net = dataset.network
    n_free = net.n - len(dataset.sensors)
    if not 0 <= n_vs <= n_free:
        raise ValueError(f"n_vs must be in [0, {n_free}]")
    train = dataset.train_set()
    if train.n_samp == 0:
        raise ValueError("dataset has no training columns")
    interp = _stage("interpolate", Interpolator(net, dataset.sensors, method, sigma, hyper.mu, hyper.eps_delta).batch,
                    train.nominal_sensor, train.leak_sensor, threads)
    virtual = _stage("placement", virtual_sensors, net, dataset.sensors, n_vs)
    manifest = {"dataset_hash": dataset.content_hash(), "n_vs": n_vs,
                "n_train": train.n_samp, "config": dataset.config}
    return train_from_residuals(interp.residual, train.labels, net, dataset.sensors, virtual,
                                method, dataset.leak_nodes, hyper, sigma, manifest)


@dataclass
class Prediction:
    classes: np.ndarray
    nodes: list[str]
    scores: np.ndarray
    degenerate: np.ndarray  # zero residual: prediction unreliable


def predict_from_residuals(model: TrainedModel, residual_full) -> Prediction:
    rows = sensor_indices(model.network, model.rows)
    Y, zero = normalize_residuals(residual_full[rows])
    cls, scores = classify_batch(Y, model.triple)
    return Prediction(cls, [model.leak_nodes[c] for c in cls], scores, zero)


def apply_pipeline(model: TrainedModel, nominal, leak, threads: int = 1) -> Prediction:
    """Localise one (vectors) or many (matrices, one column each) leak events."""
    nominal = np.asarray(nominal, dtype=float)
    leak = np.asarray(leak, dtype=float)
    if nominal.shape[0] != len(model.sensors) or leak.shape[0] != len(model.sensors):
        raise SensorMismatch(f"model expects {len(model.sensors)} sensor readings")
    interp = Interpolator(model.network, model.sensors, model.method, model.sigma,
                          model.hyper.mu, model.hyper.eps_delta)
    res = interp.batch(nominal, leak, threads).residual
    return predict_from_residuals(model, res)


# -- localisation metrics ------------------------------------------------------------


def localization_accuracy(predicted: Sequence[str], truth: Sequence[str], net: Network, k: int) -> float:
    """Percentage of samples whose true node is within ``k`` hops of the prediction."""
    if k < 0:
        raise ValueError("depth must be non-negative")
    if len(predicted) != len(truth):
        raise DimensionMismatch("prediction and truth lengths differ")
    if not predicted:
        return float("nan")
    try:
        p = net.indices(predicted)
        t = net.indices(truth)
    except KeyError as exc:
        raise UnknownNode(f"unknown node {exc}") from None
    return float(100.0 * np.mean(net.hop_matrix[p, t] <= k))


def baseline_distance_localizer(residual, net: Network, candidates=None) -> int:
    """Node index with the most negative residual (lowest index on ties)."""
    residual = np.asarray(residual, dtype=float)
    cand = net.junctions if candidates is None else np.asarray(candidates, dtype=np.int64)
    return int(cand[np.argmin(residual[cand])])


# -- virtual-sensor sweep ------------------------------------------------------------


@dataclass
class EvalReport:
    cells: list[dict]
    rmse: list[dict]
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"cells": self.cells, "rmse": self.rmse, "config": self.config},
                          sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        return cls(doc["cells"], doc["rmse"], doc.get("config", {}))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def accuracy_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            for k, acc in sorted(c.get("accuracy", {}).items(), key=lambda kv: int(kv[0])):
                rows.append({"level": c["level"], "method": c["method"], "n_vs": c["n_vs"],
                             "depth": int(k), "accuracy": acc,
                             "baseline": c.get("baseline", {}).get(k), "status": c["status"]})
        return rows

    def _csv(self, rows) -> str:
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        return buf.getvalue()

    def accuracy_csv(self) -> str:
        return self._csv(self.accuracy_rows())

    def rmse_csv(self) -> str:
        return self._csv(self.rmse)

    def save(self, directory) -> str:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(self.to_json())
        (d / "accuracy.csv").write_text(self.accuracy_csv())
        (d / "rmse.csv").write_text(self.rmse_csv())
        return self.content_hash()

    def cell(self, level, method, n_vs) -> dict:
        for c in self.cells:
            if c["level"] == level and c["method"] == method and c["n_vs"] == n_vs:
                return c
        raise KeyError((level, method, n_vs))


def evaluate_cell(model: TrainedModel, test: Dataset, residual_test, depths) -> dict:
    pred = predict_from_residuals(model, residual_test)
    truth = [test.leak_nodes[c] for c in test.labels]
    net = test.network
    base_nodes = [net.nodes[baseline_distance_localizer(residual_test[:, j], net)].id
                  for j in range(residual_test.shape[1])]
    return {
        "accuracy": {str(k): localization_accuracy(pred.nodes, truth, net, k) for k in depths},
        "baseline": {str(k): localization_accuracy(base_nodes, truth, net, k) for k in depths},
        "n_test": len(truth),
        "n_degenerate": int(pred.degenerate.sum()),
        "model_hash": model.content_hash(),
    }


def vs_sweep(datasets: Mapping[float, Dataset], vs_counts: Sequence[int], methods=METHODS,
             hyper: Hyper | None = None, depths=(0, 1, 2), sigma=None, threads: int = 1):
    """Train and evaluate one model per (level, method, n_vs) cell.

    ``datasets`` maps uncertainty level to a dataset sharing network and
    sensors.  Returns ``(EvalReport, timings)``; timings are kept apart so the
    report itself is reproducible byte for byte.
    """
    vs_counts = list(vs_counts)
    if vs_counts != sorted(vs_counts):
        raise ValueError("vs_counts must be sorted ascending")
    hyper = hyper or Hyper()
    cells, rmse_rows, timings = [], [], []
    for level in sorted(datasets):
        ds = datasets[level]
        net = ds.network
        nested = virtual_sensors(net, ds.sensors, max(vs_counts) if vs_counts else 0)
        train, test = ds.train_set(), ds.test_set()
        for method in methods:
            t0 = time.perf_counter()
            ip = Interpolator(net, ds.sensors, method, sigma, hyper.mu, hyper.eps_delta)
            try:
                full = ip.batch(ds.nominal_sensor, ds.leak_sensor, threads)
            except LeakLocError as exc:
                for n_vs in vs_counts:
                    cells.append({"level": level, "method": method, "n_vs": n_vs,
                                  "status": f"failed: interpolate: {exc}"})
                continue
            t_interp = time.perf_counter() - t0
            if ds.leak_full is not None:
                table = head_and_residual_errors(ds, method, full)
                rmse_rows += table.to_rows(level=level, method=method)
            res_train = full.residual[:, ds.train]
            res_test = full.residual[:, ~ds.train]
            for n_vs in vs_counts:
                t1 = time.perf_counter()
                cell = {"level": level, "method": method, "n_vs": n_vs}
                try:
                    model = train_from_residuals(
                        res_train, train.labels, net, ds.sensors, nested[:n_vs], method,
                        ds.leak_nodes, hyper, sigma, {"dataset_hash": ds.content_hash(), "n_vs": n_vs})
                    cell.update(evaluate_cell(model, test, res_test, depths))
                    cell["status"] = "ok"
                except LeakLocError as exc:
                    cell["status"] = f"failed: {exc}"
                cells.append(cell)
                timings.append({"level": level, "method": method, "n_vs": n_vs,
                                "interpolate_s": t_interp, "train_eval_s": time.perf_counter() - t1})
    config = {"vs_counts": vs_counts, "methods": list(methods), "depths": list(depths),
              "hyper": hyper.to_dict(), "levels": sorted(datasets)}
    return EvalReport(cells, rmse_rows, config), timings
