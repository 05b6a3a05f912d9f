"""Leak / leak-free scenario generation and dataset persistence.

Every column of a dataset is one (leak node, leak size, hour) triple.  Column
order is leak node, then size (training sizes before test sizes), then hour.
The nominal column at the same position shares the hour (demand level) of its
leak column but draws its own parameter uncertainty, as a real leak-free
reference model would.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IntegrityError, LeakLocError, with_context
from .hydraulics import (
    DemandPattern,
    LeakSpec,
    SolverOptions,
    UncertaintySpec,
    apply_uncertainty,
    calibrate_emitter,
    quantize_sensor,
    steady_state_solve,
)
from .matrix_io import read_matrix, write_matrix
from .network import Network, network_to_dict, network_from_dict, sensor_indices

TRAIN_SIZES = (0.004, 0.005, 0.006, 0.007)
TEST_SIZES = (0.0045, 0.0055, 0.0065)


def default_hours(n_t: int) -> list[int]:
    """Evenly spaced hours of the day, e.g. n_t=4 -> [0, 6, 12, 18]."""
    return [int(24 * k // n_t) for k in range(n_t)]


def _derive_seed(seed: int, *parts) -> int:
    key = "/".join(str(p) for p in (seed, *parts)).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=6).digest(), "little")


@dataclass(frozen=True)
class DatasetConfig:
    sensors: tuple[str, ...]
    leak_nodes: tuple[str, ...] | None = None
    n_class: int | None = None
    hours: tuple[int, ...] | None = None
    n_t: int | None = None
    train_sizes: tuple[float, ...] = TRAIN_SIZES
    test_sizes: tuple[float, ...] = TEST_SIZES
    uncertainty: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "train_sizes", tuple(float(x) for x in self.train_sizes))
        object.__setattr__(self, "test_sizes", tuple(float(x) for x in self.test_sizes))
        if self.hours is None:
            object.__setattr__(self, "hours", tuple(default_hours(self.n_t or 24)))
        else:
            object.__setattr__(self, "hours", tuple(int(h) for h in self.hours))
        if self.n_t is not None and self.n_t != len(self.hours):
            raise ValueError(f"n_t={self.n_t} disagrees with {len(self.hours)} hours")
        if self.leak_nodes is not None:
            object.__setattr__(self, "leak_nodes", tuple(self.leak_nodes))
        if set(self.train_sizes) & set(self.test_sizes):
            raise ValueError("train and test leak sizes must be disjoint")
        if any(s < 0 for s in self.train_sizes + self.test_sizes):
            raise ValueError("leak sizes must be non-negative")
        if not self.train_sizes and not self.test_sizes:
            raise ValueError("no leak sizes configured")
        UncertaintySpec(self.uncertainty, self.seed)  # range check

    @property
    def sizes(self) -> tuple[float, ...]:
        return self.train_sizes + self.test_sizes

    def resolve_leak_nodes(self, net: Network) -> list[str]:
        if self.leak_nodes is not None:
            for v in self.leak_nodes:
                if net.node(v).is_reservoir:
                    raise ValueError(f"leak node {v!r} is a reservoir")
            return list(self.leak_nodes)
        junctions = [net.nodes[i].id for i in net.junctions]
        k = len(junctions) if self.n_class is None else self.n_class
        if not 1 <= k <= len(junctions):
            raise ValueError(f"n_class must be in [1, {len(junctions)}]")
        return junctions[:k]


@dataclass
class Dataset:
    """Single-network leak dataset; matrices are (rows x columns)."""

    network: Network
    sensors: list[str]
    leak_nodes: list[str]
    labels: np.ndarray  # class index per column
    sizes: np.ndarray  # leak target flow per column [m3/s]
    hours: np.ndarray
    train: np.ndarray  # bool mask
    leak_sensor: np.ndarray  # quantized heads, n_zeta x N
    nominal_sensor: np.ndarray
    leak_full: np.ndarray | None  # ground-truth heads, n x N
    nominal_full: np.ndarray | None
    leak_flows: np.ndarray
    emitters: np.ndarray
    config: dict = field(default_factory=dict)
    imbalance: np.ndarray | None = None  # worst nodal flow imbalance of the two solves [m3/s]

    @property
    def n_samp(self) -> int:
        return self.labels.size

    @property
    def n_class(self) -> int:
        return len(self.leak_nodes)

    @property
    def n_train(self) -> int:
        return int(self.train.sum())

    @property
    def n_test(self) -> int:
        return self.n_samp - self.n_train

    @property
    def sensor_idx(self) -> np.ndarray:
        return sensor_indices(self.network, self.sensors)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        pick = (lambda a: None if a is None else a[:, mask])
        return Dataset(
            self.network, list(self.sensors), list(self.leak_nodes), self.labels[mask],
            self.sizes[mask], self.hours[mask], self.train[mask], self.leak_sensor[:, mask],
            self.nominal_sensor[:, mask], pick(self.leak_full), pick(self.nominal_full),
            self.leak_flows[mask], self.emitters[mask], dict(self.config),
            None if self.imbalance is None else self.imbalance[mask],
        )

    def train_set(self) -> "Dataset":
        return self.subset(self.train)

    def test_set(self) -> "Dataset":
        return self.subset(~self.train)

    # -- persistence -------------------------------------------------------------

    def _matrices(self) -> dict[str, np.ndarray]:
        mats = {"leak_sensor": self.leak_sensor, "nominal_sensor": self.nominal_sensor}
        if self.leak_full is not None:
            mats["leak_full"] = self.leak_full
            mats["nominal_full"] = self.nominal_full
        return mats

    def manifest(self) -> dict:
        man = {
            "format": "leakloc-dataset/1",
            "sensors": self.sensors,
            "leak_nodes": self.leak_nodes,
            "labels": self.labels.tolist(),
            "sizes": self.sizes.tolist(),
            "hours": self.hours.tolist(),
            "train": self.train.astype(int).tolist(),
            "leak_flows": self.leak_flows.tolist(),
            "emitters": self.emitters.tolist(),
            "config": self.config,
        }
        if self.imbalance is not None:
            man["imbalance"] = self.imbalance.tolist()
        return man

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(network_to_dict(self.network), sort_keys=True).encode())
        h.update(json.dumps(self.manifest(), sort_keys=True).encode())
        for name, a in sorted(self._matrices().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, directory) -> str:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        man = self.manifest()
        man["files"] = {name: write_matrix(d / f"{name}.bin", a) for name, a in self._matrices().items()}
        net_text = json.dumps(network_to_dict(self.network), sort_keys=True, indent=1)
        (d / "network.json").write_text(net_text)
        man["files"]["network.json"] = hashlib.sha256(net_text.encode()).hexdigest()
        man["content_hash"] = self.content_hash()
        (d / "manifest.json").write_text(json.dumps(man, sort_keys=True, indent=1))
        return man["content_hash"]

    @classmethod
    def load(cls, directory) -> "Dataset":
        d = Path(directory)
        try:
            man = json.loads((d / "manifest.json").read_text())
            net_text = (d / "network.json").read_text()
        except (OSError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"cannot read dataset at {d}: {exc}") from exc
        files = man.get("files", {})
        if hashlib.sha256(net_text.encode()).hexdigest() != files.get("network.json"):
            raise IntegrityError(f"{d / 'network.json'}: content hash mismatch")
        mats = {
            name: read_matrix(d / f"{name}.bin", digest)
            for name, digest in files.items() if name != "network.json"
        }
        ds = cls(
            network=network_from_dict(json.loads(net_text)),
            sensors=list(man["sensors"]),
            leak_nodes=list(man["leak_nodes"]),
            labels=np.array(man["labels"], dtype=np.int64),
            sizes=np.array(man["sizes"], dtype=float),
            hours=np.array(man["hours"], dtype=np.int64),
            train=np.array(man["train"], dtype=bool),
            leak_sensor=mats["leak_sensor"],
            nominal_sensor=mats["nominal_sensor"],
            leak_full=mats.get("leak_full"),
            nominal_full=mats.get("nominal_full"),
            leak_flows=np.array(man["leak_flows"], dtype=float),
            emitters=np.array(man["emitters"], dtype=float),
            config=man.get("config", {}),
            imbalance=np.array(man["imbalance"], dtype=float) if "imbalance" in man else None,
        )
        if ds.content_hash() != man.get("content_hash"):
            raise IntegrityError(f"{d}: dataset content hash mismatch")
        return ds


def generate_dataset(
    net: Network,
    pattern: DemandPattern,
    config: DatasetConfig,
    threads: int = 1,
    opts: SolverOptions | None = None,
) -> Dataset:
    """Simulate one leak and one leak-free scenario per (node, size, hour)."""
    opts = opts or SolverOptions()
    leak_nodes = config.resolve_leak_nodes(net)
    sens = sensor_indices(net, config.sensors)
    sizes = config.sizes
    n_train_sizes = len(config.train_sizes)
    hours = list(config.hours)
    for h in hours:
        if not 0 <= h < pattern.n_t:
            raise ValueError(f"hour {h} outside the {pattern.n_t}-entry pattern")

    # emitters are calibrated once on the nominal network at base demand
    def calibrate(job):
        node, q = job
        try:
            return calibrate_emitter(net, net.base_demands, node, q, opts)
        except LeakLocError as exc:
            raise with_context(exc, f"calibrating leak {node} at {q * 1e3:g} l/s") from None

    cal_jobs = [(v, q) for v in leak_nodes for q in sizes]
    jobs = [(c, s, t) for c in range(len(leak_nodes)) for s in range(len(sizes)) for t in range(len(hours))]

    def simulate(job, eps_of):
        c, s, t = job
        node, hour = leak_nodes[c], hours[t]
        try:
            out = []
            for role in ("leak", "nominal"):
                spec = UncertaintySpec(config.uncertainty, _derive_seed(config.seed, role, node, s, hour))
                pnet, ppat = apply_uncertainty(net, pattern, spec)
                demands = pnet.base_demands * ppat[hour]
                leak = LeakSpec(node, eps_of[(node, sizes[s])]) if role == "leak" else None
                out.append(steady_state_solve(pnet, demands, leak, opts, time_index=hour))
            return out
        except LeakLocError as exc:
            raise with_context(exc, f"scenario (leak={node}, size={sizes[s] * 1e3:g} l/s, hour={hour})") from None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        eps_list = list(pool.map(calibrate, cal_jobs))
        eps_of = dict(zip(cal_jobs, eps_list))
        results = list(pool.map(lambda j: simulate(j, eps_of), jobs))

    N = len(jobs)
    leak_full = np.empty((net.n, N))
    nominal_full = np.empty((net.n, N))
    leak_flows = np.empty(N)
    emitters = np.empty(N)
    imbalance = np.empty(N)
    for k, (leak_sc, nom_sc) in enumerate(results):
        leak_full[:, k] = leak_sc.heads
        nominal_full[:, k] = nom_sc.heads
        leak_flows[k] = leak_sc.leak_flow
        emitters[k] = leak_sc.emitter_coefficient
        imbalance[k] = max(leak_sc.max_imbalance, nom_sc.max_imbalance)
    labels = np.array([c for c, _, _ in jobs], dtype=np.int64)
    col_sizes = np.array([sizes[s] for _, s, _ in jobs])
    col_hours = np.array([hours[t] for _, _, t in jobs], dtype=np.int64)
    train = np.array([s < n_train_sizes for _, s, _ in jobs])
    cfg = asdict(config)
    cfg["leak_nodes"] = leak_nodes
    cfg["pattern"] = list(pattern.multipliers)
    return Dataset(
        network=net,
        sensors=list(config.sensors),
        leak_nodes=leak_nodes,
        labels=labels,
        sizes=col_sizes,
        hours=col_hours,
        train=train,
        leak_sensor=quantize_sensor(leak_full[sens]),
        nominal_sensor=quantize_sensor(nominal_full[sens]),
        leak_full=leak_full,
        nominal_full=nominal_full,
        leak_flows=leak_flows,
        emitters=emitters,
        config=json.loads(json.dumps(cfg)),
        imbalance=imbalance,
    )
