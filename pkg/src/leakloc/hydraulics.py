"""Steady-state Hazen-Williams hydraulics for gravity-fed networks.

Junction heads are found by damped Newton iteration on nodal mass balance,
with reservoir heads held fixed.  A leak is an emitter at one junction whose
outflow is ``eps * sqrt(pressure)``.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NoConvergence, TargetInfeasible
from .network import Network

log = logging.getLogger(__name__)

HW_EXP = 0.54
HW_DERIV_EXP = HW_EXP - 1.0  # -0.46
EMITTER_EXP = 0.5
EPS_DELTA = 1e-6


def hw_flow(sigma, psi_i, psi_j):
    """Pipe flow from node i to node j: ``sigma**0.54 * sign(d) * |d|**0.54``."""
    d = np.asarray(psi_i, dtype=float) - np.asarray(psi_j, dtype=float)
    out = np.asarray(sigma, dtype=float) ** HW_EXP * np.sign(d) * np.abs(d) ** HW_EXP
    return out[()] if out.ndim == 0 else out


def hw_flow_derivative(sigma, dpsi, eps_delta: float = EPS_DELTA):
    """d(flow)/d(head difference), with |dpsi| floored at ``eps_delta``."""
    mag = np.maximum(np.abs(np.asarray(dpsi, dtype=float)), eps_delta)
    return HW_EXP * np.asarray(sigma, dtype=float) ** HW_EXP * mag**HW_DERIV_EXP


@dataclass(frozen=True)
class DemandPattern:
    multipliers: tuple[float, ...]

    def __post_init__(self):
        mult = tuple(float(x) for x in self.multipliers)
        if not mult or any(not (x > 0) for x in mult):
            raise ValueError("demand pattern multipliers must be positive and non-empty")
        object.__setattr__(self, "multipliers", mult)

    @property
    def n_t(self) -> int:
        return len(self.multipliers)

    def __getitem__(self, t: int) -> float:
        return self.multipliers[t % self.n_t]


@dataclass(frozen=True)
class LeakSpec:
    node: str
    emitter_coefficient: float | None = None
    target_flow: float | None = None

    def __post_init__(self):
        if (self.emitter_coefficient is None) == (self.target_flow is None):
            raise ValueError("set exactly one of emitter_coefficient / target_flow")
        value = self.emitter_coefficient if self.target_flow is None else self.target_flow
        if value < 0:
            raise ValueError("leak parameters must be non-negative")


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 200
    eps_delta: float = EPS_DELTA
    max_halvings: int = 40
    armijo: float = 0.25
    init_offset: float = 1.0


@dataclass
class HydraulicScenario:
    heads: np.ndarray
    flows: np.ndarray
    pressures: np.ndarray
    demands: np.ndarray
    network: Network
    leak: LeakSpec | None = None
    emitter_coefficient: float = 0.0
    leak_flow: float = 0.0
    time_index: int | None = None
    iterations: int = 0
    max_imbalance: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def reservoir_inflow(self) -> float:
        net = self.network
        out = np.bincount(net.sources, self.flows, net.n) - np.bincount(net.sinks, self.flows, net.n)
        return float(out[net.reservoirs].sum())


class _Balance:
    """Junction mass balance ``inflow - demand - leak`` and its Jacobian."""

    def __init__(self, net: Network, demands, leak_idx, eps, opts):
        self.net = net
        self.J = net.junctions
        self.pos = -np.ones(net.n, dtype=np.int64)
        self.pos[self.J] = np.arange(len(self.J))
        self.sig54 = net.conductivities**HW_EXP
        self.src, self.snk = net.sources, net.sinks
        self.demands = demands
        self.leak_idx = leak_idx
        self.eps = eps
        self.opts = opts

    def flows(self, h):
        d = h[self.src] - h[self.snk]
        return self.sig54 * np.sign(d) * np.abs(d) ** HW_EXP, d

    def leak(self, h):
        if self.leak_idx is None or self.eps == 0.0:
            return 0.0, 0.0
        rho = h[self.leak_idx] - self.net.elevations[self.leak_idx]
        if rho <= 0:
            return 0.0, 0.0
        q = self.eps * rho**EMITTER_EXP
        dq = EMITTER_EXP * self.eps * max(rho, self.opts.eps_delta) ** (EMITTER_EXP - 1.0)
        return q, dq

    def residual(self, h):
        n = self.net.n
        q, _ = self.flows(h)
        inflow = np.bincount(self.snk, q, n) - np.bincount(self.src, q, n)
        F = inflow - self.demands
        if self.leak_idx is not None:
            F[self.leak_idx] -= self.leak(h)[0]
        return F[self.J]

    def jacobian(self, h):
        nJ = len(self.J)
        _, d = self.flows(h)
        g = HW_EXP * self.sig54 * np.maximum(np.abs(d), self.opts.eps_delta) ** HW_DERIV_EXP
        a, b = self.pos[self.src], self.pos[self.snk]
        Jm = np.zeros((nJ, nJ))
        for u, w, sign in ((a, a, -1.0), (b, b, -1.0), (a, b, 1.0), (b, a, 1.0)):
            keep = (u >= 0) & (w >= 0)
            np.add.at(Jm, (u[keep], w[keep]), sign * g[keep])
        if self.leak_idx is not None:
            Jm[self.pos[self.leak_idx], self.pos[self.leak_idx]] -= self.leak(h)[1]
        return Jm


def steady_state_solve(
    net: Network,
    demands=None,
    leak: LeakSpec | None = None,
    opts: SolverOptions | None = None,
    time_index: int | None = None,
) -> HydraulicScenario:
    """Solve nodal mass balance for junction heads.

    ``demands`` is a length-n vector of junction consumptions [m3/s]
    (reservoir entries ignored); defaults to the network base demands.
    """
    opts = opts or SolverOptions()
    demands = net.base_demands.copy() if demands is None else np.array(demands, dtype=float)
    if demands.shape != (net.n,):
        raise DimensionMismatch(f"expected {net.n} demands, got shape {demands.shape}")
    demands[net.reservoirs] = 0.0
    if np.any(demands < 0):
        raise ValueError("demands must be non-negative")

    eps = 0.0
    leak_idx = None
    if leak is not None:
        leak_idx = net.index(leak.node)
        if net.nodes[leak_idx].is_reservoir:
            raise ValueError(f"leak node {leak.node!r} is a reservoir")
        if leak.target_flow is not None:
            eps = calibrate_emitter(net, demands, leak.node, leak.target_flow, opts)
        else:
            eps = float(leak.emitter_coefficient)

    bal = _Balance(net, demands, leak_idx, eps, opts)
    h = np.empty(net.n)
    h[net.reservoirs] = net.fixed_heads
    h[net.junctions] = net.fixed_heads.max() - opts.init_offset
    J = net.junctions

    F = bal.residual(h)
    fnorm = np.linalg.norm(F)
    it = 0
    while np.max(np.abs(F), initial=0.0) > opts.tol:
        if it >= opts.max_iter:
            raise NoConvergence(
                f"Newton did not converge in {opts.max_iter} iterations "
                f"(max imbalance {np.max(np.abs(F)):.3e} m3/s)"
            )
        it += 1
        step = np.linalg.solve(bal.jacobian(h), -F)
        # sufficient-decrease halving; near-stagnant pipes (|dpsi| below the
        # floor) make full steps overshoot, and plain decrease would accept them
        t, best = 1.0, None
        for _ in range(opts.max_halvings):
            trial = h.copy()
            trial[J] += t * step
            F_new = bal.residual(trial)
            new_norm = np.linalg.norm(F_new)
            if best is None or new_norm < best[2]:
                best = (trial, F_new, new_norm)
            if new_norm <= (1.0 - opts.armijo * t) * fnorm:
                break
            t *= 0.5
        else:
            if best[2] >= fnorm:
                raise NoConvergence(
                    f"line search stalled at iteration {it} (imbalance {np.max(np.abs(F)):.3e})"
                )
            trial, F_new, new_norm = best
        h, F, fnorm = trial, F_new, new_norm

    flows, _ = bal.flows(h)
    pressures = h - net.elevations
    scen = HydraulicScenario(
        heads=h,
        flows=flows,
        pressures=pressures,
        demands=demands,
        network=net,
        leak=leak,
        emitter_coefficient=eps,
        time_index=time_index,
        iterations=it,
        max_imbalance=float(np.max(np.abs(F), initial=0.0)),
    )
    if leak_idx is not None:
        scen.leak_flow = float(bal.leak(h)[0])
        if pressures[leak_idx] < 0:
            msg = f"NegativePressureAtEmitter: pressure {pressures[leak_idx]:.3f} m at {leak.node}"
            scen.warnings.append(msg)
            log.warning(msg)
    return scen


def calibrate_emitter(
    net: Network,
    demands,
    node: str,
    target_flow: float,
    opts: SolverOptions | None = None,
    flow_tol: float = 1e-7,
    max_bisect: int = 200,
) -> float:
    """Emitter coefficient whose simulated leak outflow equals ``target_flow``.

    The bracket is seeded from a fixed-outflow solve (which has the same
    steady state as the calibrated emitter) and widened by doubling until it
    straddles the target; bisection then narrows it.
    """
    if target_flow < 0:
        raise ValueError("target_flow must be non-negative")
    if target_flow == 0:
        return 0.0
    opts = opts or SolverOptions()
    demands = net.base_demands.copy() if demands is None else np.array(demands, dtype=float)
    idx = net.index(node)

    fixed = demands.copy()
    fixed[idx] += target_flow
    try:
        rho = steady_state_solve(net, fixed, None, opts).pressures[idx]
    except NoConvergence as exc:
        raise TargetInfeasible(f"network cannot deliver {target_flow} m3/s at {node}: {exc}") from exc
    if rho <= 0:
        raise TargetInfeasible(
            f"pressure at {node} collapses ({rho:.3f} m) before {target_flow} m3/s leaks"
        )
    guess = target_flow / math.sqrt(rho)

    def excess(eps):
        return steady_state_solve(net, demands, LeakSpec(node, eps), opts).leak_flow - target_flow

    f_guess = excess(guess)
    if abs(f_guess) <= flow_tol:
        return guess
    width = max(abs(guess) * 1e-3, 1e-12)
    lo, hi = (guess, guess + width) if f_guess < 0 else (max(guess - width, 0.0), guess)
    for _ in range(60):
        f_lo, f_hi = excess(lo), excess(hi)
        if f_lo <= 0 <= f_hi:
            break
        width *= 2.0
        if f_hi < 0:
            lo, hi = hi, hi + width
        else:
            lo, hi = max(lo - width, 0.0), lo
    else:
        raise TargetInfeasible(f"could not bracket emitter coefficient for {node}")
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        f_mid = excess(mid)
        if abs(f_mid) <= flow_tol:
            return mid
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    raise NoConvergence(f"emitter bisection for {node} did not reach {flow_tol} m3/s")


# -- uncertainty and sensing ---------------------------------------------------------


@dataclass(frozen=True)
class UncertaintySpec:
    level: float = 0.0
    seed: int = 0
    targets: frozenset = frozenset({"diameter", "roughness", "demand"})

    def __post_init__(self):
        if not (0.0 <= self.level <= 0.05):
            raise ValueError("uncertainty level must lie in [0, 0.05]")
        object.__setattr__(self, "targets", frozenset(self.targets))
        unknown = self.targets - {"diameter", "roughness", "demand"}
        if unknown:
            raise ValueError(f"unknown uncertainty targets {sorted(unknown)}")


def _unit_draw(seed: int, key: str) -> float:
    """Uniform(-1, 1) draw from a generator keyed by (seed, quantity id)."""
    digest = int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")
    return float(np.random.default_rng([int(seed) & 0xFFFFFFFFFFFF, digest]).uniform(-1.0, 1.0))


def perturbation_factors(spec: UncertaintySpec, kind: str, ids: Sequence[str]) -> np.ndarray:
    if spec.level == 0.0:
        return np.ones(len(ids))
    return np.array([1.0 + spec.level * _unit_draw(spec.seed, f"{kind}/{i}") for i in ids])


def apply_uncertainty(net: Network, pattern: DemandPattern, spec: UncertaintySpec):
    """Return perturbed copies ``(network, pattern)``; inputs are untouched.

    Every targeted quantity ``x`` becomes ``x * (1 + u)`` with
    ``u ~ U(-level, level)``.  The ``demand`` target covers junction base
    demands and the hourly pattern multipliers.
    """
    if spec.level == 0.0:
        return net, pattern
    pipe_ids = [p.id for p in net.pipes]
    diam = net.diameters
    rough = net.roughness
    if "diameter" in spec.targets:
        diam = diam * perturbation_factors(spec, "diameter", pipe_ids)
    if "roughness" in spec.targets:
        rough = rough * perturbation_factors(spec, "roughness", pipe_ids)
    new_net = net.replace_pipes(diam, rough)
    new_pattern = pattern
    if "demand" in spec.targets:
        from dataclasses import replace

        nodes = []
        for nd in new_net.nodes:
            if nd.is_reservoir:
                nodes.append(nd)
            else:
                f = perturbation_factors(spec, "demand", [nd.id])[0]
                nodes.append(replace(nd, base_demand=nd.base_demand * f))
        new_net = Network(tuple(nodes), new_net.pipes, new_net.title, new_net.patterns)
        hours = [str(t) for t in range(pattern.n_t)]
        new_pattern = DemandPattern(
            tuple(np.array(pattern.multipliers) * perturbation_factors(spec, "pattern", hours))
        )
    return new_net, new_pattern


def quantize_sensor(head, step: float = 0.01):
    """Round to the nearest ``step`` (1 cm), halves away from zero."""
    h = np.asarray(head, dtype=float)
    scaled = np.round(np.abs(h) / step, 9)  # absorb representation error first
    out = np.sign(h) * np.floor(scaled + 0.5) * step
    out = np.round(out, 10)
    return out[()] if out.ndim == 0 else out
