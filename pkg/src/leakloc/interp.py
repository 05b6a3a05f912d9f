"""Graph-signal interpolation of heads and head residuals.

Three interpolators share the Laplacian machinery:

* GSI: inverse-length weights, objective ``||Phi^-1 L psi||^2`` plus a
  slack-penalised directionality constraint ``Lambda psi <= gamma``;
* sGSI: harmonic interpolation ``min psi' L psi`` (no directionality);
* AW-GSI: weights linearised from the Hazen-Williams node balance around a
  baseline head field, used on residuals with an equality-only objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, LeakLocError, with_context
from .hydraulics import EPS_DELTA, HW_DERIV_EXP, HW_EXP
from .network import Network, approx_incidence_structural, incidence_from_heads
from .qp import QPDiagnostics, qp_solve

LENGTH_BASED = "length_based"
ANALYTICAL = "analytical"
GAMMA_FLOOR = 1e-9
DEFAULT_MU = 10.0


@dataclass(frozen=True)
class Weights:
    omega: np.ndarray
    provenance: str

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def phi(self) -> np.ndarray:
        return self.omega.sum(axis=1)

    @property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.phi) - self.omega

    @property
    def eta(self) -> np.ndarray:
        phi = self.phi
        safe = np.where(phi > 0, phi, 1.0)
        return self.omega / safe[:, None]

    def normalized_laplacian(self) -> np.ndarray:
        """``Phi^-1 L``; the GSI / AW-GSI objectives are its squared norm."""
        phi = self.phi
        if np.any(phi <= 0):
            raise ValueError("weights leave an isolated node (zero degree)")
        return self.laplacian / phi[:, None]

    def objective_matrix(self) -> np.ndarray:
        M = self.normalized_laplacian()
        Q = M.T @ M
        return 0.5 * (Q + Q.T)


@dataclass
class InterpolationResult:
    estimate: np.ndarray
    objective: float
    diagnostics: QPDiagnostics
    gamma: float | None = None


def selection_matrix(n: int, sensor_idx) -> np.ndarray:
    sensor_idx = np.asarray(sensor_idx, dtype=np.int64)
    if len(set(sensor_idx.tolist())) != sensor_idx.size:
        raise ValueError("duplicate sensor index")
    Z = np.zeros((sensor_idx.size, n))
    Z[np.arange(sensor_idx.size), sensor_idx] = 1.0
    return Z


def _check_measurements(weights: Weights, meas, sensor_idx):
    meas = np.asarray(meas, dtype=float)
    sensor_idx = np.asarray(sensor_idx, dtype=np.int64)
    if meas.shape != sensor_idx.shape:
        raise DimensionMismatch(f"{meas.size} measurements for {sensor_idx.size} sensors")
    if not np.all(np.isfinite(meas)):
        raise ValueError("measurements must be finite")
    if sensor_idx.size == 0:
        raise ValueError("at least one sensor is required")
    return meas, sensor_idx


def gsi_weights(net: Network) -> Weights:
    """``omega_ij = sum of 1/length`` over the pipes joining i and j."""
    omega = np.zeros((net.n, net.n))
    w = 1.0 / net.lengths
    np.add.at(omega, (net.sources, net.sinks), w)
    np.add.at(omega, (net.sinks, net.sources), w)
    return Weights(omega, LENGTH_BASED)


def gsi_solve(weights: Weights, lam_hat, meas, sensor_idx, mu: float = DEFAULT_MU,
              tol: float = 1e-8) -> InterpolationResult:
    """Directional GSI.

    Sensor heads are substituted out first, so the remaining QP is over the
    unsensed heads and the slack ``gamma`` only; sensed entries therefore
    equal the measurements exactly.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    meas, sensor_idx = _check_measurements(weights, meas, sensor_idx)
    n = weights.n
    lam_hat = np.asarray(lam_hat, dtype=float)
    if lam_hat.ndim != 2 or lam_hat.shape[1] != n:
        raise DimensionMismatch(f"incidence must have {n} columns")
    m = lam_hat.shape[0]
    M = weights.objective_matrix()
    free = np.setdiff1d(np.arange(n), sensor_idx)
    nf = free.size
    # x = [psi_free, gamma]
    P = np.zeros((nf + 1, nf + 1))
    P[:nf, :nf] = M[np.ix_(free, free)]
    P[nf, nf] = mu
    q = np.zeros(nf + 1)
    q[:nf] = M[np.ix_(free, sensor_idx)] @ meas
    A_in = np.zeros((m + 1, nf + 1))
    A_in[:m, :nf] = lam_hat[:, free]
    A_in[:m, nf] = -1.0
    A_in[m, nf] = -1.0
    b_in = np.concatenate([-lam_hat[:, sensor_idx] @ meas, [-GAMMA_FLOOR]])
    x, diag = qp_solve(P, q, A_ineq=A_in, b_ineq=b_in, tol=tol)
    psi = np.empty(n)
    psi[sensor_idx] = meas
    psi[free] = x[:nf]
    gamma = float(x[nf])
    obj = 0.5 * float(psi @ M @ psi) + 0.5 * mu * gamma**2
    diag.objective = obj
    return InterpolationResult(psi, obj, diag, gamma)


def _equality_interp(P, meas, sensor_idx, n, tol):
    Z = selection_matrix(n, sensor_idx)
    x, diag = qp_solve(P, np.zeros(n), Z, meas, tol=tol)
    # the KKT solve satisfies Zx = b to rounding; pin the sensed entries exactly
    x[sensor_idx] = meas
    return x, diag


def sgsi_solve(weights: Weights, meas, sensor_idx, tol: float = 1e-8) -> InterpolationResult:
    """Harmonic interpolation ``min 0.5 psi' L psi`` with sensed entries fixed."""
    meas, sensor_idx = _check_measurements(weights, meas, sensor_idx)
    L = weights.laplacian
    x, diag = _equality_interp(L, meas, sensor_idx, weights.n, tol)
    return InterpolationResult(x, 0.5 * float(x @ L @ x), diag)


def aw_weights(net: Network, b_hat, baseline, sigma=None, eps_delta: float = EPS_DELTA) -> Weights:
    """Analytical weights linearised around the baseline heads.

    ``omega_ij = sum over pipes (i,j) of sigma**0.54 * |dpsi|**-0.46`` with
    ``dpsi = b_ij (psi_i - psi_j)`` floored at ``eps_delta``.  ``sigma``
    defaults to the network's own (nominal) conductivities.
    """
    baseline = np.asarray(baseline, dtype=float)
    if baseline.shape != (net.n,):
        raise DimensionMismatch(f"expected {net.n} baseline heads")
    b_hat = np.asarray(b_hat, dtype=float)
    sigma = net.conductivities if sigma is None else np.asarray(sigma, dtype=float)
    a, b = net.sources, net.sinks
    sign = b_hat[a, b]
    if np.any(sign == 0):
        raise ValueError("node-node incidence is zero on a pipe")
    drop = sign * (baseline[a] - baseline[b])
    # a B-hat built from the baseline makes drop >= 0; the magnitude is what enters
    drop = np.maximum(np.abs(drop), eps_delta)
    w = sigma**HW_EXP * drop**HW_DERIV_EXP
    omega = np.zeros((net.n, net.n))
    np.add.at(omega, (a, b), w)
    np.add.at(omega, (b, a), w)
    return Weights(omega, ANALYTICAL)


def awgsi_solve(weights: Weights, residual_meas, sensor_idx, tol: float = 1e-8) -> InterpolationResult:
    """Residual interpolation ``min 0.5 ||Phi^-1 L d||^2`` with sensed residuals fixed."""
    if weights.provenance != ANALYTICAL:
        raise ValueError("AW-GSI needs analytical weights")
    meas, sensor_idx = _check_measurements(weights, residual_meas, sensor_idx)
    M = weights.objective_matrix()
    x, diag = _equality_interp(M, meas, sensor_idx, weights.n, tol)
    return InterpolationResult(x, 0.5 * float(x @ M @ x), diag)


@dataclass
class AwGsiOutput:
    residual: np.ndarray
    baseline: np.ndarray  # sGSI estimate of the nominal heads
    b_hat: np.ndarray
    weights: Weights
    result: InterpolationResult
    stages: dict = field(default_factory=dict)


def awgsi_pipeline(net: Network, nominal_meas, leak_meas, sensor_idx, sigma=None,
                   eps_delta: float = EPS_DELTA, base_weights: Weights | None = None) -> AwGsiOutput:
    """Nominal sGSI -> incidence -> analytical weights -> residual solve."""
    nominal_meas = np.asarray(nominal_meas, dtype=float)
    leak_meas = np.asarray(leak_meas, dtype=float)
    if nominal_meas.shape != leak_meas.shape:
        raise DimensionMismatch("nominal and leak measurements differ in length")
    step = 1
    try:
        base = sgsi_solve(base_weights or gsi_weights(net), nominal_meas, sensor_idx)
        step = 2
        b_hat = incidence_from_heads(net, base.estimate)
        step = 3
        weights = aw_weights(net, b_hat, base.estimate, sigma, eps_delta)
        step = 5
        delta = leak_meas - nominal_meas
        step = 6
        res = awgsi_solve(weights, delta, sensor_idx)
    except (LeakLocError, ValueError) as exc:
        raise with_context(exc, f"AW-GSI step {step}") from None
    return AwGsiOutput(res.estimate, base.estimate, b_hat, weights, res)


def gsi_incidence(net: Network) -> np.ndarray:
    """Structural edge-node incidence used by GSI (shortest-path heuristic)."""
    return approx_incidence_structural(net)
