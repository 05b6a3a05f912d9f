"""Hot numerical kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``LEAKLOC_DISABLE_NUMBA`` is unset or ``0``.  Both paths implement
the same algorithm; results agree to rounding (supports are identical).

Call :func:`set_backend` to switch at runtime (benchmarks, tests).
"""

from __future__ import annotations

import os
import warnings

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    # parallel kernels may be entered from several Python threads at once
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "threadsafe"
    warnings.filterwarnings("ignore", message="The TBB threading layer requires")
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

RESIDUAL_TOL = 1e-12
DEPENDENT_TOL = 1e-10


def _env_backend() -> str:
    flag = os.environ.get("LEAKLOC_DISABLE_NUMBA", "0").strip().lower()
    if not HAVE_NUMBA or flag not in ("", "0", "false", "no"):
        return "numpy"
    return "numba"


BACKEND = _env_backend()


def set_backend(name: str) -> None:
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError("backend must be 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    BACKEND = name


# -- orthogonal matching pursuit -----------------------------------------------------


def omp_batch_numpy(D: np.ndarray, Y: np.ndarray, s: int) -> np.ndarray:
    """Column-vectorized OMP: every column advances one atom per sweep."""
    n_atom = D.shape[1]
    N = Y.shape[1]
    X = np.zeros((n_atom, N))
    if N == 0 or s == 0:
        return X
    G = D.T @ D
    DtY = D.T @ Y
    R = Y.copy()
    support = np.zeros((N, s), dtype=np.int64)
    size = np.zeros(N, dtype=np.int64)
    active = np.linalg.norm(R, axis=0) >= RESIDUAL_TOL
    cols = np.arange(N)
    coef = np.zeros((N, s))
    for t in range(s):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        C = np.abs(D.T @ R[:, idx])
        if t:
            C[support[idx, :t].T, np.arange(idx.size)[None, :]] = -1.0
        k = np.argmax(C, axis=0)
        if t:
            S = support[idx, :t]
            Gss = G[S[:, :, None], S[:, None, :]]
            g = G[S, k[:, None]]
            w = np.linalg.solve(Gss, g[:, :, None])[:, :, 0]
            schur = G[k, k] - np.einsum("ij,ij->i", g, w)
        else:
            schur = G[k, k]
        ok = schur > DEPENDENT_TOL
        active[idx[~ok]] = False
        idx, k = idx[ok], k[ok]
        if idx.size == 0:
            break
        support[idx, t] = k
        size[idx] = t + 1
        S = support[idx, : t + 1]
        Gss = G[S[:, :, None], S[:, None, :]]
        b = DtY[S, idx[:, None]]
        x = np.linalg.solve(Gss, b[:, :, None])[:, :, 0]
        coef[idx, : t + 1] = x
        R[:, idx] = Y[:, idx] - np.einsum("nmk,mk->nm", D[:, S], x)
        still = np.linalg.norm(R[:, idx], axis=0) >= RESIDUAL_TOL
        active[idx[~still]] = False
    for j in cols:
        if size[j]:
            X[support[j, : size[j]], j] = coef[j, : size[j]]
    return X


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _omp_batch_numba(D, Y, s, G):
        n_ts, n_atom = D.shape
        N = Y.shape[1]
        X = np.zeros((n_atom, N))
        for j in prange(N):
            y = Y[:, j]
            r = y.copy()
            Lc = np.zeros((s, s))
            sel = np.zeros(s, dtype=np.int64)
            used = np.zeros(n_atom, dtype=np.bool_)
            Dty = np.zeros(s)
            x = np.zeros(s)
            cnt = 0
            for t in range(s):
                if np.sqrt(np.sum(r * r)) < RESIDUAL_TOL:
                    break
                best = -1.0
                k = -1
                for a in range(n_atom):
                    if used[a]:
                        continue
                    c = 0.0
                    for i in range(n_ts):
                        c += D[i, a] * r[i]
                    c = abs(c)
                    if c > best:
                        best = c
                        k = a
                if k < 0:
                    break
                # append row to Cholesky factor of G[S, S]
                w = np.zeros(t)
                for p in range(t):
                    acc = G[sel[p], k]
                    for q in range(p):
                        acc -= Lc[p, q] * w[q]
                    w[p] = acc / Lc[p, p]
                schur = G[k, k]
                for p in range(t):
                    schur -= w[p] * w[p]
                if schur <= DEPENDENT_TOL:
                    break
                for p in range(t):
                    Lc[t, p] = w[p]
                Lc[t, t] = np.sqrt(schur)
                sel[t] = k
                used[k] = True
                acc = 0.0
                for i in range(n_ts):
                    acc += D[i, k] * y[i]
                Dty[t] = acc
                cnt = t + 1
                # least squares on the support via two triangular solves
                z = np.zeros(cnt)
                for p in range(cnt):
                    acc = Dty[p]
                    for q in range(p):
                        acc -= Lc[p, q] * z[q]
                    z[p] = acc / Lc[p, p]
                for p in range(cnt - 1, -1, -1):
                    acc = z[p]
                    for q in range(p + 1, cnt):
                        acc -= Lc[q, p] * x[q]
                    x[p] = acc / Lc[p, p]
                for i in range(n_ts):
                    acc = y[i]
                    for p in range(cnt):
                        acc -= D[i, sel[p]] * x[p]
                    r[i] = acc
            for p in range(cnt):
                X[sel[p], j] = x[p]
        return X

    @njit(cache=True, parallel=True)
    def _candidate_scan_numba(dist, current, candidates):
        n = dist.shape[0]
        out = np.empty(candidates.shape[0])
        for c in prange(candidates.shape[0]):
            col = candidates[c]
            acc = 0.0
            for i in range(n):
                d = dist[i, col]
                acc += d if d < current[i] else current[i]
            out[c] = acc / n
        return out


def omp_batch_numba(D: np.ndarray, Y: np.ndarray, s: int) -> np.ndarray:
    D = np.ascontiguousarray(D, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    return _omp_batch_numba(D, Y, int(s), D.T @ D)


def omp_batch(D: np.ndarray, Y: np.ndarray, s: int) -> np.ndarray:
    """Sparse codes (n_atom x N) of every column of ``Y`` with at most ``s`` atoms."""
    D = np.asarray(D, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        return omp_batch(D, Y[:, None], s)[:, 0]
    s = min(int(s), D.shape[1])
    if BACKEND == "numba":
        return omp_batch_numba(D, Y, s)
    return omp_batch_numpy(D, Y, s)


# -- greedy placement scan -----------------------------------------------------------


def candidate_scan_numpy(dist, current, candidates):
    return np.minimum(current[:, None], dist[:, candidates]).mean(axis=0)


def candidate_scan(dist: np.ndarray, current: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Mean nearest-sensor distance after adding each candidate column.

    ``current[i]`` is node i's distance to its nearest already-chosen sensor
    (``inf`` when none is chosen yet).
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    current = np.ascontiguousarray(current, dtype=np.float64)
    candidates = np.ascontiguousarray(candidates, dtype=np.int64)
    if BACKEND == "numba":
        return _candidate_scan_numba(dist, current, candidates)
    return candidate_scan_numpy(dist, current, candidates)
