"""Sparse coding and (label-consistent) dictionary learning.

K-SVD alternates OMP coding with rank-1 atom refits.  LC-KSVD runs the same
loop on the stacked problem ``[Y; sqrt(a) H; sqrt(b) Q] ~ [D; sqrt(a) W; sqrt(b) A] X``
and then unstacks the blocks.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateData, InconsistentLabels, IntegrityError, TooFewAtoms
from .matrix_io import read_matrix, write_matrix

log = logging.getLogger(__name__)

RIDGE = 1.0  # regulariser for the W / A initial fits
COHERENCE_LIMIT = None  # opt-in atom clearing, e.g. 0.9


def omp(y, D, s: int) -> np.ndarray:
    """Sparse code of ``y`` over unit-norm dictionary ``D`` with at most ``s`` atoms."""
    return kernels.omp_batch(D, np.asarray(y, dtype=float), s)


def omp_codes(D, Y, s: int) -> np.ndarray:
    return kernels.omp_batch(D, Y, s)


def normalize_residuals(R):
    """Scale each column to unit norm; returns ``(normalized, zero_flags)``."""
    R = np.asarray(R, dtype=float)
    vec = R.ndim == 1
    R2 = R[:, None] if vec else R
    norms = np.linalg.norm(R2, axis=0)
    zero = norms == 0
    out = R2 / np.where(zero, 1.0, norms)
    if vec:
        return out[:, 0], bool(zero[0])
    return out, zero


def atom_owners(n_class: int, n_atom: int) -> np.ndarray:
    """Class owning each atom: ``n_atom // n_class`` each, remainder to the lowest classes."""
    if n_atom < n_class:
        raise TooFewAtoms(f"{n_atom} atoms cannot cover {n_class} classes")
    base, extra = divmod(n_atom, n_class)
    counts = [base + (c < extra) for c in range(n_class)]
    return np.repeat(np.arange(n_class), counts)


def build_label_matrices(labels, n_class: int, n_atom: int):
    """One-hot label matrix ``H`` and atom-assignment matrix ``Q``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_class):
        raise InconsistentLabels(f"labels must lie in [0, {n_class})")
    owner = atom_owners(n_class, n_atom)
    H = np.zeros((n_class, labels.size))
    H[labels, np.arange(labels.size)] = 1.0
    Q = (owner[:, None] == labels[None, :]).astype(float)
    return H, Q


def _objective(Y, D, X) -> float:
    R = Y - D @ X
    return float(np.einsum("ij,ij->", R, R))


def _fix_sign(u, v):
    k = int(np.argmax(np.abs(u)))
    if u[k] < 0:
        return -u, -v
    return u, v


@dataclass
class KsvdResult:
    D: np.ndarray
    X: np.ndarray
    objective: list[float] = field(default_factory=list)
    replacements: list[dict] = field(default_factory=list)


def _sparse_code(D, Y, s, X_prev=None):
    """OMP codes; a column keeps its previous code when that fits better."""
    X = kernels.omp_batch(D, Y, s)
    if X_prev is not None:
        err_new = np.sum((Y - D @ X) ** 2, axis=0)
        err_old = np.sum((Y - D @ X_prev) ** 2, axis=0)
        keep = err_old < err_new
        X[:, keep] = X_prev[:, keep]
    return X


def default_init(Y, n_atom: int) -> np.ndarray:
    """First ``n_atom`` nonzero columns of ``Y``, unit-normalised."""
    norms = np.linalg.norm(Y, axis=0)
    idx = np.flatnonzero(norms > 0)[:n_atom]
    if idx.size < n_atom:
        raise DegenerateData(f"need {n_atom} nonzero samples, found {idx.size}")
    return Y[:, idx] / norms[idx]


def ksvd_train(Y, n_atom: int, s: int, K: int, D0=None,
               coherence_limit: float | None = COHERENCE_LIMIT) -> KsvdResult:
    """Minimise ``||Y - DX||_F^2`` over unit-norm ``D`` and s-sparse ``X``.

    An atom that no sample uses, or whose absolute inner product with another
    atom exceeds ``coherence_limit`` (off by default), is replaced by the
    worst-represented sample.  Such events are logged in ``replacements`` and
    are the only steps allowed to raise the objective.
    """
    Y = np.asarray(Y, dtype=float)
    if not np.any(Y):
        raise DegenerateData("training matrix is all zero")
    if Y.shape[1] < n_atom:
        raise DegenerateData(f"{Y.shape[1]} samples for {n_atom} atoms")
    if not 1 <= s <= n_atom:
        raise ValueError("sparsity must lie in [1, n_atom]")
    D = default_init(Y, n_atom) if D0 is None else np.array(D0, dtype=float)
    if D.shape != (Y.shape[0], n_atom):
        raise ValueError(f"initial dictionary has shape {D.shape}")
    D /= np.linalg.norm(D, axis=0)
    X = _sparse_code(D, Y, s)
    res = KsvdResult(D, X, [_objective(Y, D, X)])
    for it in range(K):
        E = Y - D @ X
        replaced_now: set[int] = set()
        for k in range(n_atom):
            users = np.flatnonzero(X[k])
            reason = "unused" if users.size == 0 else None
            if reason is None and coherence_limit is not None:
                c = np.abs(D.T @ D[:, k])
                c[k] = 0.0
                if c.max() > coherence_limit:
                    reason = "coherent"
            if reason is not None:
                err = np.sum(E**2, axis=0)
                if replaced_now:
                    err[list(replaced_now)] = -1.0
                j = int(np.argmax(err))
                if err[j] <= 0:
                    continue
                E[:, users] += np.outer(D[:, k], X[k, users])
                X[k] = 0.0
                D[:, k] = Y[:, j] / np.linalg.norm(Y[:, j])
                replaced_now.add(j)
                res.replacements.append({"iteration": it + 1, "atom": k, "sample": j, "reason": reason})
                log.info("K-SVD iteration %d: %s atom %d replaced by sample %d", it + 1, reason, k, j)
                continue
            Ek = E[:, users] + np.outer(D[:, k], X[k, users])
            U, S, Vt = np.linalg.svd(Ek, full_matrices=False)
            u, v = _fix_sign(U[:, 0], Vt[0])
            D[:, k] = u
            X[k, users] = S[0] * v
            E[:, users] = Ek - np.outer(u, X[k, users])
        X = _sparse_code(D, Y, s, X)
        res.objective.append(_objective(Y, D, X))
    res.D, res.X = D, X
    return res


# -- label-consistent training -------------------------------------------------------


@dataclass
class DictionaryTriple:
    D: np.ndarray
    W: np.ndarray
    A: np.ndarray
    s: int
    alpha: float
    beta: float
    iterations: int
    owners: np.ndarray
    objective: list[float] = field(default_factory=list)
    replacements: list[dict] = field(default_factory=list)

    @property
    def n_atom(self) -> int:
        return self.D.shape[1]

    @property
    def n_class(self) -> int:
        return self.W.shape[0]

    def hyper(self) -> dict:
        return {"s": self.s, "alpha": self.alpha, "beta": self.beta,
                "n_atom": self.n_atom, "K": self.iterations}

    def content_hash(self) -> str:
        h = hashlib.sha256(json.dumps(self.hyper(), sort_keys=True).encode())
        for a in (self.D, self.W, self.A, self.owners.astype(float)):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, directory) -> dict:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {name: write_matrix(d / f"{name}.bin", getattr(self, name)) for name in ("D", "W", "A")}
        files["owners"] = write_matrix(d / "owners.bin", self.owners.astype(np.int64))
        man = {"hyper": self.hyper(), "files": files, "objective": self.objective,
               "replacements": self.replacements, "content_hash": self.content_hash()}
        (d / "dictionary.json").write_text(json.dumps(man, sort_keys=True, indent=1))
        return man

    @classmethod
    def load(cls, directory) -> "DictionaryTriple":
        d = Path(directory)
        try:
            man = json.loads((d / "dictionary.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"cannot read dictionary at {d}: {exc}") from exc
        mats = {name: read_matrix(d / f"{name}.bin", digest) for name, digest in man["files"].items()}
        hp = man["hyper"]
        tri = cls(mats["D"], mats["W"], mats["A"], int(hp["s"]), float(hp["alpha"]),
                  float(hp["beta"]), int(hp["K"]), mats["owners"][:, 0].astype(np.int64),
                  man.get("objective", []), man.get("replacements", []))
        if tri.content_hash() != man.get("content_hash"):
            raise IntegrityError(f"{d}: dictionary content hash mismatch")
        return tri


def class_round_robin_init(Y, labels, owners) -> np.ndarray:
    """Each class's atoms take that class's samples in order (cycling if short)."""
    D = np.empty((Y.shape[0], owners.size))
    used: dict[int, int] = {}
    for k, c in enumerate(owners):
        members = np.flatnonzero((labels == c) & (np.linalg.norm(Y, axis=0) > 0))
        if members.size == 0:
            raise DegenerateData(f"class {c} has no nonzero training sample")
        i = used.get(c, 0)
        D[:, k] = Y[:, members[i % members.size]]
        used[c] = i + 1
    return D / np.linalg.norm(D, axis=0)


def _ridge(T, X, lam=RIDGE):
    G = X @ X.T + lam * np.eye(X.shape[0])
    return np.linalg.solve(G, X @ T.T).T


def lcksvd_train(Y, H, Q, s: int = 8, alpha: float = 1.0, beta: float = 1.0,
                 n_atom: int | None = None, K: int = 30, D0=None,
                 coherence_limit: float | None = COHERENCE_LIMIT) -> DictionaryTriple:
    Y = np.asarray(Y, dtype=float)
    H = np.asarray(H, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n_atom = Q.shape[0] if n_atom is None else n_atom
    if H.shape[1] != Y.shape[1] or Q.shape != (n_atom, Y.shape[1]):
        raise ValueError("Y, H, Q column counts or atom count disagree")
    if not np.allclose(H.sum(axis=0), 1.0) or not np.all((H == 0) | (H == 1)):
        raise InconsistentLabels("every column of H must be one-hot")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    if not np.any(Y):
        raise DegenerateData("training matrix is all zero")
    labels = np.argmax(H, axis=0)
    # atom ownership as encoded by Q (first class whose samples use the atom)
    owners = np.array([labels[np.flatnonzero(Q[k])[0]] if Q[k].any() else 0 for k in range(n_atom)])
    D = class_round_robin_init(Y, labels, owners) if D0 is None else np.array(D0, dtype=float)
    s = min(s, n_atom)
    X = kernels.omp_batch(D, Y, s)
    W = _ridge(H, X)
    A = _ridge(Q, X)
    ra, rb = np.sqrt(alpha), np.sqrt(beta)
    n_ts, n_cls = Y.shape[0], H.shape[0]
    Yt = np.vstack([Y, ra * H, rb * Q])
    Dt = np.vstack([D, ra * W, rb * A])
    Dt /= np.linalg.norm(Dt, axis=0)
    res = ksvd_train(Yt, n_atom, s, K, Dt, coherence_limit)
    Dt = res.D
    DY = Dt[:n_ts]
    nrm = np.linalg.norm(DY, axis=0)
    nrm = np.where(nrm > 0, nrm, 1.0)
    D = DY / nrm
    W = Dt[n_ts:n_ts + n_cls] / (ra * nrm) if alpha > 0 else np.zeros((n_cls, n_atom))
    A = Dt[n_ts + n_cls:] / (rb * nrm) if beta > 0 else np.zeros((n_atom, n_atom))
    return DictionaryTriple(D, W, A, s, float(alpha), float(beta), K, owners,
                            res.objective, res.replacements)


def classify(y, triple: DictionaryTriple):
    """``argmax(W @ omp(y, D, s))``; returns ``(class, scores)``."""
    x = omp(y, triple.D, triple.s)
    scores = triple.W @ x
    return int(np.argmax(scores)), scores


def classify_batch(Y, triple: DictionaryTriple):
    X = omp_codes(triple.D, Y, triple.s)
    scores = triple.W @ X
    return np.argmax(scores, axis=0), scores
