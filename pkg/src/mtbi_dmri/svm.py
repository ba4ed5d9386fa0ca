"""Soft-margin binary SVM trained by sequential minimal optimization.

The solver minimizes the dual ``0.5 a'Qa - sum(a)`` with
``Q_ij = y_i y_j K(x_i, x_j)`` subject to ``0 <= a_i <= C`` and
``y'a = 0``, choosing the working pair by maximal violation for ``i`` and
second-order gain for ``j``. It stops when the maximal KKT violation gap
``m(a) - M(a)`` falls below half the tolerance, which keeps every KKT
condition within ``tol``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .core import DimMismatch, MtbiError

MODEL_FORMAT = "mtbi-svm/1"
TAU = 1e-12


class SingleClass(MtbiError):
    pass


class NonFiniteFeature(MtbiError):
    pass


@dataclass(frozen=True)
class SvmConfig:
    """``gamma=None`` means ``1 / n_features`` for the RBF kernel."""

    C: float = 1.0
    kernel: str = "rbf"
    gamma: Optional[float] = None
    tol: float = 1e-4
    max_iter: int = 100_000
    standardize: bool = True

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.kernel not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("tol and max_iter must be positive")


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.array(X, dtype=np.float64, ndmin=2)
        if X.shape[1] != len(self.mean):
            raise DimMismatch(f"expected {len(self.mean)} features, got {X.shape[1]}")
        X = np.where(np.isnan(X), self.mean, X)
        return (X - self.mean) / self.scale


def standardize_fit(X) -> Standardizer:
    """Column z-scores from training rows.

    Missing entries (NaN) are ignored here and imputed with the column mean
    on apply. Zero-variance columns keep ``scale = 1``; the sample standard
    deviation (``ddof=1``) is used.
    """
    X = np.array(X, dtype=np.float64, ndmin=2)
    if len(X) < 2:
        raise ValueError("standardize_fit needs at least 2 rows")
    observed = ~np.isnan(X)
    n = observed.sum(axis=0)
    filled = np.where(observed, X, 0.0)
    mean = np.where(n > 0, filled.sum(axis=0) / np.maximum(n, 1), 0.0)
    dev = np.where(observed, X - mean, 0.0)
    var = np.where(n > 1, (dev**2).sum(axis=0) / np.maximum(n - 1, 1), 0.0)
    sd = np.sqrt(var)
    scale = np.where(sd > 0, sd, 1.0)
    return Standardizer(mean, scale)


def standardize_apply(params: Standardizer, X) -> np.ndarray:
    return params.apply(X)


# ---------------------------------------------------------------------------
# kernels and training
# ---------------------------------------------------------------------------


def kernel_matrix(A, B, kernel="rbf", gamma=1.0) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if kernel == "linear":
        return A @ B.T
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    config: SvmConfig
    gamma: float
    scaler: Optional[Standardizer] = None
    alpha: Optional[np.ndarray] = None
    n_iter: int = 0

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    def save(self, path) -> None:
        """JSON header line then float64 payload: SVs, coefficients, scaler mean, scaler scale."""
        d = self.n_features
        header = {
            "format": MODEL_FORMAT,
            "n_sv": len(self.dual_coef),
            "n_features": d,
            "bias": float(self.bias).hex(),
            "gamma": float(self.gamma).hex(),
            "config": asdict(self.config),
            "scaled": self.scaler is not None,
        }
        parts = [self.support_vectors.ravel(), self.dual_coef]
        if self.scaler is not None:
            parts += [self.scaler.mean, self.scaler.scale]
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
            fh.write(np.concatenate(parts).astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            payload = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
        if header.get("format") != MODEL_FORMAT:
            raise MtbiError(f"{path}: not a {MODEL_FORMAT} file")
        n, d = header["n_sv"], header["n_features"]
        sv = payload[: n * d].reshape(n, d)
        coef = payload[n * d : n * d + n]
        scaler = None
        if header["scaled"]:
            rest = payload[n * d + n :]
            scaler = Standardizer(rest[:d].copy(), rest[d : 2 * d].copy())
        return cls(
            sv,
            coef,
            float.fromhex(header["bias"]),
            SvmConfig(**header["config"]),
            float.fromhex(header["gamma"]),
            scaler,
        )


def _smo(K, y, C, eps, max_iter):
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    it = 0
    while it < max_iter:
        below = alpha < C
        above = alpha > 0
        up = np.where(pos, below, above)
        low = np.where(pos, above, below)
        v = -y * G
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, v, -np.inf)))
        m = v[i]
        M = np.min(np.where(low, v, np.inf))
        if m - M < eps:
            break
        cand = low & (v < m)
        b = m - v
        a = QD[i] + QD - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, TAU)
        gain = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        it += 1

        ai, aj = alpha[i], alpha[j]
        Qi, Qj = Q[i], Q[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Qi[j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Qi[j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ni, nj = ai - delta, aj + delta
            if s > C:
                if ni > C:
                    ni, nj = C, s - C
            elif nj < 0:
                nj, ni = 0.0, s
            if s > C:
                if nj > C:
                    nj, ni = C, s - C
            elif ni < 0:
                ni, nj = 0.0, s
        G += Qi * (ni - ai) + Qj * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    # bias from free vectors, else midpoint of the feasible interval
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        r = yG[free].mean()
    else:
        at_ub = alpha >= C
        ub_set = (at_ub & ~pos) | (~at_ub & pos)
        lb_set = ~ub_set
        ub = yG[ub_set].min() if ub_set.any() else np.inf
        lb = yG[lb_set].max() if lb_set.any() else -np.inf
        r = (ub + lb) / 2.0 if np.isfinite(ub) and np.isfinite(lb) else (
            ub if np.isfinite(ub) else lb
        )
    return alpha, -r, it


def train_svm(X, y, config: SvmConfig = SvmConfig()) -> SvmModel:
    X = np.array(X, dtype=np.float64, ndmin=2)
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise DimMismatch("X and y differ in length")
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise SingleClass("training data must contain both classes (+1 and -1)")
    scaler = None
    if config.standardize:
        scaler = standardize_fit(X)
        X = scaler.apply(X)
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("training features contain NaN or infinite values")
    gamma = config.gamma if config.gamma is not None else 1.0 / X.shape[1]
    K = kernel_matrix(X, X, config.kernel, gamma)
    alpha, b, it = _smo(K, y, config.C, 0.5 * config.tol, config.max_iter)
    sv = alpha > 0
    return SvmModel(
        X[sv].copy(),
        (alpha * y)[sv],
        float(b),
        config,
        float(gamma),
        scaler,
        alpha,
        it,
    )


def decision_value(model: SvmModel, x) -> np.ndarray | float:
    """``sum_i a_i y_i K(x_i, x) + b`` for one sample or each row of a 2-D array."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    X = np.array(arr, ndmin=2)
    if X.shape[1] != model.n_features:
        raise DimMismatch(f"model has {model.n_features} features, input has {X.shape[1]}")
    if model.scaler is not None:
        X = model.scaler.apply(X)
    K = kernel_matrix(X, model.support_vectors, model.config.kernel, model.gamma)
    f = K @ model.dual_coef + model.bias
    return float(f[0]) if single else f


def predict(model: SvmModel, x):
    """Sign of the decision value; ``sign(0)`` is +1."""
    f = decision_value(model, x)
    if np.ndim(f) == 0:
        return 1 if f >= 0 else -1
    return np.where(f >= 0, 1, -1)


def dual_objective(alpha, y, K) -> float:
    """Dual value ``sum(a) - 0.5 sum_ij a_i a_j y_i y_j K_ij`` (to be maximized)."""
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)
