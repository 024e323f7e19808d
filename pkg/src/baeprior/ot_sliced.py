"""Sliced optimal transport between equal-size empirical samples.

The distributional sliced 2-Wasserstein distance (DSWD) maximizes the sliced
distance over a learned push-forward ``h_phi`` of uniform directions on the
sphere, penalized by the mean absolute cosine between slices::

    max_phi  sqrt(mean_k W2^2(X h_k, Y h_k)) - lambda_C / K^2 * sum_ij |h_i . h_j|

``h_phi(theta) = normalize(W theta + b)``.  After the inner ascent the slices
are frozen and the gradient with respect to ``X`` is that of the sliced term
alone (the penalty does not depend on ``X``).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam

SQRT_EPS = 1e-12
UNIT_TOL = 1e-10


class SampleSizeError(ValueError):
    pass


@dataclass
class DswdConfig:
    n_projections: int = 1000
    lambda_c: float = 100.0
    inner_epochs: int = 30
    inner_lr: float = 5e-4
    p: int = 2
    warm_start: bool = True

    def __post_init__(self):
        if self.n_projections < 1:
            raise ValueError("n_projections must be >= 1")
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be nonnegative")
        if self.inner_epochs < 0:
            raise ValueError("inner_epochs must be >= 0")
        if self.p != 2:
            raise ValueError("only p = 2 is supported")


def wasserstein_1d_pp(xs, ys, p=2, return_grad=False):
    """``W_p^p`` between two equal-size 1-D empirical measures.

    Both samples are sorted (stable) and matched in order.  With
    ``return_grad`` the subgradient with respect to ``xs`` is returned too,
    routed back through the sort permutation.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size != ys.size or xs.size < 1:
        raise SampleSizeError(f"need equal nonempty sample counts, got {xs.size} and {ys.size}")
    ix = np.argsort(xs, kind="stable")
    iy = np.argsort(ys, kind="stable")
    diff = xs[ix] - ys[iy]
    value = float(np.mean(np.abs(diff) ** p))
    if not return_grad:
        return value
    grad = np.empty_like(xs)
    grad[ix] = np.sign(diff) * p * np.abs(diff) ** (p - 1) / xs.size
    return value, grad


def radon_project(samples, direction, pedantic=False):
    """Project rows of ``samples`` onto ``direction``.

    A non-unit direction is normalized with a warning, or rejected when
    ``pedantic`` is set.
    """
    samples = np.asarray(samples, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64).ravel()
    norm = np.linalg.norm(direction)
    if abs(norm - 1.0) > UNIT_TOL:
        if pedantic or norm == 0.0:
            raise ValueError(f"direction has norm {norm}, expected 1")
        warnings.warn(f"normalizing direction of norm {norm}", RuntimeWarning, stacklevel=2)
        direction = direction / norm
    return samples @ direction


def sample_sphere_uniform(rng, count, dim):
    """``count`` i.i.d. uniform directions on the unit sphere in ``R^dim``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero draw has probability zero; redraw defensively
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


@dataclass
class SliceNet:
    """Single affine layer followed by row normalization onto the sphere."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def dim(self):
        return self.bias.size

    def flat(self):
        return np.concatenate([self.weight.ravel(), self.bias])

    def set_flat(self, vec):
        d = self.dim
        self.weight = vec[: d * d].reshape(d, d).copy()
        self.bias = vec[d * d:].copy()

    def __call__(self, theta):
        return self.forward(theta)[0]

    def forward(self, theta):
        pre = theta @ self.weight.T + self.bias
        norms = np.linalg.norm(pre, axis=1, keepdims=True)
        norms = np.maximum(norms, 1e-300)
        return pre / norms, norms

    def backward(self, theta, dirs, norms, d_dirs):
        """Pull ``d objective / d dirs`` back to the flat parameter gradient."""
        d_pre = (d_dirs - dirs * np.sum(d_dirs * dirs, axis=1, keepdims=True)) / norms
        return np.concatenate([(d_pre.T @ theta).ravel(), d_pre.sum(axis=0)])


def _sorted_residuals(X, Y, dirs, y_repeats=1):
    px = X @ dirs.T
    ix = np.argsort(px, axis=0, kind="stable")
    sx = np.take_along_axis(px, ix, axis=0)
    py = Y @ dirs.T
    iy = np.argsort(py, axis=0, kind="stable")
    sy = np.take_along_axis(py, iy, axis=0)
    if y_repeats > 1:
        sy = np.repeat(sy, y_repeats, axis=0)
    return sx - sy, ix, iy


def _scatter(resid, index):
    out = np.empty_like(resid)
    np.put_along_axis(out, index, resid, axis=0)
    return out


def sliced_distance(X, Y, dirs, y_repeats=1):
    """Sliced 2-Wasserstein along fixed unit ``dirs``: ``(value, grad_X)``.

    ``value = sqrt(mean_k W2^2)``; the gradient uses ``sqrt(. + 1e-12)`` so it
    stays finite when ``X`` and ``Y`` coincide.
    """
    X, Y = _check_pair(X, Y, y_repeats)
    resid, ix, _ = _sorted_residuals(X, Y, dirs, y_repeats)
    n, k = resid.shape
    mean_sq = float(np.mean(resid * resid))
    coef = 1.0 / (n * k * np.sqrt(mean_sq + SQRT_EPS))
    grad_x = coef * (_scatter(resid, ix) @ dirs)
    return float(np.sqrt(mean_sq)), grad_x


def slice_overlap(dirs):
    """``(1/K^2) sum_ij |h_i . h_j|``, in ``[1/K, 1]`` for unit rows."""
    k = dirs.shape[0]
    return float(np.abs(dirs @ dirs.T).sum()) / (k * k)


def _check_pair(X, Y, y_repeats=1):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise SampleSizeError(f"incompatible sample matrices {X.shape} and {Y.shape}")
    if X.shape[0] != Y.shape[0] * y_repeats:
        raise SampleSizeError(
            f"need equal sample counts, got {X.shape[0]} and {Y.shape[0]} x {y_repeats}"
        )
    if X.shape[0] < 2:
        raise SampleSizeError("need at least two samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite sample values")
    return X, Y


@dataclass
class DswdResult:
    distance: float
    grad_x: np.ndarray
    objective_trace: list
    directions: np.ndarray
    thetas: np.ndarray = field(repr=False)


class DSWD:
    """Stateful estimator that keeps ``h_phi`` between calls (warm start)."""

    def __init__(self, cfg: DswdConfig, dim: int):
        self.cfg = cfg
        self.dim = dim
        self.net = SliceNet.identity(dim)
        self._adam = None

    def reset(self):
        self.net = SliceNet.identity(self.dim)
        self._adam = None

    def _objective(self, X, Y, thetas, y_repeats):
        dirs, norms = self.net.forward(thetas)
        resid, ix, iy = _sorted_residuals(X, Y, dirs, y_repeats)
        n, k = resid.shape
        mean_sq = float(np.mean(resid * resid))
        root = np.sqrt(mean_sq + SQRT_EPS)
        gram = dirs @ dirs.T
        penalty = self.cfg.lambda_c * float(np.abs(gram).sum()) / (k * k)
        value = float(np.sqrt(mean_sq)) - penalty
        return value, (dirs, norms, resid, ix, iy, root, gram)

    def _phi_grad(self, X, Y, thetas, cache, y_repeats):
        dirs, norms, resid, ix, iy, root, gram = cache
        n, k = resid.shape
        gx = _scatter(resid, ix)
        if y_repeats > 1:
            ry = resid.reshape(n // y_repeats, y_repeats, k).sum(axis=1)
            gy = _scatter(ry, iy)
        else:
            gy = _scatter(resid, iy)
        d_mean = (2.0 / (n * k)) * (gx.T @ X - gy.T @ Y)
        d_dirs = d_mean / (2.0 * root)
        d_dirs -= (2.0 * self.cfg.lambda_c / (k * k)) * (np.sign(gram) @ dirs)
        return self.net.backward(thetas, dirs, norms, d_dirs)

    def evaluate(self, X, Y, rng, y_repeats=1) -> DswdResult:
        X, Y = _check_pair(X, Y, y_repeats)
        if X.shape[1] != self.dim:
            raise SampleSizeError(f"expected dimension {self.dim}, got {X.shape[1]}")
        cfg = self.cfg
        if not cfg.warm_start or self._adam is None:
            if not cfg.warm_start:
                self.net = SliceNet.identity(self.dim)
            self._adam = Adam(self.net.flat().size, lr=cfg.inner_lr, maximize=True)
        thetas = sample_sphere_uniform(rng, cfg.n_projections, self.dim)
        trace = []
        for _ in range(cfg.inner_epochs):
            value, cache = self._objective(X, Y, thetas, y_repeats)
            trace.append(value)
            grad = self._phi_grad(X, Y, thetas, cache, y_repeats)
            self.net.set_flat(self._adam.step(self.net.flat(), grad))
        value, cache = self._objective(X, Y, thetas, y_repeats)
        trace.append(value)
        dirs = cache[0]
        distance, grad_x = sliced_distance(X, Y, dirs, y_repeats)
        return DswdResult(distance, grad_x, trace, dirs, thetas)

    def __call__(self, X, Y, rng, y_repeats=1):
        res = self.evaluate(X, Y, rng, y_repeats)
        return res.distance, res.grad_x


def dswd(X, Y, cfg: DswdConfig, rng, net: SliceNet | None = None):
    """One-shot DSWD estimate: ``(distance, grad_X)``.

    The reported distance is the sliced term at the optimized slices; the
    penalty and the constant ``lambda_C * C`` are not included.
    """
    X = np.asarray(X, dtype=np.float64)
    est = DSWD(cfg, X.shape[1] if X.ndim == 2 else 0)
    if net is not None:
        est.net = SliceNet(net.weight.copy(), net.bias.copy())
    return est(X, Y, rng)


def dswd_grad_check(X, Y, dirs, h=1e-6, y_repeats=1):
    """Compare :func:`sliced_distance` gradient with central differences.

    Slices are held fixed.  Returns a dict with the maximum relative error
    (per coordinate, floored denominator) and both gradients.
    """
    X = np.array(X, dtype=np.float64)
    _, grad = sliced_distance(X, Y, dirs, y_repeats)
    fd = np.empty_like(X)
    for idx in np.ndindex(*X.shape):
        orig = X[idx]
        X[idx] = orig + h
        fp, _ = sliced_distance(X, Y, dirs, y_repeats)
        X[idx] = orig - h
        fm, _ = sliced_distance(X, Y, dirs, y_repeats)
        X[idx] = orig
        fd[idx] = (fp - fm) / (2 * h)
    scale = max(np.max(np.abs(fd)), 1e-12)
    rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3 * scale)
    return {"max_rel_err": float(rel.max()), "grad": grad, "fd": fd}
