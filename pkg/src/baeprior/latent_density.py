"""Density estimation over posterior-mean latent codes.

A finite Gaussian mixture is fit by EM for every component count in
``1..max_components`` and the count with the lowest BIC wins.  Sampling a
code from the mixture and decoding it through every ensemble member makes
the autoencoder generative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor_nn

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
EM_TOL = 1e-7
EM_MAX_ITER = 500
N_RESTARTS = 5
# a component explaining fewer points than this cannot estimate a spread
MIN_COUNT = 2.0
MIXTURE_FORMAT_VERSION = 1
MIXTURE_MAGIC = "BAEPRIOR-MIXTURE"


@dataclass(frozen=True)
class MixtureModel:
    """Gaussian mixture.  ``covariances`` is ``(C, K)`` when diagonal, else ``(C, K, K)``."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    diagonal: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        if self.means.shape[0] != w.size:
            raise ValueError("means and weights disagree on component count")
        expect = self.means.shape if self.diagonal else self.means.shape + (self.means.shape[1],)
        if self.covariances.shape != expect:
            raise ValueError(f"covariances must have shape {expect}")

    @property
    def n_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def cholesky(self):
        """Per-component lower Cholesky factors, ``(C, K, K)``."""
        if self.diagonal:
            return np.stack([np.diag(np.sqrt(c)) for c in self.covariances])
        return np.linalg.cholesky(self.covariances)

    def component_log_density(self, z):
        """``(N, C)`` matrix of ``log w_c + log N(z | mu_c, Sigma_c)``."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        return _weighted_log_gauss(z, self.weights, self.means, self.covariances, self.diagonal)

    def log_density(self, z):
        return _logsumexp(self.component_log_density(z))

    def n_free_params(self):
        c, k = self.means.shape
        cov = k if self.diagonal else k * (k + 1) // 2
        return (c - 1) + c * k + c * cov


def _logsumexp(a):
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _weighted_log_gauss(z, weights, means, covs, diagonal):
    n, k = z.shape
    out = np.empty((n, weights.size))
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    for c in range(weights.size):
        d = z - means[c]
        if diagonal:
            maha = np.sum(d * d / covs[c], axis=1)
            logdet = np.sum(np.log(covs[c]))
        else:
            L = np.linalg.cholesky(covs[c])
            sol = np.linalg.solve(L, d.T)
            maha = np.sum(sol * sol, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, c] = logw[c] - 0.5 * (k * np.log(2 * np.pi) + logdet + maha)
    return out


def _floor_cov(cov, diagonal):
    if diagonal:
        return np.maximum(cov, VAR_FLOOR)
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return (vecs * np.maximum(vals, VAR_FLOOR)) @ vecs.T


def _kmeanspp(z, c, rng):
    centers = [z[rng.integers(z.shape[0])]]
    for _ in range(1, c):
        d2 = np.min(((z[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0.0:
            centers.append(z[rng.integers(z.shape[0])])
        else:
            centers.append(z[rng.choice(z.shape[0], p=d2 / total)])
    return np.array(centers)


def e_step(z, model: MixtureModel):
    """Responsibilities ``(N, C)`` and the mean log-likelihood."""
    logp = model.component_log_density(z)
    total = _logsumexp(logp)
    return np.exp(logp - total[:, None]), float(total.mean())


def _m_step(z, resp, diagonal):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = (resp.T @ z) / nk[:, None]
    covs = []
    for c in range(nk.size):
        d = z - means[c]
        if diagonal:
            cov = (resp[:, c] @ (d * d)) / nk[c]
        else:
            cov = (resp[:, c, None] * d).T @ d / nk[c]
        covs.append(_floor_cov(cov, diagonal))
    return MixtureModel(weights, means, np.array(covs), diagonal)


def _init_model(z, c, rng, diagonal):
    centers = _kmeanspp(z, c, rng)
    labels = np.argmin(((z[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    resp = np.zeros((z.shape[0], c))
    resp[np.arange(z.shape[0]), labels] = 1.0
    # empty clusters get a uniform sliver so the M-step stays defined
    resp += 1e-3 / c
    resp /= resp.sum(axis=1, keepdims=True)
    return _m_step(z, resp, diagonal)


def run_em(z, model: MixtureModel, tol=EM_TOL, max_iter=EM_MAX_ITER):
    """EM from ``model``; returns ``(model, loglik_trace)`` (mean per-datum log-likelihood)."""
    trace = []
    resp, ll = e_step(z, model)
    trace.append(ll)
    for _ in range(max_iter):
        model = _m_step(z, resp, model.diagonal)
        resp, ll = e_step(z, model)
        trace.append(ll)
        if ll - trace[-2] < tol:
            break
    return model, trace


def _prune(z, model):
    n = z.shape[0]
    keep = (model.weights >= 1.0 / (10 * n)) & (model.weights * n >= MIN_COUNT)
    if keep.all():
        return None
    w = model.weights[keep]
    return MixtureModel(w / w.sum(), model.means[keep], model.covariances[keep], model.diagonal)


def _fit_count(z, c, rng, diagonal):
    best, best_ll = None, -np.inf
    for _ in range(N_RESTARTS):
        model, trace = run_em(z, _init_model(z, c, rng, diagonal))
        pruned = _prune(z, model)
        if pruned is not None:
            model, trace = run_em(z, pruned)
        if trace[-1] > best_ll:
            best, best_ll = model, trace[-1]
    return best, best_ll


def bic(model: MixtureModel, mean_loglik, n):
    return -2.0 * n * mean_loglik + model.n_free_params() * np.log(n)


def fit_mixture(latents, max_components=10, seed=0, diagonal=True):
    """BIC-selected Gaussian mixture over ``latents`` ``(N, K)``."""
    z = np.asarray(latents, dtype=np.float64)
    n, k = z.shape
    if n <= k + 1:
        raise ValueError(f"need more than {k + 1} latent codes, got {n}")
    rng = np.random.default_rng(seed)
    best, best_bic = None, np.inf
    for c in range(1, min(max_components, n) + 1):
        model, ll = _fit_count(z, c, rng, diagonal)
        score = bic(model, ll, n)
        log.debug("components=%d bic=%.6g", model.n_components, score)
        if score < best_bic:
            best, best_bic = model, score
    return best


def sample_mixture(model: MixtureModel, count, rng):
    comp = rng.choice(model.n_components, size=count, p=model.weights)
    chol = model.cholesky()
    eps = rng.standard_normal((count, model.dim))
    return model.means[comp] + np.einsum("nij,nj->ni", chol[comp], eps)


def encode_latents(ensemble, data, shape=None):
    """Posterior-mean code per datum: encoder output averaged over members."""
    shape = shape or ensemble.shape
    data = np.asarray(data, dtype=np.float64)
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    if data.ndim != 2 or data.shape[1] != shape.input_dim:
        raise tensor_nn.ShapeError(f"data must be (N, {shape.input_dim})")
    acc = np.zeros((data.shape[0], shape.latent_dim))
    for w in ensemble.samples:
        acc += tensor_nn.encode(tensor_nn.unflatten(shape, w), data)
    return acc / len(ensemble)


def decode_ensemble(ensemble, latents, shape=None):
    """Ensemble-mean decoding and per-pixel standard deviation across members."""
    shape = shape or ensemble.shape
    latents = np.asarray(latents, dtype=np.float64)
    outs = np.stack([tensor_nn.decode(tensor_nn.unflatten(shape, w), latents)
                     for w in ensemble.samples])
    return outs.mean(axis=0), outs.std(axis=0)


def generate(model: MixtureModel, ensemble, shape, count, rng):
    """Draw codes from ``model`` and decode; returns ``(images, pixel_std)``."""
    return decode_ensemble(ensemble, sample_mixture(model, count, rng), shape)


def save_mixture(model: MixtureModel, path, config_hash="", tool_version=""):
    lines = [
        f"{MIXTURE_MAGIC} {MIXTURE_FORMAT_VERSION}",
        f"config_hash = {config_hash}",
        f"tool_version = {tool_version}",
        f"n_components = {model.n_components}",
        f"dim = {model.dim}",
        f"diagonal = {int(model.diagonal)}",
    ]
    fmt = lambda row: " ".join(format(v, ".17g") for v in np.ravel(row))
    for c in range(model.n_components):
        lines.append(f"weight {c} {format(model.weights[c], '.17g')}")
        lines.append(f"mean {c} {fmt(model.means[c])}")
        lines.append(f"cov {c} {fmt(model.covariances[c])}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mixture(path) -> MixtureModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if head[:1] != [MIXTURE_MAGIC] or len(head) != 2:
        raise ValueError(f"{path}: not a mixture checkpoint")
    if int(head[1]) != MIXTURE_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported mixture version {head[1]}")
    meta, rows = {}, {"weight": {}, "mean": {}, "cov": {}}
    for line in lines[1:]:
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            kind, idx, *vals = line.split()
            rows[kind][int(idx)] = np.array([float(v) for v in vals])
    c, k, diagonal = int(meta["n_components"]), int(meta["dim"]), bool(int(meta["diagonal"]))
    weights = np.array([rows["weight"][i][0] for i in range(c)])
    means = np.array([rows["mean"][i] for i in range(c)]).reshape(c, k)
    covs = np.array([rows["cov"][i] for i in range(c)])
    covs = covs.reshape(c, k) if diagonal else covs.reshape(c, k, k)
    return MixtureModel(weights, means, covs, diagonal)
