"""Factorized Gaussian weight prior and its optimization by DSWD matching.

Every flat network parameter belongs to a *group* sharing one location and
one log-scale.  The default grouping has two groups per layer (weights,
biases); ``granularity="parameter"`` gives every scalar its own group.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor_nn
from .likelihood import cb_sample
from .optim import Adam
from .ot_sliced import DSWD, DswdConfig

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
PRIOR_FORMAT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Raised when an objective turns non-finite; ``state`` holds a dump."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state or {}


def group_index(shape: tensor_nn.MlpShape, granularity="layer") -> np.ndarray:
    """Group id of every flat parameter (layer ``l``: weight ``2l``, bias ``2l+1``)."""
    if granularity == "parameter":
        return np.arange(shape.n_params)
    if granularity != "layer":
        raise ValueError(f"unknown granularity {granularity!r}")
    idx = np.empty(shape.n_params, dtype=np.intp)
    for k, ws, bs in shape.offsets():
        idx[ws] = 2 * k
        idx[bs] = 2 * k + 1
    return idx


@dataclass
class PriorParams:
    """Per-group Gaussian location and log-scale."""

    shape: tensor_nn.MlpShape
    loc: np.ndarray
    log_scale: np.ndarray
    granularity: str = "layer"
    _groups: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.loc = np.asarray(self.loc, dtype=np.float64)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64)
        n = self.n_groups_expected()
        if self.loc.shape != (n,) or self.log_scale.shape != (n,):
            raise tensor_nn.ShapeError(f"expected {n} prior groups, got {self.loc.shape}")

    def n_groups_expected(self):
        if self.granularity == "parameter":
            return self.shape.n_params
        return 2 * self.shape.n_layers

    @classmethod
    def standard(cls, shape, mu=0.0, log_sigma=0.0, granularity="layer"):
        """Every group at ``N(mu, exp(log_sigma)^2)``; the default is ``N(0, 1)``."""
        n = shape.n_params if granularity == "parameter" else 2 * shape.n_layers
        return cls(shape, np.full(n, float(mu)), np.full(n, float(log_sigma)), granularity)

    @property
    def groups(self):
        if self._groups is None:
            self._groups = group_index(self.shape, self.granularity)
        return self._groups

    @property
    def sigma(self):
        return np.exp(self.log_scale)

    def expand(self):
        """Per-parameter ``(mu, log_sigma)`` vectors."""
        g = self.groups
        return self.loc[g], self.log_scale[g]

    def flat(self):
        return np.concatenate([self.loc, self.log_scale])

    def with_flat(self, vec):
        n = self.loc.size
        return PriorParams(self.shape, vec[:n].copy(), vec[n:].copy(), self.granularity)

    def copy(self):
        return self.with_flat(self.flat())

    def tempered(self, temperature):
        """Prior whose variance is scaled by ``temperature``."""
        return PriorParams(self.shape, self.loc.copy(),
                           self.log_scale + 0.5 * np.log(temperature), self.granularity)

    def reduce(self, per_param):
        """Sum a per-parameter vector into groups."""
        return np.bincount(self.groups, weights=per_param, minlength=self.loc.size)


def sample_weights(psi: PriorParams, rng):
    """Reparameterized draw ``w = mu + sigma * eps``; returns ``(w, eps)``."""
    eps = rng.standard_normal(psi.shape.n_params)
    mu, log_sigma = psi.expand()
    return mu + np.exp(log_sigma) * eps, eps


def log_prior_density(psi: PriorParams, w) -> float:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (psi.shape.n_params,):
        raise tensor_nn.ShapeError(f"expected {psi.shape.n_params} weights, got {w.shape}")
    mu, log_sigma = psi.expand()
    z = (w - mu) * np.exp(-log_sigma)
    return float(np.sum(-0.5 * LOG_2PI - log_sigma - 0.5 * z * z))


def log_prior_grad(psi: PriorParams, w) -> np.ndarray:
    """Gradient of :func:`log_prior_density` with respect to ``w``."""
    mu, log_sigma = psi.expand()
    return -(w - mu) * np.exp(-2.0 * log_sigma)


class PredictiveDraw:
    """Prior-predictive samples with the cached pieces needed for ``d/d psi``."""

    def __init__(self, psi, samples, eps, tapes, params, dx_dlam, n_batch):
        self.psi = psi
        self.samples = samples
        self._eps = eps
        self._tapes = tapes
        self._params = params
        self._dx_dlam = dx_dlam
        self._n_batch = n_batch

    def backward(self, d_samples):
        """Gradient w.r.t. ``psi.flat()`` of ``sum(d_samples * samples)``."""
        psi = self.psi
        d_loc = np.zeros(psi.loc.size)
        d_log_scale = np.zeros(psi.log_scale.size)
        _, log_sigma = psi.expand()
        sigma = np.exp(log_sigma)
        nb = self._n_batch
        for s, (tape, params, eps) in enumerate(zip(self._tapes, self._params, self._eps)):
            rows = slice(s * nb, (s + 1) * nb)
            d_recon = d_samples[rows] * self._dx_dlam[rows]
            d_w = tensor_nn.backward(tape, params, d_recon)
            d_loc += psi.reduce(d_w)
            d_log_scale += psi.reduce(d_w * sigma * eps)
        return np.concatenate([d_loc, d_log_scale])


def sample_prior_predictive(psi: PriorParams, batch, n_samples, rng, u=None) -> PredictiveDraw:
    """Draw ``n_samples`` weight sets and push ``batch`` through each.

    Rows are sample-major: rows ``[s*N_B, (s+1)*N_B)`` come from draw ``s``.
    Each reconstruction is perturbed with a continuous Bernoulli draw with
    uniform noise ``u`` (fresh unless given; broadcastable to the output).
    """
    batch = np.asarray(batch, dtype=np.float64)
    nb, d = batch.shape
    out = np.empty((n_samples * nb, d))
    dx = np.empty_like(out)
    eps_list, tapes, params_list = [], [], []
    if u is None:
        u = rng.uniform(size=out.shape)
    else:
        u = np.broadcast_to(np.asarray(u, dtype=np.float64), out.shape)
    for s in range(n_samples):
        w, eps = sample_weights(psi, rng)
        params = tensor_nn.unflatten(psi.shape, w)
        _, recon, tape = tensor_nn.forward(params, batch)
        rows = slice(s * nb, (s + 1) * nb)
        out[rows], dx[rows] = cb_sample(recon, u[rows])
        eps_list.append(eps)
        tapes.append(tape)
        params_list.append(params)
    return PredictiveDraw(psi, out, eps_list, tapes, params_list, dx, nb)


@dataclass
class PriorOptConfig:
    batch_size: int = 64
    prior_samples: int = 32
    outer_steps: int = 1000
    outer_lr: float = 1e-3
    dswd: DswdConfig = field(default_factory=DswdConfig)
    seed: int = 0
    plateau_window: int | None = None
    plateau_tol: float = 1e-3

    def __post_init__(self):
        if self.batch_size < 1 or self.prior_samples < 1 or self.outer_steps < 0:
            raise ValueError("batch_size and prior_samples must be >= 1, outer_steps >= 0")
        if self.outer_lr <= 0:
            raise ValueError("outer_lr must be positive")


def prior_objective(psi, data_batch, n_samples, estimator: DSWD, rng):
    """One stochastic DSWD evaluation and its gradient in ``psi.flat()``."""
    draw = sample_prior_predictive(psi, data_batch, n_samples, rng)
    res = estimator.evaluate(draw.samples, data_batch, rng, y_repeats=n_samples)
    return res.distance, draw.backward(res.grad_x)


def _plateaued(trace, window, tol):
    if window is None or len(trace) < 2 * window:
        return False
    prev = np.mean(trace[-2 * window:-window])
    last = np.mean(trace[-window:])
    return (prev - last) < tol * abs(prev)


def optimize_prior(data, psi0: PriorParams, cfg: PriorOptConfig, callback=None):
    """Minimize the DSWD between prior predictive and data over ``psi``.

    Returns ``(psi, trace)`` where ``trace`` holds the DSWD of every step.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] < cfg.batch_size:
        raise ValueError(f"need at least {cfg.batch_size} data rows, got {data.shape[0]}")
    batch_ss, draw_ss, slice_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    batch_rng = np.random.default_rng(batch_ss)
    draw_rng = np.random.default_rng(draw_ss)
    slice_rng = np.random.default_rng(slice_ss)

    psi = psi0.copy()
    estimator = DSWD(cfg.dswd, data.shape[1])
    adam = Adam(psi.flat().size, lr=cfg.outer_lr)
    trace = []
    for step in range(cfg.outer_steps):
        idx = batch_rng.choice(data.shape[0], size=cfg.batch_size, replace=False)
        batch = data[idx]
        draw = sample_prior_predictive(psi, batch, cfg.prior_samples, draw_rng)
        res = estimator.evaluate(draw.samples, batch, slice_rng, y_repeats=cfg.prior_samples)
        grad = draw.backward(res.grad_x)
        if not (np.isfinite(res.distance) and np.all(np.isfinite(grad))):
            raise DivergenceError(
                f"DSWD became non-finite at step {step}",
                {"step": step, "distance": res.distance, "loc": psi.loc.tolist(),
                 "log_scale": psi.log_scale.tolist(), "trace_tail": trace[-10:]},
            )
        trace.append(res.distance)
        psi = psi.with_flat(adam.step(psi.flat(), grad))
        if callback is not None:
            callback(step, res.distance, psi)
        if step % 100 == 0:
            log.debug("prior step %d dswd %.6g", step, res.distance)
        if _plateaued(trace, cfg.plateau_window, cfg.plateau_tol):
            log.info("prior optimization plateaued at step %d", step)
            break
    return psi, trace


def save_prior(psi: PriorParams, path, config_hash="", tool_version=""):
    """Write ``psi`` as versioned key/value text; floats use ``repr`` (exact)."""
    lines = [
        "# baeprior prior checkpoint",
        f"format_version = {PRIOR_FORMAT_VERSION}",
        f"tool_version = {tool_version}",
        f"config_hash = {config_hash}",
        f"granularity = {psi.granularity}",
        f"shape = {json.dumps(psi.shape.to_dict(), sort_keys=True)}",
        f"n_records = {psi.loc.size}",
        "# record = layer_id role element mu log_sigma",
    ]
    if psi.granularity == "layer":
        for g in range(psi.loc.size):
            role = "weight" if g % 2 == 0 else "bias"
            lines.append(f"record = {g // 2} {role} * {float(psi.loc[g])!r} {float(psi.log_scale[g])!r}")
    else:
        layer_of = np.empty(psi.shape.n_params, dtype=np.intp)
        role_of = np.empty(psi.shape.n_params, dtype=object)
        elem_of = np.empty(psi.shape.n_params, dtype=np.intp)
        for k, ws, bs in psi.shape.offsets():
            layer_of[ws], role_of[ws] = k, "weight"
            elem_of[ws] = np.arange(ws.stop - ws.start)
            layer_of[bs], role_of[bs] = k, "bias"
            elem_of[bs] = np.arange(bs.stop - bs.start)
        for i in range(psi.loc.size):
            lines.append(
                f"record = {layer_of[i]} {role_of[i]} {elem_of[i]} "
                f"{float(psi.loc[i])!r} {float(psi.log_scale[i])!r}"
            )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_prior(path) -> PriorParams:
    meta, records = {}, []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "record":
                records.append(value.split())
            else:
                meta[key] = value
    if int(meta.get("format_version", -1)) != PRIOR_FORMAT_VERSION:
        raise ValueError(f"unsupported prior checkpoint version {meta.get('format_version')}")
    shape = tensor_nn.MlpShape.from_dict(json.loads(meta["shape"]))
    if len(records) != int(meta["n_records"]):
        raise ValueError("truncated prior checkpoint")
    loc = np.array([float(r[3]) for r in records])
    log_scale = np.array([float(r[4]) for r in records])
    return PriorParams(shape, loc, log_scale, meta["granularity"])
