"""Scale-adapted stochastic-gradient Hamiltonian Monte Carlo.

State per coordinate: position ``w``, momentum ``v``, uncentered gradient
variance ``vhat``, smoothed gradient ``g`` and moving-average window ``tau``.
During burn-in the moment estimates are updated first (see
:func:`adapt_step`), then::

    w += v
    v += -eps^2 vhat^{-1/2} grad - alpha v + N(0, 2 eps^2 alpha vhat^{-1/2} - eps^4)

with the noise variance clamped at zero.  After burn-in ``vhat`` is frozen.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels, tensor_nn
from .optim import Adam
from .prior import PriorParams, log_prior_density, log_prior_grad

log = logging.getLogger(__name__)

TEMPERING_MODES = ("none", "partial", "full")
ENSEMBLE_MAGIC = "BAEPRIOR-ENSEMBLE"
ENSEMBLE_FORMAT_VERSION = 1


class NonFiniteError(FloatingPointError):
    def __init__(self, msg, index=None, state=None):
        super().__init__(msg)
        self.index = index
        self.state = state or {}


@dataclass
class SghmcConfig:
    step_size: float = 0.003
    momentum: float = 0.05
    batch_size: int = 64
    burn_in_steps: int = 6000
    n_samples: int = 32
    thinning: int = 1000
    temperature: float = 1.0
    tempering: str = "none"
    warm_start_steps: int = 1000
    warm_start_lr: float = 1e-3
    window_offset: float = 1.0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.tempering not in TEMPERING_MODES:
            raise ValueError(f"tempering must be one of {TEMPERING_MODES}")
        if self.window_offset < 0:
            raise ValueError("window_offset must be nonnegative")
        if self.n_samples < 1 or self.thinning < 1 or self.batch_size < 1:
            raise ValueError("n_samples, thinning and batch_size must be >= 1")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SghmcState:
    w: np.ndarray
    v: np.ndarray
    vhat: np.ndarray
    g: np.ndarray
    tau: np.ndarray
    step_count: int = 0

    @classmethod
    def initial(cls, w0, v0=None):
        w = np.array(w0, dtype=np.float64)
        n = w.size
        v = np.zeros(n) if v0 is None else np.array(v0, dtype=np.float64)
        return cls(w, v, np.ones(n), np.zeros(n), np.ones(n))

    def copy(self):
        return SghmcState(self.w.copy(), self.v.copy(), self.vhat.copy(), self.g.copy(),
                          self.tau.copy(), self.step_count)


@dataclass
class PosteriorEnsemble:
    samples: np.ndarray
    shape: tensor_nn.MlpShape | None = None
    config_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.shape is not None and self.samples.shape[1] != self.shape.n_params:
            raise tensor_nn.ShapeError("ensemble vectors do not match the model shape")

    def __len__(self):
        return self.samples.shape[0]

    def __iter__(self):
        return iter(self.samples)

    def members(self):
        """Unflattened parameters of every member."""
        return [tensor_nn.unflatten(self.shape, w) for w in self.samples]


def _temperatures(mode, temperature):
    if mode not in TEMPERING_MODES:
        raise ValueError(f"tempering must be one of {TEMPERING_MODES}")
    if mode == "none":
        return 1.0, 1.0
    if mode == "partial":
        return temperature, 1.0
    return temperature, temperature


def potential_grad(w, minibatch, n_data, psi: PriorParams, shape, mode="none",
                   temperature=1.0):
    """Minibatch potential ``U~(w)`` and its gradient.

    ``U~ = -(N/M) / t_lik * sum_j log p(x_j | w) - log p(w) / t_prior`` where
    partial tempering sets ``t_lik = temperature`` and full tempering sets
    both.  ``mode="none"`` ignores ``temperature``.
    """
    t_lik, t_prior = _temperatures(mode, temperature)
    minibatch = np.asarray(minibatch, dtype=np.float64)
    if minibatch.ndim != 2 or minibatch.shape[0] == 0:
        raise ValueError("minibatch must be a nonempty 2-D array")
    scale = n_data / minibatch.shape[0] / t_lik
    params = tensor_nn.unflatten(shape, w)
    _, recon, tape = tensor_nn.forward(params, minibatch)
    logp, dlam = kernels.cb_logpdf_and_grad(minibatch, recon)
    grad = tensor_nn.backward(tape, params, -scale * dlam)
    grad -= log_prior_grad(psi, w) / t_prior
    u = -scale * float(logp.sum()) - log_prior_density(psi, w) / t_prior
    bad = ~np.isfinite(grad)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite gradient at coordinate {idx}", index=idx)
    return u, grad


def adapt_step(state: SghmcState, grad, window_offset=1.0) -> SghmcState:
    """Burn-in update of ``tau``, ``g`` and ``vhat`` (in place).

    ``tau`` uses the previous ``g`` and ``vhat``; the averages then move by
    ``1 / (tau + window_offset)`` toward the new gradient and its square.
    """
    kernels.sghmc_adapt(state.tau, state.g, state.vhat, np.ascontiguousarray(grad),
                        float(window_offset))
    return state


def sghmc_step(state: SghmcState, grad, cfg: SghmcConfig, rng, noise=None) -> SghmcState:
    """One position/momentum update (in place); ``noise`` defaults to fresh N(0, 1)."""
    if noise is None:
        noise = rng.standard_normal(state.w.size)
    kernels.sghmc_update(state.w, state.v, state.vhat, np.ascontiguousarray(grad),
                         np.ascontiguousarray(noise, dtype=np.float64),
                         float(cfg.step_size), float(cfg.momentum))
    state.step_count += 1
    return state


def minibatches(n_data, batch_size, rng):
    """Endless index batches; without replacement within an epoch, reshuffled per epoch."""
    if batch_size >= n_data:
        idx = np.arange(n_data)
        while True:
            yield idx
    while True:
        perm = rng.permutation(n_data)
        for start in range(0, n_data - batch_size + 1, batch_size):
            yield perm[start:start + batch_size]


def run_sghmc(grad_fn, w0, n_data, cfg: SghmcConfig, rng, v0=None, callback=None):
    """Generic chain driver.

    ``grad_fn(w, batch_indices) -> (U, grad)``.  Runs ``burn_in_steps`` with
    adaptation, then keeps every ``thinning``-th position until ``n_samples``
    are collected.  Returns ``(samples, final_state)``.
    """
    state = SghmcState.initial(w0, v0)
    batch_rng, noise_rng = [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2)] \
        if hasattr(rng.bit_generator, "seed_seq") else (rng, rng)
    batches = minibatches(n_data, cfg.batch_size, batch_rng)
    total = cfg.burn_in_steps + cfg.n_samples * cfg.thinning
    samples = []
    for step in range(total):
        idx = next(batches)
        u, grad = grad_fn(state.w, idx)
        if step < cfg.burn_in_steps:
            adapt_step(state, grad, cfg.window_offset)
        sghmc_step(state, grad, cfg, noise_rng)
        if not np.all(np.isfinite(state.w)):
            bad = int(np.flatnonzero(~np.isfinite(state.w))[0])
            raise NonFiniteError(f"chain diverged at step {step}, coordinate {bad}",
                                 index=bad, state={"step": step, "potential": u})
        kept = step - cfg.burn_in_steps + 1
        if kept > 0 and kept % cfg.thinning == 0:
            samples.append(state.w.copy())
        if callback is not None:
            callback(step, u, state)
    return np.array(samples), state


def warm_start(data, psi, shape, cfg: SghmcConfig, rng):
    """Default-initialized weights refined by Adam on the per-datum potential."""
    w = tensor_nn.default_init(shape, rng)
    n = data.shape[0]
    if cfg.warm_start_steps <= 0:
        return w
    adam = Adam(w.size, lr=cfg.warm_start_lr)
    batches = minibatches(n, cfg.batch_size, rng)
    for _ in range(cfg.warm_start_steps):
        _, grad = potential_grad(w, data[next(batches)], n, psi, shape,
                                 cfg.tempering, cfg.temperature)
        w = adam.step(w, grad / n)
    return w


def run_chain(data, psi: PriorParams, shape, cfg: SghmcConfig, rng, seed=0) -> PosteriorEnsemble:
    """Sample the autoencoder posterior under prior ``psi``."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError("empty training data")
    init_rng, chain_rng = [np.random.default_rng(s) for s in
                           np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(2)]
    w0 = warm_start(data, psi, shape, cfg, init_rng)
    n = data.shape[0]

    def grad_fn(w, idx):
        return potential_grad(w, data[idx], n, psi, shape, cfg.tempering, cfg.temperature)

    samples, _ = run_sghmc(grad_fn, w0, n, cfg, chain_rng)
    return PosteriorEnsemble(samples, shape, cfg.digest(), seed)


def save_ensemble(ens: PosteriorEnsemble, path, tool_version=""):
    """Plain-text header, then ``count * length`` little-endian float64 values."""
    header = [
        f"{ENSEMBLE_MAGIC} {ENSEMBLE_FORMAT_VERSION}",
        f"vector_length = {ens.samples.shape[1]}",
        f"count = {ens.samples.shape[0]}",
        f"config_hash = {ens.config_hash}",
        f"seed = {ens.seed}",
        f"tool_version = {tool_version}",
        f"shape = {json.dumps(ens.shape.to_dict(), sort_keys=True) if ens.shape else ''}",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(ens.samples, dtype="<f8").tobytes())


def load_ensemble(path) -> PosteriorEnsemble:
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii").split()
        if len(first) != 2 or first[0] != ENSEMBLE_MAGIC:
            raise ValueError(f"{path}: not an ensemble checkpoint")
        if int(first[1]) != ENSEMBLE_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported ensemble version {first[1]}")
        meta = {}
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            line = line.decode("ascii").rstrip("\n")
            if line == "end_header":
                break
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
        length, count = int(meta["vector_length"]), int(meta["count"])
        payload = fh.read()
    if len(payload) != 8 * length * count:
        raise ValueError(f"{path}: expected {8 * length * count} payload bytes, got {len(payload)}")
    samples = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(count, length)
    shape = tensor_nn.MlpShape.from_dict(json.loads(meta["shape"])) if meta.get("shape") else None
    return PosteriorEnsemble(samples, shape, meta.get("config_hash", ""), int(meta.get("seed", 0)))
