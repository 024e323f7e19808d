"""Dense MLP autoencoder with explicit forward and reverse-mode passes.

Batches are row-major ``(N, features)`` float64 arrays.  A layer computes
``act(x @ W.T + b)`` with ``W`` of shape ``(out, in)``.  The decoder always
ends in a sigmoid whose output is clamped to ``[CLAMP, 1 - CLAMP]`` so it
can be fed straight into the continuous Bernoulli likelihood.

Parameters have a canonical flat layout: encoder layers first, then decoder
layers; within a layer the weight (row-major) precedes the bias.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLAMP = 1e-6
LEAKY_SLOPE = 0.01

ACTIVATIONS = ("leaky_relu", "sigmoid", "identity")


class ShapeError(ValueError):
    pass


class StaleTapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky-ReLU slope must lie in (0, 1)")

    @property
    def n_params(self) -> int:
        return self.out_dim * self.in_dim + self.out_dim


@dataclass(frozen=True)
class MlpShape:
    """Architecture of the autoencoder; doubles as the unflatten spec.

    ``encoder`` and ``decoder`` are tuples of :class:`LayerSpec`.  Use
    :meth:`autoencoder` for the standard leaky-ReLU/sigmoid layout.
    """

    encoder: tuple
    decoder: tuple
    allow_wide_latent: bool = False

    def __post_init__(self):
        layers = self.layers
        if not self.encoder or not self.decoder:
            raise ShapeError("encoder and decoder need at least one layer each")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {a} does not feed {b}")
        if self.decoder[-1].out_dim != self.input_dim:
            raise ShapeError("decoder output must match input dimension")
        if self.decoder[-1].activation != "sigmoid":
            raise ShapeError("decoder must end in a sigmoid")
        if not self.allow_wide_latent and self.latent_dim >= self.input_dim:
            raise ShapeError("latent dimension must be smaller than input dimension")

    @classmethod
    def autoencoder(cls, input_dim, latent_dim, hidden=(256,), decoder_hidden=None,
                    slope=LEAKY_SLOPE):
        """Encoder ``D -> hidden... -> K`` (linear code), mirrored decoder."""
        hidden = tuple(int(h) for h in hidden)
        dec_hidden = tuple(reversed(hidden)) if decoder_hidden is None else tuple(decoder_hidden)
        enc_dims = (input_dim,) + hidden + (latent_dim,)
        dec_dims = (latent_dim,) + dec_hidden + (input_dim,)
        enc = tuple(
            LayerSpec(i, o, "leaky_relu" if k < len(enc_dims) - 2 else "identity", slope)
            for k, (i, o) in enumerate(zip(enc_dims[:-1], enc_dims[1:]))
        )
        dec = tuple(
            LayerSpec(i, o, "leaky_relu" if k < len(dec_dims) - 2 else "sigmoid", slope)
            for k, (i, o) in enumerate(zip(dec_dims[:-1], dec_dims[1:]))
        )
        return cls(enc, dec)

    @property
    def layers(self) -> tuple:
        return tuple(self.encoder) + tuple(self.decoder)

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].out_dim

    @property
    def n_layers(self) -> int:
        return len(self.encoder) + len(self.decoder)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def offsets(self):
        """Yield ``(layer_index, weight_slice, bias_slice)`` in flat order."""
        pos = 0
        for k, layer in enumerate(self.layers):
            nw = layer.out_dim * layer.in_dim
            yield k, slice(pos, pos + nw), slice(pos + nw, pos + nw + layer.out_dim)
            pos += layer.n_params

    def encoder_slice(self) -> slice:
        return slice(0, sum(layer.n_params for layer in self.encoder))

    def decoder_slice(self) -> slice:
        return slice(self.encoder_slice().stop, self.n_params)

    def to_dict(self) -> dict:
        return {
            "encoder": [[l.in_dim, l.out_dim, l.activation, l.slope] for l in self.encoder],
            "decoder": [[l.in_dim, l.out_dim, l.activation, l.slope] for l in self.decoder],
            "allow_wide_latent": self.allow_wide_latent,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpShape":
        return cls(
            tuple(LayerSpec(int(a), int(b), str(c), float(s)) for a, b, c, s in d["encoder"]),
            tuple(LayerSpec(int(a), int(b), str(c), float(s)) for a, b, c, s in d["decoder"]),
            bool(d.get("allow_wide_latent", False)),
        )


@dataclass
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray
    spec: LayerSpec


@dataclass
class MlpParams:
    shape: MlpShape
    encoder_layers: list
    decoder_layers: list

    @property
    def layers(self) -> list:
        return list(self.encoder_layers) + list(self.decoder_layers)


@dataclass
class GradientTape:
    """Inputs and pre-activations cached by :func:`forward`."""

    params: MlpParams
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


def unflatten(shape: MlpShape, vector) -> MlpParams:
    """Split a flat vector into layers.  The arrays are views of ``vector``."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.size != shape.n_params:
        raise ShapeError(f"expected flat vector of length {shape.n_params}, got {vector.shape}")
    layers = []
    for k, ws, bs in shape.offsets():
        spec = shape.layers[k]
        layers.append(LayerParams(vector[ws].reshape(spec.out_dim, spec.in_dim), vector[bs], spec))
    n_enc = len(shape.encoder)
    return MlpParams(shape, layers[:n_enc], layers[n_enc:])


def flatten(params: MlpParams) -> np.ndarray:
    out = np.empty(params.shape.n_params)
    for (k, ws, bs), layer in zip(params.shape.offsets(), params.layers):
        out[ws] = layer.weight.ravel()
        out[bs] = layer.bias
    return out


def zeros(shape: MlpShape) -> MlpParams:
    return unflatten(shape, np.zeros(shape.n_params))


def default_init(shape: MlpShape, rng) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    w = np.empty(shape.n_params)
    for k, ws, bs in shape.offsets():
        bound = 1.0 / np.sqrt(shape.layers[k].in_dim)
        w[ws] = rng.uniform(-bound, bound, ws.stop - ws.start)
        w[bs] = rng.uniform(-bound, bound, bs.stop - bs.start)
    return w


def _activate(a, spec: LayerSpec):
    if spec.activation == "leaky_relu":
        return np.where(a >= 0.0, a, spec.slope * a)
    if spec.activation == "sigmoid":
        return np.clip(_sigmoid(a), CLAMP, 1.0 - CLAMP)
    return a


def _sigmoid(a):
    # two-sided form avoids overflow in exp for large |a|
    e = np.exp(-np.abs(a))
    return np.where(a >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _activate_grad(a, out, spec: LayerSpec, delta):
    if spec.activation == "leaky_relu":
        return np.where(a >= 0.0, delta, spec.slope * delta)
    if spec.activation == "sigmoid":
        s = _sigmoid(a)
        live = (s > CLAMP) & (s < 1.0 - CLAMP)
        return np.where(live, delta * s * (1.0 - s), 0.0)
    return delta


def _check_batch(batch, dim):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != dim:
        raise ShapeError(f"expected batch of shape (N, {dim}), got {batch.shape}")
    return batch


def _run(layers, x, tape=None):
    for layer in layers:
        a = x @ layer.weight.T + layer.bias
        out = _activate(a, layer.spec)
        if tape is not None:
            tape.inputs.append(x)
            tape.pre.append(a)
            tape.outputs.append(out)
        x = out
    return x


def forward(params: MlpParams, batch):
    """Run encoder and decoder; returns ``(latent, recon, tape)``."""
    batch = _check_batch(batch, params.shape.input_dim)
    tape = GradientTape(params)
    latent = _run(params.encoder_layers, batch, tape)
    recon = _run(params.decoder_layers, latent, tape)
    return latent, recon, tape


def encode(params: MlpParams, batch) -> np.ndarray:
    return _run(params.encoder_layers, _check_batch(batch, params.shape.input_dim))


def decode(params: MlpParams, latent) -> np.ndarray:
    return _run(params.decoder_layers, _check_batch(latent, params.shape.latent_dim))


def backward(tape: GradientTape, params: MlpParams, d_recon) -> np.ndarray:
    """Gradient of ``sum(d_recon * recon)`` with respect to the flat parameters."""
    if tape.params is not params or len(tape.pre) != params.shape.n_layers:
        raise StaleTapeError("tape was not produced by forward() on these parameters")
    delta = np.asarray(d_recon, dtype=np.float64)
    if delta.shape != tape.outputs[-1].shape:
        raise ShapeError(f"adjoint shape {delta.shape} != recon shape {tape.outputs[-1].shape}")
    grad = np.empty(params.shape.n_params)
    offsets = list(params.shape.offsets())
    layers = params.layers
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        dz = _activate_grad(tape.pre[k], tape.outputs[k], layer.spec, delta)
        _, ws, bs = offsets[k]
        grad[ws] = (dz.T @ tape.inputs[k]).ravel()
        grad[bs] = dz.sum(axis=0)
        if k:
            delta = dz @ layer.weight
    return grad
