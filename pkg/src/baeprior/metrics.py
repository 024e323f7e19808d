"""Ensemble evaluation and the SGD-trajectory PCA subspace.

Log-likelihoods are per-image sums over pixels.  The predictive log-likelihood
of a datum is ``log mean_i p(x | w_i)``, evaluated with a max shift so values
in the thousands neither overflow nor underflow.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import tensor_nn
from .latent_density import decode_ensemble, encode_latents
from .likelihood import row_log_likelihood


def log_mean_exp(values, axis=0):
    values = np.asarray(values, dtype=np.float64)
    m = np.max(values, axis=axis, keepdims=True)
    out = m + np.log(np.mean(np.exp(values - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def member_log_likelihoods(ensemble, data, shape=None):
    """``(M, N)`` per-member, per-datum log-likelihoods."""
    shape = shape or ensemble.shape
    data = np.asarray(data, dtype=np.float64)
    rows = []
    for w in ensemble.samples:
        _, recon, _ = tensor_nn.forward(tensor_nn.unflatten(shape, w), data)
        rows.append(row_log_likelihood(data, recon))
    return np.array(rows)


def test_log_likelihood(ensemble, test_data, shape=None):
    """Per-datum predictive log-likelihood and its mean."""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    per = log_mean_exp(member_log_likelihoods(ensemble, test_data, shape), axis=0)
    return per, float(per.mean())


def reconstruct(ensemble, data, shape=None):
    """Ensemble-mean reconstruction through each member's own encoder and decoder.

    Returns ``(mean_recon, pixel_std)``.
    """
    shape = shape or ensemble.shape
    data = np.asarray(data, dtype=np.float64)
    outs = np.stack([tensor_nn.forward(tensor_nn.unflatten(shape, w), data)[1]
                     for w in ensemble.samples])
    return outs.mean(axis=0), outs.std(axis=0)


def reconstruct_via_latent_mean(ensemble, data, shape=None):
    """Decode the posterior-mean code with every decoder (generative path)."""
    return decode_ensemble(ensemble, encode_latents(ensemble, data, shape), shape)


def mean_predictive_variance(ensemble, data, shape=None):
    """Average over pixels and data of the across-member variance of the decoder mean."""
    _, std = reconstruct(ensemble, data, shape)
    return float(np.mean(std * std))


@dataclass
class SubspaceProjection:
    shift: np.ndarray
    projection: np.ndarray
    singular_values: np.ndarray

    @property
    def rank(self):
        return self.projection.shape[0]

    def basis(self):
        """Unit-norm rows spanning the subspace (zero rows stay zero)."""
        norms = np.linalg.norm(self.projection, axis=1, keepdims=True)
        return np.divide(self.projection, norms, out=np.zeros_like(self.projection),
                         where=norms > 0)

    def coordinates(self, vectors):
        """Coordinates of ``vectors - shift`` along the unit basis rows."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        return (vectors - self.shift) @ self.basis().T


def subspace_pca(deviations, rank, shift=None):
    """Top-``rank`` SVD of the ``(dim, M)`` deviation matrix; ``P = S V^T``.

    ``V`` holds right singular vectors of ``A^T`` (parameter directions), so
    ``P`` is ``(rank, dim)``.  Signs are fixed so each row's largest-magnitude
    entry is positive.
    """
    A = np.asarray(deviations, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("deviations must be a (dim, M) matrix")
    dim, m = A.shape
    if not 1 <= rank <= m:
        raise ValueError(f"rank must lie in [1, {m}], got {rank}")
    # A^T = U S V^T with V: (dim, m); economy SVD keeps this cheap for m << dim
    _, s, vt = np.linalg.svd(A.T, full_matrices=False)
    vt = vt[:rank]
    pivot = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(rank), pivot])
    signs[signs == 0] = 1.0
    vt = vt * signs[:, None]
    shift = np.zeros(dim) if shift is None else np.asarray(shift, dtype=np.float64)
    return SubspaceProjection(shift, s[:rank, None] * vt, s)


def collect_trajectory(grad_fn, w0, lr, steps, update_freq, max_cols):
    """Constant-rate SGD with a running mean and a sliding window of deviations.

    Every ``update_freq`` steps the running mean absorbs the current iterate
    and ``w_i - mean`` is appended; the oldest column is dropped beyond
    ``max_cols``.  Returns ``(mean, A)`` with ``A`` of shape ``(dim, cols)``.
    """
    if update_freq < 1:
        raise ValueError("update_freq must be >= 1")
    w = np.array(w0, dtype=np.float64)
    mean = w.copy()
    n = 1
    cols = deque(maxlen=max_cols)
    for i in range(1, steps + 1):
        w = w - lr * grad_fn(w, i - 1)
        if i % update_freq == 0:
            mean = (n * mean + w) / (n + 1)
            n += 1
            cols.append(w - mean)
    A = np.array(cols).T if cols else np.zeros((w.size, 0))
    return mean, A


def write_loglik_csv(path, per_datum, header_comment=""):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "log_likelihood"])
        for i, v in enumerate(per_datum):
            out.writerow([i, repr(float(v))])
        out.writerow(["mean", repr(float(np.mean(per_datum)))])


def write_projection_csv(path, labels, coords, header_comment=""):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["label", "coord1", "coord2"])
        for lab, row in zip(labels, coords):
            out.writerow([lab, repr(float(row[0])), repr(float(row[1]))])
