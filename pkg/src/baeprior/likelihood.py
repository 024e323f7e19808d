"""Continuous Bernoulli likelihood for pixels in [0, 1].

The density is ``K(lam) * lam**x * (1 - lam)**(1 - x)`` with normalizer
``K(lam) = 2 atanh(1 - 2 lam) / (1 - 2 lam)`` (``K(1/2) = 2``).  Closed forms
switch to series expansions within ``1e-4`` of ``lam = 1/2`` where they
degenerate to 0/0.  Pixels are independent; per-image values are row sums.
"""
import numpy as np

from . import kernels


class DomainError(ValueError):
    pass


def _lam(lam):
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all((lam > 0.0) & (lam < 1.0)):
        raise DomainError("lambda must lie strictly inside (0, 1)")
    return lam


def _unit(x, name, closed=True):
    x = np.asarray(x, dtype=np.float64)
    ok = (x >= 0.0) & (x <= 1.0) if closed else (x > 0.0) & (x < 1.0)
    if not np.all(ok):
        raise DomainError(f"{name} must lie in {'[0, 1]' if closed else '(0, 1)'}")
    return x


def _out(value, scalar):
    return float(value) if scalar else value


def cb_log_norm_const(lam):
    """``log K(lam)``; scalar in, scalar out."""
    lam = _lam(lam)
    return _out(kernels.cb_log_norm_const(lam), lam.ndim == 0)


def cb_log_norm_const_grad(lam):
    lam = _lam(lam)
    return _out(kernels.cb_log_norm_const_grad(lam), lam.ndim == 0)


def cb_log_density(x, lam):
    """Elementwise log-density of ``x`` under CB(``lam``)."""
    x, lam = np.broadcast_arrays(_unit(x, "x"), _lam(lam))
    logp, _ = kernels.cb_logpdf_and_grad(x, lam)
    return _out(logp, lam.ndim == 0)


def cb_log_density_and_grad(x, lam):
    """Log-density and its derivative with respect to ``lam``, elementwise."""
    x, lam = np.broadcast_arrays(_unit(x, "x"), _lam(lam))
    return kernels.cb_logpdf_and_grad(x, lam)


def cb_cdf(x, lam):
    """``F(x; lam) = expm1(x * logit(lam)) / expm1(logit(lam))``, ``x`` at ``lam = 1/2``."""
    x, lam = np.broadcast_arrays(_unit(x, "x"), _lam(lam))
    logit = np.log(lam) - np.log1p(-lam)
    half = np.abs(lam - 0.5) < kernels.HALF_BRANCH
    safe = np.where(half, 1.0, logit)
    out = np.where(half, x, np.expm1(x * safe) / np.expm1(safe))
    return _out(out, lam.ndim == 0)


def cb_sample(lam, u):
    """Reparameterized draw ``x = F^{-1}(u; lam)``.

    Returns ``(x, dx_dlam)``; ``u`` is uniform noise in (0, 1).
    """
    lam, u = np.broadcast_arrays(_lam(lam), _unit(u, "u", closed=False))
    x, dx = kernels.cb_icdf_and_grad(lam, u)
    if lam.ndim == 0:
        return float(x), float(dx)
    return x, dx


def cb_mean(lam):
    """Mean of CB(lam): ``lam / (2 lam - 1) + 1 / (2 atanh(1 - 2 lam))``, 1/2 at 1/2."""
    lam = _lam(lam)
    t = 1.0 - 2.0 * lam
    half = np.abs(t) < 2e-4
    safe = np.where(half, 0.5, t)
    closed = lam / (-safe) + 1.0 / (2.0 * np.arctanh(safe))
    series = 0.5 - t / 6.0 - 2.0 * t ** 3 / 45.0
    return _out(np.where(half, series, closed), lam.ndim == 0)


def row_log_likelihood(x, lam):
    """Per-row sum of pixel log-densities, shape ``(N,)``."""
    logp, _ = kernels.cb_logpdf_and_grad(
        np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(lam, dtype=np.float64)
    )
    return logp.sum(axis=1)
