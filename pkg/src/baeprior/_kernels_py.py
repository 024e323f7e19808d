"""Pure-numpy implementations of the hot elementwise kernels.

These mirror ``_ckernels.pyx`` one for one and are used whenever the
compiled extension is unavailable (or ``BAEPRIOR_KERNELS=python``).
All functions take and return contiguous float64 arrays of equal shape.
"""
import numpy as np

# |lambda - 1/2| below which closed forms are replaced by series expansions
HALF_BRANCH = 1e-4
# wider series window for d log K / d lambda, whose closed form cancels as 1/t
GRAD_BRANCH = 1e-2
VHAT_FLOOR = 1e-16

_LOG2 = np.log(2.0)


def cb_log_norm_const(lam):
    t = 1.0 - 2.0 * lam
    near = np.abs(lam - 0.5) < HALF_BRANCH
    t_safe = np.where(near, 0.5, t)
    closed = np.log(2.0 * np.arctanh(t_safe) / t_safe)
    t2 = t * t
    series = _LOG2 + t2 * (1.0 / 3.0 + t2 * (13.0 / 90.0 + t2 * (251.0 / 2835.0)))
    return np.where(near, series, closed)


def cb_log_norm_const_grad(lam):
    """d log K / d lambda."""
    t = 1.0 - 2.0 * lam
    near = np.abs(lam - 0.5) < GRAD_BRANCH
    t_safe = np.where(near, 0.5, t)
    dt = 1.0 / ((1.0 - t_safe * t_safe) * np.arctanh(t_safe)) - 1.0 / t_safe
    t2 = t * t
    series = t * (
        2.0 / 3.0
        + t2 * (52.0 / 90.0 + t2 * (1506.0 / 2835.0 + t2 * (8.0 * 3551.0 / 56700.0)))
    )
    return -2.0 * np.where(near, series, dt)


def cb_logpdf_and_grad(x, lam):
    """Elementwise log-density and its derivative in lambda."""
    log1m = np.log1p(-lam)
    logp = cb_log_norm_const(lam) + x * np.log(lam) + (1.0 - x) * log1m
    dlam = cb_log_norm_const_grad(lam) + x / lam - (1.0 - x) / (1.0 - lam)
    return logp, dlam


def cb_icdf_and_grad(lam, u):
    """Inverse CDF sample x = F^{-1}(u; lambda) and dx/dlambda."""
    logit = np.log(lam) - np.log1p(-lam)
    near = np.abs(lam - 0.5) < HALF_BRANCH
    l_safe = np.where(near, 1.0, logit)
    em1 = np.expm1(l_safe)
    inner = u * em1
    x_closed = np.log1p(inner) / l_safe
    dx_closed = (u * (em1 + 1.0) / (1.0 + inner) - x_closed) / l_safe

    a = u * (1.0 - u)
    b = 1.0 - 2.0 * u
    c = 6.0 * u * u - 6.0 * u + 1.0
    x_series = u + logit * (a / 2.0 + logit * (a * b / 6.0 + logit * (-a * c / 24.0)))
    dx_series = a / 2.0 + logit * (a * b / 3.0 + logit * (-a * c / 8.0))

    x = np.where(near, x_series, x_closed)
    dxdl = np.where(near, dx_series, dx_closed)
    return x, dxdl / (lam * (1.0 - lam))


def sghmc_adapt(tau, g, vhat, grad, offset=1.0):
    """One burn-in update of (tau, g, vhat), in place, explicit Euler form.

    The averages move by ``1 / (tau + offset)``; ``offset=0`` lets a single
    gradient overwrite them whenever ``tau == 1``.
    """
    inv_tau = 1.0 / (tau + offset)
    new_tau = tau - g * g / vhat * tau + 1.0
    g += inv_tau * (grad - g)
    vhat += inv_tau * (grad * grad - vhat)
    np.maximum(vhat, VHAT_FLOOR, out=vhat)
    np.maximum(new_tau, 1.0, out=tau)


def sghmc_update(w, v, vhat, grad, noise, eps, alpha):
    """Position and momentum update in place; ``noise`` is standard normal."""
    minv = 1.0 / np.sqrt(vhat)
    var = 2.0 * eps * eps * alpha * minv - eps ** 4
    np.maximum(var, 0.0, out=var)
    w += v
    v += -(eps * eps) * minv * grad - alpha * v + np.sqrt(var) * noise
