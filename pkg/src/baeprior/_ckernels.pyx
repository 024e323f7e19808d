# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the elementwise kernels in ``_kernels_py``."""
import numpy as np
from libc.math cimport log, log1p, expm1, atanh, sqrt, fabs

cdef double HALF_BRANCH = 1e-4
cdef double GRAD_BRANCH = 1e-2
cdef double VHAT_FLOOR = 1e-16
cdef double LOG2 = 0.6931471805599453


cdef inline double _log_norm_const(double lam) nogil:
    cdef double t = 1.0 - 2.0 * lam
    cdef double t2
    if fabs(lam - 0.5) < HALF_BRANCH:
        t2 = t * t
        return LOG2 + t2 * (1.0 / 3.0 + t2 * (13.0 / 90.0 + t2 * (251.0 / 2835.0)))
    return log(2.0 * atanh(t) / t)


cdef inline double _log_norm_const_grad(double lam) nogil:
    cdef double t = 1.0 - 2.0 * lam
    cdef double t2
    if fabs(lam - 0.5) < GRAD_BRANCH:
        t2 = t * t
        return -2.0 * t * (
            2.0 / 3.0
            + t2 * (52.0 / 90.0 + t2 * (1506.0 / 2835.0 + t2 * (8.0 * 3551.0 / 56700.0)))
        )
    return -2.0 * (1.0 / ((1.0 - t * t) * atanh(t)) - 1.0 / t)


def cb_log_norm_const(lam):
    cdef const double[::1] l = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    out = np.empty(l.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(l.shape[0]):
            o[i] = _log_norm_const(l[i])
    return out.reshape(np.shape(lam))


def cb_log_norm_const_grad(lam):
    cdef const double[::1] l = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    out = np.empty(l.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(l.shape[0]):
            o[i] = _log_norm_const_grad(l[i])
    return out.reshape(np.shape(lam))


def cb_logpdf_and_grad(x, lam):
    shape = np.shape(lam)
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef const double[::1] l = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    logp = np.empty(l.shape[0])
    dlam = np.empty(l.shape[0])
    cdef double[::1] lp = logp
    cdef double[::1] dl = dlam
    cdef Py_ssize_t i
    cdef double a, xi, t, at, lk, dk, dist
    with nogil:
        for i in range(l.shape[0]):
            a = l[i]
            xi = xs[i]
            dist = fabs(a - 0.5)
            if dist < GRAD_BRANCH:
                lk = _log_norm_const(a)
                dk = _log_norm_const_grad(a)
            else:
                # one atanh serves both the normalizer and its derivative
                t = 1.0 - 2.0 * a
                at = atanh(t)
                lk = log(2.0 * at / t)
                dk = -2.0 * (1.0 / ((1.0 - t * t) * at) - 1.0 / t)
            lp[i] = lk + xi * log(a) + (1.0 - xi) * log1p(-a)
            dl[i] = dk + xi / a - (1.0 - xi) / (1.0 - a)
    return logp.reshape(shape), dlam.reshape(shape)


def cb_icdf_and_grad(lam, u):
    shape = np.shape(lam)
    cdef const double[::1] l = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    cdef const double[::1] us = np.ascontiguousarray(u, dtype=np.float64).ravel()
    x = np.empty(l.shape[0])
    dx = np.empty(l.shape[0])
    cdef double[::1] xo = x
    cdef double[::1] dxo = dx
    cdef Py_ssize_t i
    cdef double lg, em1, inner, xc, ui, a, b, c, lam_i
    with nogil:
        for i in range(l.shape[0]):
            lam_i = l[i]
            ui = us[i]
            lg = log(lam_i) - log1p(-lam_i)
            if fabs(lam_i - 0.5) < HALF_BRANCH:
                a = ui * (1.0 - ui)
                b = 1.0 - 2.0 * ui
                c = 6.0 * ui * ui - 6.0 * ui + 1.0
                xo[i] = ui + lg * (a / 2.0 + lg * (a * b / 6.0 + lg * (-a * c / 24.0)))
                dxo[i] = (a / 2.0 + lg * (a * b / 3.0 + lg * (-a * c / 8.0))) / (lam_i * (1.0 - lam_i))
            else:
                em1 = expm1(lg)
                inner = ui * em1
                xc = log1p(inner) / lg
                xo[i] = xc
                dxo[i] = ((ui * (em1 + 1.0) / (1.0 + inner) - xc) / lg) / (lam_i * (1.0 - lam_i))
    return x.reshape(shape), dx.reshape(shape)


def sghmc_adapt(double[::1] tau, double[::1] g, double[::1] vhat, const double[::1] grad,
                double offset=1.0):
    cdef Py_ssize_t i
    cdef double t, gi, vi, dg, nt
    with nogil:
        for i in range(tau.shape[0]):
            t = tau[i]
            gi = g[i]
            vi = vhat[i]
            dg = grad[i]
            nt = t - gi * gi / vi * t + 1.0
            g[i] = gi + (dg - gi) / (t + offset)
            vi = vi + (dg * dg - vi) / (t + offset)
            vhat[i] = vi if vi > VHAT_FLOOR else VHAT_FLOOR
            tau[i] = nt if nt > 1.0 else 1.0


def sghmc_update(double[::1] w, double[::1] v, const double[::1] vhat, const double[::1] grad,
                 const double[::1] noise, double eps, double alpha):
    cdef Py_ssize_t i
    cdef double minv, var, vi
    cdef double eps2 = eps * eps
    cdef double eps4 = eps2 * eps2
    with nogil:
        for i in range(w.shape[0]):
            minv = 1.0 / sqrt(vhat[i])
            var = 2.0 * eps2 * alpha * minv - eps4
            if var < 0.0:
                var = 0.0
            vi = v[i]
            w[i] = w[i] + vi
            v[i] = vi + (-eps2 * minv * grad[i] - alpha * vi + sqrt(var) * noise[i])
