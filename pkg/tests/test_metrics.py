import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from baeprior import metrics as M, sghmc, tensor_nn as T
from baeprior.likelihood import row_log_likelihood


def _ensemble(shape, m, seed):
    return sghmc.PosteriorEnsemble(np.random.default_rng(seed).standard_normal((m, shape.n_params)), shape)


def test_log_mean_exp_large_magnitudes():
    assert M.log_mean_exp([-1000.0, -1002.0]) == pytest.approx(-1000 + np.log((1 + np.exp(-2)) / 2), abs=1e-12)
    assert M.log_mean_exp([-1000.0, -1002.0]) == pytest.approx(-1000.5662, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8))
def test_log_mean_exp_finite_and_bounded(vals):
    out = M.log_mean_exp(vals)
    assert np.isfinite(out)
    assert min(vals) - 1e-6 * max(1.0, abs(min(vals))) <= out <= max(vals) + 1e-9 * max(1.0, abs(max(vals)))


def test_single_member_log_likelihood(tiny_shape, rng):
    ens = _ensemble(tiny_shape, 1, 0)
    x = rng.uniform(size=(5, 6))
    per, mean = M.test_log_likelihood(ens, x)
    _, recon, _ = T.forward(T.unflatten(tiny_shape, ens.samples[0]), x)
    np.testing.assert_array_equal(per, row_log_likelihood(x, recon))
    assert mean == pytest.approx(per.mean(), rel=1e-15)


def test_identical_members_match_single(tiny_shape, rng):
    ens = _ensemble(tiny_shape, 1, 0)
    x = rng.uniform(size=(5, 6))
    many = sghmc.PosteriorEnsemble(np.repeat(ens.samples, 4, axis=0), tiny_shape)
    np.testing.assert_allclose(M.test_log_likelihood(many, x)[0], M.test_log_likelihood(ens, x)[0],
                               rtol=1e-14)


def test_log_likelihood_permutation_invariant(tiny_shape, rng):
    ens = _ensemble(tiny_shape, 6, 1)
    x = rng.uniform(size=(4, 6))
    flipped = sghmc.PosteriorEnsemble(ens.samples[::-1].copy(), tiny_shape)
    np.testing.assert_allclose(M.test_log_likelihood(flipped, x)[0], M.test_log_likelihood(ens, x)[0],
                               rtol=1e-13)


def test_log_likelihood_matches_naive(tiny_shape, rng):
    ens = _ensemble(tiny_shape, 3, 2)
    x = rng.uniform(size=(2, 6))
    ll = M.member_log_likelihoods(ens, x)
    assert ll.shape == (3, 2)
    np.testing.assert_allclose(M.test_log_likelihood(ens, x)[0], np.log(np.exp(ll).mean(axis=0)), rtol=1e-12)


def test_empty_ensemble_rejected(tiny_shape):
    with pytest.raises(ValueError):
        M.test_log_likelihood(sghmc.PosteriorEnsemble(np.zeros((0, tiny_shape.n_params))), np.zeros((1, 6)),
                              tiny_shape)


def test_reconstruct_matches_naive_loop(tiny_shape, rng):
    ens = _ensemble(tiny_shape, 4, 3)
    x = rng.uniform(size=(3, 6))
    mean, std = M.reconstruct(ens, x)
    outs = np.array([T.forward(T.unflatten(tiny_shape, w), x)[1] for w in ens.samples])
    np.testing.assert_allclose(mean, outs.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(std, outs.std(axis=0), rtol=1e-12, atol=1e-15)
    assert M.mean_predictive_variance(ens, x) == pytest.approx(np.mean(outs.var(axis=0)), rel=1e-12)


def test_reconstruct_single_member_has_zero_spread(tiny_shape, rng):
    ens = _ensemble(tiny_shape, 1, 4)
    x = rng.uniform(size=(2, 6))
    mean, std = M.reconstruct(ens, x)
    np.testing.assert_array_equal(mean, T.forward(T.unflatten(tiny_shape, ens.samples[0]), x)[1])
    np.testing.assert_array_equal(std, 0.0)
    assert M.mean_predictive_variance(ens, x) == 0.0
    lm, ls = M.reconstruct_via_latent_mean(ens, x)
    np.testing.assert_allclose(lm, mean, rtol=1e-14)
    np.testing.assert_array_equal(ls, 0.0)


def test_constant_trajectory_gives_zero_projection():
    proj = M.subspace_pca(np.zeros((10, 4)), 2)
    np.testing.assert_array_equal(proj.singular_values, 0.0)
    np.testing.assert_array_equal(proj.projection, 0.0)
    np.testing.assert_array_equal(proj.basis(), 0.0)


def _rank_two(rng, dim=40, cols=12):
    u = rng.standard_normal((dim, 2))
    return u @ rng.standard_normal((2, cols)), u


def test_exact_rank_two_recovered(rng):
    A, u = _rank_two(rng)
    proj = M.subspace_pca(A, 2)
    assert proj.singular_values[2] < 1e-10
    assert np.max(linalg.subspace_angles(proj.basis().T, u)) < 1e-8


def _eckart_young_gap(A, r):
    proj = M.subspace_pca(A, r)
    B = proj.basis()
    err = np.linalg.norm(A - B.T @ (B @ A)) ** 2
    s = np.linalg.svd(A, compute_uv=False)
    return err, float(np.sum(s[r:] ** 2))


@pytest.mark.parametrize("r", [1, 2, 3])
def test_eckart_young_error(rng, r):
    A = rng.standard_normal((30, 8))
    err, opt = _eckart_young_gap(A, r)
    assert abs(err - opt) < 1e-8


def test_projection_rows_scaled_by_singular_values(rng):
    A = rng.standard_normal((20, 6))
    proj = M.subspace_pca(A, 3)
    np.testing.assert_allclose(np.linalg.norm(proj.projection, axis=1), proj.singular_values[:3], rtol=1e-12)
    # deterministic signs: largest-magnitude entry of each row is positive
    rows = proj.projection
    assert np.all(rows[np.arange(3), np.argmax(np.abs(rows), axis=1)] > 0)
    np.testing.assert_array_equal(M.subspace_pca(A, 3).projection, proj.projection)


def test_rank_validated(rng):
    with pytest.raises(ValueError):
        M.subspace_pca(rng.standard_normal((5, 2)), 3)
    with pytest.raises(ValueError):
        M.subspace_pca(rng.standard_normal((5, 2)), 0)


def test_coordinates_of_shifted_points(rng):
    A, _ = _rank_two(rng)
    shift = rng.standard_normal(40)
    proj = M.subspace_pca(A, 2, shift=shift)
    coords = proj.coordinates(shift + A.T)
    np.testing.assert_allclose(coords, (proj.basis() @ A).T, rtol=1e-12)


def test_short_trajectory_is_empty():
    w0 = np.array([1.0, 2.0])
    mean, A = M.collect_trajectory(lambda w, i: w, w0, 0.1, steps=3, update_freq=5, max_cols=4)
    np.testing.assert_array_equal(mean, w0)
    assert A.shape == (2, 0)


def test_trajectory_mean_and_columns():
    rng = np.random.default_rng(0)
    targets = rng.standard_normal((100, 3))
    snaps = []

    def grad(w, i):
        return w - targets[i]

    w = np.zeros(3)
    for i in range(47):
        w = w - 0.2 * grad(w, i)
        if (i + 1) % 5 == 0:
            snaps.append(w.copy())
    mean, A = M.collect_trajectory(grad, np.zeros(3), 0.2, steps=47, update_freq=5, max_cols=4)
    # the running mean starts from w0 and absorbs every snapshot
    np.testing.assert_allclose(mean, np.mean([np.zeros(3)] + snaps, axis=0), rtol=1e-12, atol=1e-15)
    assert A.shape == (3, min(47 // 5, 4))
    np.testing.assert_allclose(A[:, -1], snaps[-1] - mean, rtol=1e-12)


def test_trajectory_rejects_bad_frequency():
    with pytest.raises(ValueError):
        M.collect_trajectory(lambda w, i: w, np.zeros(1), 0.1, 10, 0, 2)


def test_csv_writers(tmp_path):
    path = tmp_path / "ll.csv"
    M.write_loglik_csv(path, [-1.5, -2.5], header_comment="provenance x")
    lines = path.read_text().splitlines()
    assert lines[0] == "# provenance x"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["index", "log_likelihood"] and rows[-1] == ["mean", "-2.0"]
    path = tmp_path / "proj.csv"
    M.write_projection_csv(path, ["prior", "posterior"], np.array([[0.1, 0.2], [0.3, 0.4]]))
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == ["label", "coord1", "coord2"] and rows[2] == ["posterior", "0.3", "0.4"]
