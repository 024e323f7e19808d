"""Workflow stages over an :class:`ExperimentConfig`, with checkpoint files between them.

prior -> posterior ensemble -> latent mixture -> generate / reconstruct /
evaluate, plus the tempering sweep and the trajectory subspace projection.
Each stage draws randomness from its own seed-derived generator, so rerunning
a stage with identical inputs reproduces its outputs bit for bit.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import __version__, data_io, latent_density, metrics, prior, sghmc, tensor_nn
from .config import ExperimentConfig

log = logging.getLogger(__name__)

ARTIFACTS = {
    "prior": "prior.txt",
    "prior_trace": "prior_trace.csv",
    "ensemble": "ensemble.bin",
    "mixture": "mixture.txt",
    "generated": "generated.pgm",
    "generated_std": "generated_std.pgm",
    "recon_input": "recon_input.pgm",
    "recon_mean": "recon_mean.pgm",
    "recon_std": "recon_std.pgm",
    "recon_csv": "recon.csv",
    "metrics": "metrics.csv",
    "temper": "temper.csv",
    "subspace": "subspace.csv",
}

PRODUCER = {"prior": "optimize-prior", "ensemble": "sample-posterior", "mixture": "fit-latent"}


class MissingInputError(FileNotFoundError):
    pass


@dataclass
class Splits:
    prior: np.ndarray
    train: np.ndarray
    test: np.ndarray
    height: int
    width: int


def _grid_dims(d):
    side = int(round(np.sqrt(d)))
    return (side, side) if side * side == d else (1, d)


def load_splits(cfg: ExperimentConfig) -> Splits:
    """Prior-optimization, training and test sets, disjoint."""
    n_prior, n_train, n_test = cfg["data.prior_size"], cfg["data.train_size"], cfg["data.test_size"]
    rng = np.random.default_rng(cfg["data.seed"])
    if cfg["data.source"] == "synthetic":
        ds, _ = data_io.synth_decoder_dataset(cfg["data.seed"], n_prior + n_train + n_test,
                                              cfg["data.synthetic_dim"], cfg["data.synthetic_latent"])
        x = ds.images
        h, w = _grid_dims(x.shape[1])
        return Splits(x[:n_prior], x[n_prior:n_prior + n_train], x[n_prior + n_train:], h, w)
    labels_path = cfg["data.labels"] or None
    ds = data_io.load_idx(cfg["data.images"], labels_path)
    h, w = ds.meta["height"], ds.meta["width"]
    if ds.labels is None:
        idx = rng.permutation(len(ds))
        prior_idx, pool = idx[:n_prior], idx[n_prior:]
    else:
        prior_idx = rng.permutation(np.flatnonzero(np.isin(ds.labels, cfg["data.prior_digits"])))[:n_prior]
        pool = np.flatnonzero(np.isin(ds.labels, cfg["data.train_digits"]))
        pool = rng.permutation(np.setdiff1d(pool, prior_idx))
    if len(prior_idx) < n_prior or len(pool) < n_train + n_test:
        raise data_io.FormatError("dataset too small for the requested split sizes")
    x = ds.images
    return Splits(x[prior_idx], x[pool[:n_train]], x[pool[n_train:n_train + n_test]], h, w)


def model_shape(cfg: ExperimentConfig, input_dim) -> tensor_nn.MlpShape:
    return tensor_nn.MlpShape.autoencoder(input_dim, cfg["model.latent"], hidden=cfg["model.hidden"])


def artifact(out_dir, name):
    return os.path.join(out_dir, ARTIFACTS[name])


def _require(path, kind):
    if not os.path.exists(path):
        raise MissingInputError(
            f"{path} not found; run 'baeprior {PRODUCER[kind]}' first or pass its path explicitly"
        )
    return path


def _write_csv(path, cfg, header, rows, note=""):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {cfg.provenance()}{' ' + note if note else ''}\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _load_ensemble(path, shape):
    ens = sghmc.load_ensemble(_require(path, "ensemble"))
    if ens.shape is not None and ens.shape != shape:
        raise data_io.FormatError(f"{path}: ensemble shape does not match the configured model")
    ens.shape = shape
    return ens


# stages ---------------------------------------------------------------------

def run_optimize_prior(cfg: ExperimentConfig, out_dir, splits=None):
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    psi0 = prior.PriorParams.standard(shape, granularity=cfg["prior.granularity"])
    trace = []
    if cfg["prior.kind"] == "optimized":
        psi, trace = prior.optimize_prior(splits.prior, psi0, cfg.prior_opt())
    else:
        psi = psi0
    os.makedirs(out_dir, exist_ok=True)
    prior.save_prior(psi, artifact(out_dir, "prior"), cfg.digest(), __version__)
    _write_csv(artifact(out_dir, "prior_trace"), cfg, ["step", "dswd"], enumerate(trace))
    return psi, trace


def run_sample_posterior(cfg: ExperimentConfig, out_dir, prior_path=None, splits=None,
                         tempering=None, temperature=None, write=True):
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    psi = prior.load_prior(_require(prior_path or artifact(out_dir, "prior"), "prior"))
    if psi.shape != shape:
        raise data_io.FormatError("prior checkpoint shape does not match the configured model")
    scfg = cfg.sghmc(tempering, temperature)
    # common random numbers across tempering settings: at tau = 1 every mode gives the same chain
    ens = sghmc.run_chain(splits.train, psi, shape, scfg, cfg.stage_rng("sample-posterior"),
                          seed=cfg.seed)
    ens.config_hash = cfg.digest()
    if write:
        os.makedirs(out_dir, exist_ok=True)
        sghmc.save_ensemble(ens, artifact(out_dir, "ensemble"), __version__)
    return ens


def run_fit_latent(cfg: ExperimentConfig, out_dir, ensemble_path=None, splits=None):
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    ens = _load_ensemble(ensemble_path or artifact(out_dir, "ensemble"), shape)
    z = latent_density.encode_latents(ens, splits.train, shape)
    seed = int(cfg.stage_rng("fit-latent").integers(2 ** 31))
    model = latent_density.fit_mixture(z, cfg["mixture.max_components"], seed,
                                       diagonal=cfg["mixture.diagonal"])
    latent_density.save_mixture(model, artifact(out_dir, "mixture"), cfg.digest(), __version__)
    return model


def run_generate(cfg: ExperimentConfig, out_dir, ensemble_path=None, mixture_path=None, count=None,
                 splits=None):
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    ens = _load_ensemble(ensemble_path or artifact(out_dir, "ensemble"), shape)
    model = latent_density.load_mixture(_require(mixture_path or artifact(out_dir, "mixture"), "mixture"))
    count = count or cfg["generate.count"]
    images, std = latent_density.generate(model, ens, shape, count, cfg.stage_rng("generate"))
    h, w, cols = splits.height, splits.width, cfg["generate.cols"]
    note = cfg.provenance()
    data_io.write_image_grid(images, h, w, cols, artifact(out_dir, "generated"), note)
    # a [0, 1] variable has standard deviation at most 1/2
    data_io.write_image_grid(2.0 * std, h, w, cols, artifact(out_dir, "generated_std"),
                             note + " scale=2*std")
    return images, std


def run_reconstruct(cfg: ExperimentConfig, out_dir, ensemble_path=None, splits=None):
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    ens = _load_ensemble(ensemble_path or artifact(out_dir, "ensemble"), shape)
    x = splits.test[: cfg["reconstruct.count"]]
    mean, std = metrics.reconstruct(ens, x, shape)
    per, _ = metrics.test_log_likelihood(ens, x, shape)
    h, w, cols = splits.height, splits.width, cfg["generate.cols"]
    note = cfg.provenance()
    data_io.write_image_grid(x, h, w, cols, artifact(out_dir, "recon_input"), note)
    data_io.write_image_grid(mean, h, w, cols, artifact(out_dir, "recon_mean"), note)
    data_io.write_image_grid(2.0 * std, h, w, cols, artifact(out_dir, "recon_std"), note + " scale=2*std")
    rows = [(i, per[i], float(std[i].mean())) for i in range(len(x))]
    _write_csv(artifact(out_dir, "recon_csv"), cfg, ["index", "log_likelihood", "mean_pixel_std"], rows,
               "log_likelihood=per-image pixel sum")
    return mean, std


def run_evaluate(cfg: ExperimentConfig, out_dir, ensemble_path=None, splits=None):
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    ens = _load_ensemble(ensemble_path or artifact(out_dir, "ensemble"), shape)
    per, mean = metrics.test_log_likelihood(ens, splits.test, shape)
    rows = [(i, v) for i, v in enumerate(per)] + [("mean", mean)]
    _write_csv(artifact(out_dir, "metrics"), cfg, ["index", "log_likelihood"], rows,
               "log_likelihood=per-image pixel sum")
    return per, mean


def run_temper_sweep(cfg: ExperimentConfig, out_dir, prior_path=None, temperatures=None, modes=None,
                     splits=None):
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    temperatures = temperatures or cfg["temper.values"]
    modes = modes or cfg["temper.modes"]
    rows = []
    for mode in modes:
        for tau in temperatures:
            ens = run_sample_posterior(cfg, out_dir, prior_path, splits, mode, float(tau), write=False)
            _, ll = metrics.test_log_likelihood(ens, splits.test, shape)
            var = metrics.mean_predictive_variance(ens, splits.test, shape)
            rows.append((float(tau), mode, ll, var))
            log.info("tau=%g mode=%s test_ll=%.6g var=%.6g", tau, mode, ll, var)
    _write_csv(artifact(out_dir, "temper"), cfg, ["tau", "mode", "test_ll", "mean_predictive_variance"],
               rows, "test_ll=per-image pixel sum")
    return rows


def run_subspace(cfg: ExperimentConfig, out_dir, prior_path=None, ensemble_paths=(), splits=None):
    """Project prior draws and posterior samples onto the trajectory's top-2 directions."""
    splits = splits or load_splits(cfg)
    shape = model_shape(cfg, splits.train.shape[1])
    psi = prior.load_prior(_require(prior_path or artifact(out_dir, "prior"), "prior"))
    paths = list(ensemble_paths) or [artifact(out_dir, "ensemble")]
    ensembles = [_load_ensemble(p, shape) for p in paths]
    rng = cfg.stage_rng("subspace")
    scfg = cfg.sghmc()
    x = splits.train
    n = x.shape[0]
    w0 = sghmc.warm_start(x, psi, shape, scfg, rng)
    batches = sghmc.minibatches(n, scfg.batch_size, rng)

    def grad_fn(w, _step):
        return sghmc.potential_grad(w, x[next(batches)], n, psi, shape)[1] / n

    mean, A = metrics.collect_trajectory(grad_fn, w0, cfg["subspace.lr"], cfg["subspace.steps"],
                                         cfg["subspace.update_freq"], cfg["subspace.max_cols"])
    if A.shape[1] < 2:
        raise ValueError("trajectory too short for a 2-D subspace; raise subspace.steps")
    proj = metrics.subspace_pca(A, 2, shift=mean)
    labels, vectors = [], []
    for _ in range(cfg["subspace.prior_draws"]):
        labels.append("prior")
        vectors.append(prior.sample_weights(psi, rng)[0])
    for k, ens in enumerate(ensembles):
        for w in ens.samples:
            labels.append("posterior" if len(ensembles) == 1 else f"posterior{k}")
            vectors.append(w)
    coords = proj.coordinates(np.array(vectors))
    rows = [(lab, c[0], c[1]) for lab, c in zip(labels, coords)]
    _write_csv(artifact(out_dir, "subspace"), cfg, ["label", "coord1", "coord2"], rows)
    return proj, labels, coords
