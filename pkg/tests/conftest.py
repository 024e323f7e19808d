import os

import numpy as np
import pytest

from baeprior import tensor_nn

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MNIST_IMAGES = os.path.join(ROOT, "data", "mnist5k-images-idx3-ubyte.gz")
MNIST_LABELS = os.path.join(ROOT, "data", "mnist5k-labels-idx1-ubyte.gz")

TINY_CONFIG = {
    "seed": "3",
    "data.source": "synthetic",
    "data.prior_size": "32",
    "data.train_size": "32",
    "data.test_size": "16",
    "model.hidden": "8",
    "model.latent": "2",
    "prior.batch_size": "16",
    "prior.samples": "2",
    "prior.steps": "5",
    "prior.lr": "1e-2",
    "dswd.projections": "10",
    "dswd.inner_epochs": "2",
    "sghmc.batch_size": "16",
    "sghmc.burn_in": "20",
    "sghmc.n_samples": "4",
    "sghmc.thinning": "5",
    "sghmc.warm_start_steps": "10",
    "sghmc.warm_start_lr": "1e-2",
    "mixture.max_components": "3",
    "generate.count": "4",
    "generate.cols": "2",
    "reconstruct.count": "4",
    "temper.values": "0.5,1",
    "subspace.steps": "40",
    "subspace.update_freq": "2",
    "subspace.max_cols": "10",
    "subspace.prior_draws": "4",
}


def write_config(directory, **overrides):
    """Tiny synthetic experiment config; keyword ``a__b`` sets key ``a.b``; ``None`` drops a key."""
    values = dict(TINY_CONFIG)
    values["out_dir"] = str(directory / "out")
    for key, val in overrides.items():
        key = key.replace("__", ".")
        if val is None:
            values.pop(key, None)
        else:
            values[key] = str(val)
    path = directory / "exp.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_shape():
    return tensor_nn.MlpShape.autoencoder(6, 2, hidden=(4,))


@pytest.fixture
def acceptance_report():
    def report(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"\ncriterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
