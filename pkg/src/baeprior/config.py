"""Experiment configuration: one ``key = value`` assignment per line.

Keys are dotted paths (``sghmc.step_size``); ``#`` starts a comment.  Every
key has a typed default, unknown keys are rejected, and the canonical form of
the resolved settings is hashed so each artifact can record what made it.
The seed is mandatory: there is no wall-clock seeding anywhere.
"""
from __future__ import annotations

import hashlib

import numpy as np

from . import __version__
from .ot_sliced import DswdConfig
from .prior import PriorOptConfig
from .sghmc import SghmcConfig


class ConfigError(ValueError):
    pass


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _words(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default); defaults are the literal text a user would write
SCHEMA = {
    "seed": (int, None),
    "out_dir": (str, "out"),
    "data.source": (str, "idx"),
    "data.images": (str, ""),
    "data.labels": (str, ""),
    "data.seed": (int, None),
    "data.train_digits": (_ints, "1,2,3,4,5,6,7,8,9"),
    "data.prior_digits": (_ints, "0"),
    "data.train_size": (int, "200"),
    "data.prior_size": (int, "100"),
    "data.test_size": (int, "1000"),
    "data.synthetic_dim": (int, "16"),
    "data.synthetic_latent": (int, "2"),
    "model.hidden": (_ints, "256"),
    "model.latent": (int, "50"),
    "prior.kind": (str, "optimized"),
    "prior.granularity": (str, "layer"),
    "prior.batch_size": (int, "64"),
    "prior.samples": (int, "32"),
    "prior.steps": (int, "1000"),
    "prior.lr": (float, "1e-3"),
    "dswd.projections": (int, "1000"),
    "dswd.lambda_c": (float, "100"),
    "dswd.inner_epochs": (int, "30"),
    "dswd.inner_lr": (float, "5e-4"),
    "sghmc.step_size": (float, "0.003"),
    "sghmc.momentum": (float, "0.05"),
    "sghmc.batch_size": (int, "64"),
    "sghmc.burn_in": (int, "6000"),
    "sghmc.n_samples": (int, "32"),
    "sghmc.thinning": (int, "1000"),
    "sghmc.temperature": (float, "1"),
    "sghmc.tempering": (str, "none"),
    "sghmc.warm_start_steps": (int, "1000"),
    "sghmc.warm_start_lr": (float, "1e-3"),
    "sghmc.window_offset": (float, "1"),
    "mixture.max_components": (int, "10"),
    "mixture.diagonal": (_bool, "true"),
    "generate.count": (int, "64"),
    "generate.cols": (int, "8"),
    "reconstruct.count": (int, "16"),
    "temper.values": (_floats, "1e-5,1e-3,0.1,1,5,10"),
    "temper.modes": (_words, "partial,full"),
    "subspace.lr": (float, "1e-4"),
    "subspace.steps": (int, "2000"),
    "subspace.update_freq": (int, "10"),
    "subspace.max_cols": (int, "100"),
    "subspace.prior_draws": (int, "64"),
}


def parse_text(text):
    """Raw ``{key: value_text}`` from config file contents."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


class ExperimentConfig:
    """Resolved, typed settings plus the raw text used for hashing."""

    def __init__(self, raw: dict, seed_override=None):
        raw = dict(raw)
        if seed_override is not None:
            raw["seed"] = str(int(seed_override))
        if "seed" not in raw:
            raise ConfigError("'seed' is required (set it in the config or pass --seed)")
        self.raw = {}
        self.values = {}
        for key, (parse, default) in SCHEMA.items():
            text = raw.get(key, default)
            if text is None:
                if key == "data.seed":
                    text = raw["seed"]
                else:
                    raise ConfigError(f"missing required key {key!r}")
            try:
                self.values[key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
            self.raw[key] = str(text)
        self._validate()

    @classmethod
    def load(cls, path, seed_override=None):
        try:
            with open(path) as fh:
                text = fh.read()
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        return cls(parse_text(text), seed_override)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def canonical(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def provenance(self) -> str:
        return f"config_hash={self.digest()} tool_version={__version__}"

    def _validate(self):
        v = self.values
        if v["data.source"] not in ("idx", "synthetic"):
            raise ConfigError("data.source must be 'idx' or 'synthetic'")
        if v["data.source"] == "idx" and not v["data.images"]:
            raise ConfigError("data.images is required for idx data")
        if v["prior.kind"] not in ("optimized", "standard"):
            raise ConfigError("prior.kind must be 'optimized' or 'standard'")
        if v["prior.granularity"] not in ("layer", "parameter"):
            raise ConfigError("prior.granularity must be 'layer' or 'parameter'")
        for mode in v["temper.modes"]:
            if mode not in ("none", "partial", "full"):
                raise ConfigError(f"unknown tempering mode {mode!r}")
        try:
            self.sghmc()
            self.prior_opt()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def stage_rng(self, stage: str):
        """Independent generator per stage, derived from the seed only."""
        key = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "little")
        return np.random.default_rng(np.random.SeedSequence([self.seed, key]))

    def dswd(self) -> DswdConfig:
        v = self.values
        return DswdConfig(v["dswd.projections"], v["dswd.lambda_c"], v["dswd.inner_epochs"],
                          v["dswd.inner_lr"])

    def prior_opt(self) -> PriorOptConfig:
        v = self.values
        return PriorOptConfig(batch_size=v["prior.batch_size"], prior_samples=v["prior.samples"],
                              outer_steps=v["prior.steps"], outer_lr=v["prior.lr"],
                              dswd=self.dswd(), seed=self.seed)

    def sghmc(self, tempering=None, temperature=None) -> SghmcConfig:
        v = self.values
        return SghmcConfig(
            step_size=v["sghmc.step_size"], momentum=v["sghmc.momentum"],
            batch_size=v["sghmc.batch_size"], burn_in_steps=v["sghmc.burn_in"],
            n_samples=v["sghmc.n_samples"], thinning=v["sghmc.thinning"],
            temperature=v["sghmc.temperature"] if temperature is None else temperature,
            tempering=v["sghmc.tempering"] if tempering is None else tempering,
            warm_start_steps=v["sghmc.warm_start_steps"], warm_start_lr=v["sghmc.warm_start_lr"],
            window_offset=v["sghmc.window_offset"],
        )
