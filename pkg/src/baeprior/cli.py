"""Command-line entry point: ``baeprior <subcommand> --config PATH [...]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error (including a missing upstream checkpoint), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, data_io, pipeline
from .config import ConfigError, ExperimentConfig
from .likelihood import DomainError
from .prior import DivergenceError
from .sghmc import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser():
    p = _Parser(prog="baeprior", description="Bayesian autoencoders with optimized priors.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def stage(name, help_text):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True, help="key = value experiment config")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--out", help="output directory (default: out_dir from the config)")
        s.add_argument("-v", "--verbose", action="store_true")
        return s

    stage("optimize-prior", "fit prior hyper-parameters to the prior-optimization set")
    s = stage("sample-posterior", "run SGHMC and write the posterior ensemble")
    s.add_argument("--prior", help="prior checkpoint")
    s = stage("fit-latent", "fit the latent mixture on posterior-mean codes")
    s.add_argument("--ensemble")
    s = stage("generate", "sample new images through the ensemble decoders")
    s.add_argument("--ensemble")
    s.add_argument("--mixture")
    s.add_argument("--count", type=int)
    s = stage("reconstruct", "reconstruct test images with per-pixel uncertainty")
    s.add_argument("--ensemble")
    s = stage("evaluate", "test log-likelihood of the ensemble")
    s.add_argument("--ensemble")
    s = stage("temper-sweep", "test log-likelihood and predictive variance across temperatures")
    s.add_argument("--prior")
    s.add_argument("--temperatures", type=_floats, help="comma-separated list")
    s.add_argument("--mode", choices=("none", "partial", "full"), action="append",
                   help="repeatable; default from the config")
    s = stage("subspace", "project prior and posterior samples onto the SGD-trajectory plane")
    s.add_argument("--prior")
    s.add_argument("--ensemble", action="append", default=[], help="repeatable")
    return p


def _dispatch(args, cfg, out):
    cmd = args.command
    if cmd == "optimize-prior":
        _, trace = pipeline.run_optimize_prior(cfg, out)
        if trace:
            print(f"dswd first={trace[0]:.6g} last={trace[-1]:.6g} steps={len(trace)}")
    elif cmd == "sample-posterior":
        ens = pipeline.run_sample_posterior(cfg, out, args.prior)
        print(f"ensemble of {len(ens)} samples")
    elif cmd == "fit-latent":
        model = pipeline.run_fit_latent(cfg, out, args.ensemble)
        print(f"mixture with {model.n_components} components")
    elif cmd == "generate":
        pipeline.run_generate(cfg, out, args.ensemble, args.mixture, args.count)
    elif cmd == "reconstruct":
        pipeline.run_reconstruct(cfg, out, args.ensemble)
    elif cmd == "evaluate":
        _, mean = pipeline.run_evaluate(cfg, out, args.ensemble)
        print(f"mean test log-likelihood {mean:.6f}")
    elif cmd == "temper-sweep":
        for tau, mode, ll, var in pipeline.run_temper_sweep(cfg, out, args.prior, args.temperatures,
                                                            args.mode):
            print(f"tau={tau:g} mode={mode} test_ll={ll:.6f} var={var:.6g}")
    elif cmd == "subspace":
        pipeline.run_subspace(cfg, out, args.prior, args.ensemble)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"baeprior: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.seed)
        out = args.out or cfg["out_dir"]
        _dispatch(args, cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"baeprior: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, DivergenceError, FloatingPointError, DomainError) as exc:
        print(f"baeprior: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, data_io.FormatError, ValueError) as exc:
        print(f"baeprior: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
