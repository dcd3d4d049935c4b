"""Command-line front end.

Every compute subcommand builds an in-memory run configuration (the same
sections as a config file, see :mod:`rdmhybrid.pipeline`) and executes the
matching single-stage pipeline; ``run`` executes a config file with its full
stage chain.  Solver, noise and tomography flags mirror the fields of
:class:`~rdmhybrid.acse.SolverConfig`, :class:`~rdmhybrid.tomography.NoiseModel`
and :class:`~rdmhybrid.tomography.TomographyPlan`.

Exit codes: 0 success, 2 configuration error, 3 stage failure,
4 non-convergence (artifacts are still written).
"""
from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, FcidumpError, StageError
from .integrals import _eightfold_error, parse_fcidump, save_fcidump
from .pipeline import (
    EXIT_CONFIG,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_STAGE,
    build_system,
    config_from_parser,
    load_config,
    run_pipeline,
)

__all__ = ["build_parser", "main"]

_SOLVER_FLAGS = (
    ("epsilon", float),
    ("max_iters", int),
    ("energy_tol", float),
    ("residual_tol", float),
    ("mode", str),
    ("step_control", str),
    ("min_epsilon", float),
    ("rdm_integrator", str),
    ("residual_guard", str),
)


def _add_common(parser):
    parser.add_argument("-o", "--output-dir", default="out", help="artifact directory (default: out)")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")


def _add_system(parser, required=True):
    group = parser.add_argument_group("system")
    source = group.add_mutually_exclusive_group(required=required)
    source.add_argument("--h-chain", type=int, metavar="N", help="linear H_N chain in STO-3G")
    source.add_argument("--geometry", help="geometry file (element x y z per line, bohr)")
    source.add_argument("--fcidump", help="FCIDUMP integral file")
    group.add_argument("--spacing", type=float, default=1.4, help="H-chain spacing in bohr (default: 1.4)")
    group.add_argument("--orbitals", choices=("hf", "lowdin"), default="hf")
    group.add_argument("--name", default="system", help="system label used in reports")


def _add_rdm_inputs(parser, state=False):
    group = parser.add_argument_group("inputs")
    group.add_argument("--rdm1", help="1-RDM file")
    group.add_argument("--rdm2", help="2-RDM file")
    if state:
        group.add_argument("--state", help="CI state file")


def _add_solver(parser):
    group = parser.add_argument_group("solver (SolverConfig fields)")
    for name, kind in _SOLVER_FLAGS:
        group.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)


def _add_noise(parser):
    group = parser.add_argument_group("noise and tomography (NoiseModel / TomographyPlan fields)")
    group.add_argument("--depolarizing-p", "--noise", dest="depolarizing_p", type=float, default=None,
                       help="depolarizing probability per propagation step")
    group.add_argument("--readout-flip", type=float, default=None, help="readout bit-flip probability")
    group.add_argument("--shots", default=None, help="shots per measurement setting, or 'exact'")


def build_parser():
    parser = argparse.ArgumentParser(prog="rdmhybrid", description="Hybrid 2-RDM electronic-structure pipeline")
    parser.add_argument("--version", action="version", version=f"rdmhybrid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fci", help="exact ground state, energy and RDMs")
    _add_common(p)
    _add_system(p)

    p = sub.add_parser("acse", help="ACSE solver (statevector or cumulant-rdm mode)")
    _add_common(p)
    _add_system(p)
    _add_rdm_inputs(p, state=True)
    _add_solver(p)

    p = sub.add_parser("qacse-sim", help="simulated device ACSE followed by 2-RDM tomography")
    _add_common(p)
    _add_system(p)
    p.add_argument("--state", help="seed CI state file")
    _add_solver(p)
    _add_noise(p)

    p = sub.add_parser("purify", help="project a 2-RDM onto the D, Q, G positivity conditions")
    _add_common(p)
    _add_system(p, required=False)
    _add_rdm_inputs(p)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--sz", type=float, default=None, help="target <S_z>")
    p.add_argument("--s2", type=float, default=None, help="target <S^2>")

    p = sub.add_parser("pdft", help="on-top pair-density functional energies")
    _add_common(p)
    _add_system(p)
    _add_rdm_inputs(p)
    p.add_argument("--grid", help="grid file (default: built-in molecular grid)")
    p.add_argument("--functionals", default=None, help="comma-separated, e.g. tPBE,tBLYP")
    for name, kind in (("n_radial", int), ("n_theta", int), ("n_phi", int), ("r_m", float)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)

    p = sub.add_parser("report", help="relative energies, deviations and MAE from an energy table")
    _add_common(p)
    p.add_argument("--energies", required=True, help="CSV with columns method,system,energy (Hartree)")
    p.add_argument("--reference", required=True, help="reference system label")
    p.add_argument("--baseline", default=None, help="method the others are compared against")
    p.add_argument("--experimental", default=None, help="system:value:half_width, ... (kcal/mol)")

    p = sub.add_parser("fcidump", help="generate or validate FCIDUMP files")
    fsub = p.add_subparsers(dest="fcidump_command", required=True)
    g = fsub.add_parser("gen", help="write the integrals of a system as FCIDUMP")
    _add_system(g)
    g.add_argument("output", help="FCIDUMP file to write")
    v = fsub.add_parser("validate", help="parse an FCIDUMP file and print its header")
    v.add_argument("path")

    p = sub.add_parser("run", help="execute a config file")
    p.add_argument("config", help="INI-style run configuration")
    return parser


def _system_section(args):
    section = {"orbitals": args.orbitals, "name": args.name}
    if args.h_chain is not None:
        section.update(h_chain=str(args.h_chain), spacing=repr(args.spacing))
    elif args.geometry is not None:
        section["geometry"] = args.geometry
    elif args.fcidump is not None:
        section["fcidump"] = args.fcidump
    return section


def _options(args, names):
    return {name: str(getattr(args, name)) for name in names if getattr(args, name, None) is not None}


def _parser_for(args):
    """Translate subcommand flags into the sections of a run configuration."""
    cp = configparser.ConfigParser()
    cp["run"] = {"stages": args.command, "output_dir": args.output_dir, "seed": str(args.seed)}
    if hasattr(args, "h_chain"):
        cp["system"] = _system_section(args)
    inputs = _options(args, ("rdm1", "rdm2", "state", "grid", "energies"))
    if inputs:
        cp["inputs"] = inputs
    solver = _options(args, [name for name, _ in _SOLVER_FLAGS])
    if args.command == "acse" and solver:
        cp["acse"] = solver
    if args.command == "qacse-sim":
        if solver:
            cp["qacse"] = solver
        noise = _options(args, ("depolarizing_p", "readout_flip"))
        if noise:
            cp["noise"] = noise
        if args.shots is not None:
            cp["tomography"] = {"shots": args.shots}
    if args.command == "purify":
        cp["purification"] = _options(args, ("tol", "max_iters", "sz", "s2"))
    if args.command == "pdft":
        cp["pdft"] = _options(args, ("functionals", "n_radial", "n_theta", "n_phi", "r_m"))
    if args.command == "report":
        cp["report"] = _options(args, ("reference", "baseline", "experimental"))
    return cp


def _fcidump(args):
    if args.fcidump_command == "gen":
        cp = configparser.ConfigParser()
        cp["run"] = {"stages": "fci"}
        cp["system"] = _system_section(args)
        config = config_from_parser(cp)
        try:
            integrals, _ = build_system(config.system)
        except (ValueError, OSError) as exc:
            raise StageError("fcidump", str(exc)) from None
        save_fcidump(args.output, integrals)
        print(f"wrote {args.output}: NORB={integrals.n_spatial} NELEC={integrals.n_electrons}")
        return EXIT_OK
    try:
        with open(args.path) as handle:
            integrals = parse_fcidump(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.path}: {exc}") from None
    except FcidumpError as exc:
        print(f"invalid FCIDUMP {args.path}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(f"NORB = {integrals.n_spatial}")
    print(f"NELEC = {integrals.n_electrons}")
    print(f"MS2 = {integrals.n_alpha - integrals.n_beta}")
    print(f"core_energy = {integrals.core_energy!r}")
    print(f"eightfold_symmetry_error = {float(_eightfold_error(integrals.two_body))!r}")
    return EXIT_OK


def _summarize(config, ctx):
    for stage, label, energy in ctx.summary:
        line = f"{stage:10s} {label:10s} E = {energy:.10f}"
        if ctx.fci_energy is not None and label != "fci":
            line += f"  error vs FCI = {energy - ctx.fci_energy:+.3e}"
        print(line)
    if ctx.not_converged:
        print(f"not converged: {', '.join(ctx.not_converged)}", file=sys.stderr)
    print(f"artifacts in {Path(config.output_dir)}")


def main(argv=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fcidump":
            return _fcidump(args)
        if args.command == "run":
            config = load_config(args.config)
        else:
            config = config_from_parser(_parser_for(args))
        code, ctx = run_pipeline(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    _summarize(config, ctx)
    return EXIT_NOT_CONVERGED if code == EXIT_NOT_CONVERGED else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
