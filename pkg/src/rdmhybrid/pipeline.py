"""Stage chaining, run configuration and artifact writing.

A run is described by an INI-style file (``configparser``) with these
sections (all optional except ``[run]`` and ``[system]``)::

    [run]
    stages = fci, qacse-sim, purify, acse, pdft, report
    output_dir = out          # relative paths resolve against the config file
    seed = 0

    [system]
    h_chain = 2               # or: geometry = h2.geom  /  fcidump = h2.fcidump
    spacing = 1.4
    orbitals = hf             # hf (canonical RHF orbitals) or lowdin
    name = h2

    [inputs]                  # seeds for stages run in isolation
    rdm1 = ...  rdm2 = ...  state = ...  grid = ...  energies = ...

    [acse]                    # SolverConfig fields
    [qacse]                   # SolverConfig fields for the simulated device run
    [noise]                   # depolarizing_p, readout_flip
    [tomography]              # shots = 1000 | exact
    [purification]            # enabled, tol, max_iters, sz, s2
    [pdft]                    # functionals, n_radial, n_theta, n_phi, r_m
    [report]                  # reference, baseline, experimental = m:15.3:4.31, ...

Every artifact except the standard-format ``integrals.fcidump`` starts with
``# key = value`` provenance lines (tool version, config hash, seed, stage);
no timestamps are written, so an identical config and seed reproduce every
file byte for byte.  ``summary.csv`` lists each stage's energy and, when the
``fci`` stage ran, its error against the exact energy.  Every stage that
produces RDMs also writes ``<label>_non.csv`` with the natural occupation
numbers of its 1-RDM (descending) and the HONO/LUNO pair.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .acse import SolverConfig, solve_acse
from .errors import ConfigError, RdmHybridError, StageError
from .fci import CiState, DeterminantBasis, ground_state, measure_rdms, read_state, write_state
from .grid import orbital_grid, read_grid
from .integrals import (
    build_h_system,
    h_chain,
    hartree_fock,
    load_fcidump,
    parse_geometry,
    save_fcidump,
)
from .pdft import ON_TOP_FUNCTIONALS, mcpdft_energy
from .purification import purify
from .rdm import contract_2to1, natural_occupations, rdm_energy, read_rdm, write_rdm
from .report import compute_report
from .tomography import NoiseModel, TomographyPlan, prepare_qacse_state, tomograph_rdm2

__all__ = [
    "STAGES",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_STAGE",
    "EXIT_NOT_CONVERGED",
    "RunConfig",
    "load_config",
    "config_from_parser",
    "run_pipeline",
    "build_system",
]

STAGES = ("fci", "qacse-sim", "purify", "acse", "pdft", "report")
EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_NOT_CONVERGED = 0, 2, 3, 4

_SOLVER_FIELDS = {f.name: f.type for f in fields(SolverConfig)}
_PIPELINE_QACSE_DEFAULTS = {"max_iters": "20"}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; build with :func:`load_config`."""

    stages: tuple
    output_dir: Path
    seed: int
    system: dict
    inputs: dict
    acse: SolverConfig
    qacse: SolverConfig
    noise: NoiseModel
    shots: Optional[int]
    purification: dict
    pdft: dict
    report: dict
    config_hash: str
    base_dir: Path = field(default=Path("."))


def _bool(text, where):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {text!r}")


def _number(text, kind, where):
    try:
        return kind(str(text).strip())
    except ValueError:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {text!r}") from None


def _solver_config(section, name, defaults=None):
    values = dict(defaults or {})
    values.update(section)
    kwargs = {}
    for key, text in values.items():
        if key not in _SOLVER_FIELDS:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        where = f"[{name}] {key}"
        if key in ("epsilon", "energy_tol", "residual_tol", "min_epsilon"):
            kwargs[key] = _number(text, float, where)
        elif key == "max_iters":
            kwargs[key] = _number(text, int, where)
        elif key == "residual_guard":
            kwargs[key] = None if str(text).strip().lower() in ("auto", "none", "") else _bool(text, where)
        else:
            kwargs[key] = str(text).strip()
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def _canonical_text(parser):
    out = io.StringIO()
    for section in sorted(parser.sections()):
        out.write(f"[{section}]\n")
        for key in sorted(parser[section]):
            if section == "run" and key == "output_dir":
                continue
            out.write(f"{key}={parser[section][key].strip()}\n")
    return out.getvalue()


def _parse_experimental(text):
    result = {}
    for item in filter(None, (t.strip() for t in str(text).split(","))):
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"[report] experimental entry {item!r} is not system:value:half_width")
        result[parts[0]] = (_number(parts[1], float, "[report] experimental"),
                            _number(parts[2], float, "[report] experimental"))
    return result


def config_from_parser(parser, base_dir="."):
    """Validate a :class:`configparser.ConfigParser` into a :class:`RunConfig`."""
    base_dir = Path(base_dir)
    known = {"run", "system", "inputs", "acse", "qacse", "noise", "tomography", "purification", "pdft", "report"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    if not parser.has_section("run"):
        raise ConfigError("config needs a [run] section")
    run = parser["run"]
    stages = tuple(s.strip() for s in run.get("stages", "").split(",") if s.strip())
    if not stages:
        raise ConfigError("[run] stages is empty")
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; choose from {list(STAGES)}")
    seed = _number(run.get("seed", "0"), int, "[run] seed")
    if seed < 0:
        raise ConfigError("[run] seed must be non-negative")
    output_dir = base_dir / run.get("output_dir", "out")

    system = dict(parser["system"]) if parser.has_section("system") else {}
    inputs = {k: base_dir / v for k, v in (parser["inputs"].items() if parser.has_section("inputs") else [])}
    for key in ("fcidump", "geometry"):
        if key in system:
            system[key] = base_dir / system[key]
    sources = [k for k in ("fcidump", "geometry", "h_chain") if k in system]
    needs_system = any(s in stages for s in ("fci", "qacse-sim", "acse", "pdft"))
    if needs_system and len(sources) != 1:
        raise ConfigError("[system] needs exactly one of fcidump, geometry, h_chain")
    if "h_chain" in system:
        n_atoms = _number(system["h_chain"], int, "[system] h_chain")
        spacing = _number(system.get("spacing", "1.4"), float, "[system] spacing")
        if n_atoms < 1 or spacing <= 0:
            raise ConfigError("[system] h_chain needs >= 1 atom and a positive spacing")
        system["h_chain"], system["spacing"] = n_atoms, spacing
    system.setdefault("orbitals", "hf")
    if system["orbitals"] not in ("hf", "lowdin"):
        raise ConfigError("[system] orbitals must be 'hf' or 'lowdin'")
    system.setdefault("name", "system")
    for key, path in list(inputs.items()) + [(k, system[k]) for k in ("fcidump", "geometry") if k in system]:
        if not Path(path).is_file():
            raise ConfigError(f"input file {key} = {path} does not exist")

    acse = _solver_config(parser["acse"] if parser.has_section("acse") else {}, "acse")
    qacse = _solver_config(
        parser["qacse"] if parser.has_section("qacse") else {}, "qacse", _PIPELINE_QACSE_DEFAULTS
    )
    noise_sec = parser["noise"] if parser.has_section("noise") else {}
    for key in noise_sec:
        if key not in ("depolarizing_p", "readout_flip"):
            raise ConfigError(f"[noise] unknown key {key!r}")
    try:
        noise = NoiseModel(
            depolarizing_p=_number(noise_sec.get("depolarizing_p", "0"), float, "[noise] depolarizing_p"),
            readout_flip=_number(noise_sec.get("readout_flip", "0"), float, "[noise] readout_flip"),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"[noise] {exc}") from None
    tomo = parser["tomography"] if parser.has_section("tomography") else {}
    shots_text = str(tomo.get("shots", "exact")).strip().lower()
    shots = None if shots_text == "exact" else _number(shots_text, int, "[tomography] shots")
    if shots is not None and shots <= 0:
        raise ConfigError("[tomography] shots must be positive or 'exact'")

    pur = parser["purification"] if parser.has_section("purification") else {}
    purification = {
        "enabled": _bool(pur.get("enabled", "true"), "[purification] enabled"),
        "tol": _number(pur.get("tol", "1e-8"), float, "[purification] tol"),
        "max_iters": _number(pur.get("max_iters", "500"), int, "[purification] max_iters"),
        "spin_targets": {
            k: _number(pur[k], float, f"[purification] {k}") for k in ("sz", "s2") if k in pur
        } or None,
    }
    if purification["tol"] <= 0 or purification["max_iters"] < 1:
        raise ConfigError("[purification] tol must be positive and max_iters >= 1")

    pd = parser["pdft"] if parser.has_section("pdft") else {}
    functionals = tuple(f.strip() for f in pd.get("functionals", "tPBE").split(",") if f.strip())
    bad = [f for f in functionals if f not in ON_TOP_FUNCTIONALS]
    if bad:
        raise ConfigError(f"[pdft] unknown functionals {bad}; choose from {sorted(ON_TOP_FUNCTIONALS)}")
    pdft = {
        "functionals": functionals,
        "n_radial": _number(pd.get("n_radial", "60"), int, "[pdft] n_radial"),
        "n_theta": _number(pd.get("n_theta", "18"), int, "[pdft] n_theta"),
        "n_phi": _number(pd.get("n_phi", "36"), int, "[pdft] n_phi"),
        "r_m": _number(pd.get("r_m", "1.0"), float, "[pdft] r_m"),
    }
    if min(pdft["n_radial"], pdft["n_theta"], pdft["n_phi"]) < 1 or pdft["r_m"] <= 0:
        raise ConfigError("[pdft] grid sizes must be positive")
    if "pdft" in stages and "grid" not in inputs and "fcidump" in system:
        raise ConfigError("pdft on FCIDUMP integrals needs [inputs] grid (orbitals are unknown)")

    rep = parser["report"] if parser.has_section("report") else {}
    report = {
        "reference": rep.get("reference", "").strip() or None,
        "baseline": rep.get("baseline", "").strip() or None,
        "experimental": _parse_experimental(rep.get("experimental", "")),
    }
    if "report" in stages and "energies" in inputs and report["reference"] is None:
        raise ConfigError("[report] reference is required with an energies table")

    digest = hashlib.sha256(_canonical_text(parser).encode()).hexdigest()[:16]
    return RunConfig(stages, output_dir, seed, system, inputs, acse, qacse, noise, shots,
                     purification, pdft, report, digest, base_dir)


def load_config(path):
    """Read and validate a config file (relative paths resolve against its folder)."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_parser(parser, path.parent)


# ---------------------------------------------------------------------------
# artifacts


class _Artifacts:
    def __init__(self, config):
        self.config = config
        self.root = Path(config.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.written = []

    def provenance(self, stage):
        return {
            "config_hash": self.config.config_hash,
            "seed": self.config.seed,
            "stage": stage,
            "tool": f"rdmhybrid {__version__}",
        }

    def header(self, stage):
        prov = self.provenance(stage)
        return "".join(f"# {k} = {prov[k]}\n" for k in sorted(prov))

    def path(self, name):
        path = self.root / name
        self.written.append(path)
        return path

    def text(self, name, stage, body):
        with open(self.path(name), "w", newline="") as handle:
            handle.write(self.header(stage))
            handle.write(body)

    def keyvals(self, name, stage, values):
        self.text(name, stage, "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items()))

    def rdm(self, name, stage, data, n_electrons):
        with open(self.path(name), "w", newline="") as handle:
            write_rdm(handle, data, n_electrons, self.provenance(stage))

    def state(self, name, stage, state):
        with open(self.path(name), "w", newline="") as handle:
            write_state(handle, state, self.provenance(stage))


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# ---------------------------------------------------------------------------
# stages


def build_system(system):
    """``(IntegralSet, Geometry or None)`` for a validated ``[system]`` dict."""
    geometry = None
    if "fcidump" in system:
        integrals = load_fcidump(system["fcidump"])
    else:
        if "geometry" in system:
            with open(system["geometry"]) as handle:
                geometry = parse_geometry(handle.read())
        else:
            geometry = h_chain(system["h_chain"], system["spacing"])
        integrals = build_h_system(geometry)
        if system.get("orbitals", "hf") == "hf":
            integrals = hartree_fock(integrals).integrals
    return integrals, geometry


@dataclass
class _Context:
    integrals: object = None
    geometry: object = None
    rdms: Optional[tuple] = None  # (d1, d2, label)
    state: Optional[CiState] = None  # latest pure state, if any
    fci_energy: Optional[float] = None
    summary: list = field(default_factory=list)  # (stage, label, energy)
    not_converged: list = field(default_factory=list)


def _n_electrons(ctx):
    return ctx.integrals.n_electrons


def _record(ctx, stage, label, energy):
    ctx.summary.append((stage, label, float(energy)))


def _stage_fci(cfg, ctx, out):
    energy, state = ground_state(ctx.integrals)
    d1, d2 = measure_rdms(state)
    ctx.fci_energy = energy
    ctx.state = state
    ctx.rdms = (d1, d2, "fci")
    out.keyvals("fci_energy.txt", "fci", {"energy": energy, "determinants": state.basis.size})
    out.state("fci_state.txt", "fci", state)
    out.rdm("fci_rdm1.txt", "fci", d1, _n_electrons(ctx))
    out.rdm("fci_rdm2.txt", "fci", d2, _n_electrons(ctx))
    _record(ctx, "fci", "fci", energy)


def _stage_qacse(cfg, ctx, out):
    seed_state = _input_state(cfg)
    result = prepare_qacse_state(ctx.integrals, cfg.qacse, cfg.noise, seed_state)
    plan = TomographyPlan.build(ctx.integrals.n_spin_orbitals, cfg.shots)
    d2 = tomograph_rdm2(result.density, plan, cfg.noise)
    n = _n_electrons(ctx)
    d1 = contract_2to1(d2, n)
    energy = rdm_energy(ctx.integrals, d1, d2)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", "energy", "residual_norm", "epsilon"])
    for r in result.records:
        writer.writerow([r.iter, repr(r.energy), repr(r.residual_norm), repr(r.epsilon)])
    out.text("qacse_trace.csv", "qacse-sim", buf.getvalue())
    out.rdm("qacse_rdm1.txt", "qacse-sim", d1, n)
    out.rdm("qacse_rdm2.txt", "qacse-sim", d2, n)
    out.keyvals("qacse_energy.txt", "qacse-sim", {
        "device_energy": result.energy,
        "tomography_energy": energy,
        "stop_reason": result.reason,
        "settings": plan.n_settings,
        "shots_per_setting": "exact" if cfg.shots is None else cfg.shots,
    })
    ctx.rdms = (d1, d2, "qacse")
    weights, vectors = result.density.ensemble(cutoff=1e-14)
    ctx.state = CiState.normalized(result.density.basis, vectors[0]) if len(weights) == 1 else None
    if ctx.state is not None:
        out.state("qacse_state.txt", "qacse-sim", ctx.state)
    _record(ctx, "qacse-sim", "qacse", energy)


def _input_rdms(cfg, ctx):
    if ctx.rdms is not None:
        return ctx.rdms
    if "rdm2" in cfg.inputs:
        with open(cfg.inputs["rdm2"]) as handle:
            d2, n, _ = read_rdm(handle)
        if "rdm1" in cfg.inputs:
            with open(cfg.inputs["rdm1"]) as handle:
                d1, _, _ = read_rdm(handle)
        else:
            d1 = contract_2to1(d2, n)
        return d1, d2, "input"
    return None


def _input_state(cfg):
    if "state" in cfg.inputs:
        with open(cfg.inputs["state"]) as handle:
            return read_state(handle)
    return None


def _stage_purify(cfg, ctx, out):
    current = _input_rdms(cfg, ctx)
    if current is None:
        raise StageError("purify", "no 2-RDM to purify (run qacse-sim first or give [inputs] rdm2)")
    d1, d2, label = current
    n = int(round(np.sqrt(0.25 + np.einsum("ijij->", d2)) + 0.5)) if ctx.integrals is None else _n_electrons(ctx)
    p = cfg.purification
    if not p["enabled"]:
        out.keyvals("purify_report.txt", "purify", {"enabled": "false"})
        return
    purified, report = purify(d2, n, tol=p["tol"], max_iters=p["max_iters"], spin_targets=p["spin_targets"])
    d1p = contract_2to1(purified, n)
    out.rdm("purified_rdm1.txt", "purify", d1p, n)
    out.rdm("purified_rdm2.txt", "purify", purified, n)
    out.text("purify_report.txt", "purify", report.as_text())
    out.text("purify_report.csv", "purify", report.as_csv())
    if not report.converged:
        ctx.not_converged.append("purify")
    ctx.rdms = (d1p, purified, "purified")
    ctx.state = None
    if ctx.integrals is not None:
        _record(ctx, "purify", "purified", rdm_energy(ctx.integrals, d1p, purified))


def _stage_acse(cfg, ctx, out):
    config = cfg.acse
    if config.mode == "statevector":
        seed = ctx.state if ctx.state is not None else _input_state(cfg)
        if seed is not None and ctx.rdms is not None and ctx.rdms[2] not in ("fci", "qacse"):
            raise StageError("acse", "statevector mode cannot start from processed RDMs; use mode = cumulant-rdm")
    else:
        current = _input_rdms(cfg, ctx)
        seed = None if current is None else (current[0], current[1])
    trace = solve_acse(ctx.integrals, seed, config)
    n = _n_electrons(ctx)
    buf = io.StringIO()
    trace.write_csv(buf)
    out.text("acse_trace.csv", "acse", buf.getvalue())
    out.rdm("acse_rdm1.txt", "acse", trace.d1, n)
    out.rdm("acse_rdm2.txt", "acse", trace.d2, n)
    out.keyvals("acse_energy.txt", "acse", {
        "energy": trace.energy,
        "seed_energy": trace.seed_energy,
        "iterations": trace.iterations,
        "stop_reason": trace.reason,
        "mode": config.mode,
    })
    if trace.reason == "max_iters":
        ctx.not_converged.append("acse")
    ctx.rdms = (trace.d1, trace.d2, "acse")
    ctx.state = trace.state
    _record(ctx, "acse", "acse", trace.energy)


def _stage_pdft(cfg, ctx, out):
    current = _input_rdms(cfg, ctx)
    if current is None:
        basis = DeterminantBasis.build(ctx.integrals.n_spatial, ctx.integrals.n_alpha, ctx.integrals.n_beta)
        d1, d2 = measure_rdms(CiState.aufbau(basis))
    else:
        d1, d2, _ = current
    if "grid" in cfg.inputs:
        with open(cfg.inputs["grid"]) as handle:
            grid = read_grid(handle)
    else:
        if ctx.integrals.ao_coefficients is None or ctx.geometry is None:
            raise StageError("pdft", "no orbital information for the grid")
        p = cfg.pdft
        grid = orbital_grid(ctx.geometry, ctx.integrals.ao_coefficients, p["n_radial"], p["n_theta"], p["n_phi"], p["r_m"])
    rows = []
    for name in cfg.pdft["functionals"]:
        result = mcpdft_energy(ctx.integrals, d1, d2, grid, name)
        rows.append(result.as_dict())
        _record(ctx, "pdft", name, result.e_total)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(rows[0]))
    for row in rows:
        writer.writerow([_fmt(v) for v in row.values()])
    out.text("pdft.csv", "pdft", buf.getvalue())


def _read_energies(path):
    energies = {}
    with open(path, newline="") as handle:
        rows = [r for r in csv.reader(line for line in handle if not line.startswith("#")) if r]
    if not rows or [c.strip() for c in rows[0][:3]] != ["method", "system", "energy"]:
        raise StageError("report", f"{path}: expected a 'method,system,energy' header")
    for row in rows[1:]:
        if len(row) < 3:
            raise StageError("report", f"{path}: malformed row {row}")
        energies.setdefault(row[0].strip(), {})[row[1].strip()] = float(row[2])
    return energies


def _stage_report(cfg, ctx, out):
    rep = cfg.report
    if "energies" in cfg.inputs:
        energies = _read_energies(cfg.inputs["energies"])
        reference = rep["reference"]
    else:
        if not ctx.summary:
            raise StageError("report", "nothing to report (no energies table and no earlier stages)")
        system = cfg.system.get("name", "system")
        energies = {label: {system: e} for _, label, e in ctx.summary}
        reference = rep["reference"] or system
    baseline = rep["baseline"]
    if baseline is None and "energies" not in cfg.inputs and "fci" in energies:
        baseline = "fci"
    try:
        report = compute_report(energies, reference, rep["experimental"] or None, baseline)
    except (KeyError, ValueError) as exc:
        raise StageError("report", str(exc)) from None
    out.text("report.csv", "report", report.as_csv())
    out.text("report.txt", "report", report.as_text())


_RUNNERS = {
    "fci": _stage_fci,
    "qacse-sim": _stage_qacse,
    "purify": _stage_purify,
    "acse": _stage_acse,
    "pdft": _stage_pdft,
    "report": _stage_report,
}


def _write_occupations(ctx, out, stage):
    """Natural-occupation table (NON, HONO, LUNO) of the stage's RDMs."""
    d1, _, label = ctx.rdms
    occ = natural_occupations(d1, int(round(np.trace(d1))), tol=1e-6)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["orbital", "occupation"])
    for k, value in enumerate(occ.values):
        writer.writerow([k + 1, repr(float(value))])
    writer.writerow(["hono", repr(occ.hono)])
    writer.writerow(["luno", repr(occ.luno)])
    out.text(f"{label}_non.csv", stage, buf.getvalue())


def _write_summary(cfg, ctx, out):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "label", "energy", "error_vs_fci"])
    for stage, label, energy in ctx.summary:
        err = "" if ctx.fci_energy is None else repr(energy - ctx.fci_energy)
        writer.writerow([stage, label, repr(energy), err])
    out.text("summary.csv", "summary", buf.getvalue())


def run_pipeline(config):
    """Execute ``config.stages`` in order; returns ``(exit_code, context)``.

    Stage failures raise :class:`StageError` naming the stage, after the
    artifacts of earlier stages (and the summary so far) have been written.
    """
    out = _Artifacts(config)
    ctx = _Context()
    has_source = any(k in config.system for k in ("fcidump", "geometry", "h_chain"))
    if has_source or any(s in config.stages for s in ("fci", "qacse-sim", "acse", "pdft")):
        try:
            ctx.integrals, ctx.geometry = build_system(config.system)
        except (RdmHybridError, ValueError, OSError) as exc:
            raise StageError("system", str(exc)) from None
        # standard FCIDUMP (no comment header: readers expect '&FCI' first)
        save_fcidump(out.path("integrals.fcidump"), ctx.integrals)
    for stage in config.stages:
        try:
            before = ctx.rdms
            _RUNNERS[stage](config, ctx, out)
            if ctx.rdms is not None and ctx.rdms is not before:
                _write_occupations(ctx, out, stage)
        except StageError:
            _write_summary(config, ctx, out)
            raise
        except (RdmHybridError, ValueError, ArithmeticError, OSError) as exc:
            _write_summary(config, ctx, out)
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    _write_summary(config, ctx, out)
    return (EXIT_NOT_CONVERGED if ctx.not_converged else EXIT_OK), ctx
