"""Reporting arithmetic: relative energies, deviations and mean absolute errors.

All energies enter in Hartree; relative energies and deviations are reported
in kcal/mol with the fixed conversion :data:`HARTREE_TO_KCAL`.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

__all__ = [
    "HARTREE_TO_KCAL",
    "hartree_to_kcal",
    "kcal_to_hartree",
    "relative_energies",
    "deviations",
    "mean_absolute_error",
    "EnergyReport",
    "compute_report",
]

HARTREE_TO_KCAL = 627.509474


def hartree_to_kcal(value):
    return np.asarray(value, dtype=float) * HARTREE_TO_KCAL if np.ndim(value) else float(value) * HARTREE_TO_KCAL


def kcal_to_hartree(value):
    return np.asarray(value, dtype=float) / HARTREE_TO_KCAL if np.ndim(value) else float(value) / HARTREE_TO_KCAL


def relative_energies(energies, reference):
    """``{label: (E_label - E_reference) in kcal/mol}``."""
    if reference not in energies:
        raise KeyError(f"reference {reference!r} not among {sorted(energies)}")
    e_ref = float(energies[reference])
    return {label: hartree_to_kcal(float(e) - e_ref) for label, e in energies.items()}


def deviations(values, reference_values):
    """``{label: values[label] - reference_values[label]}`` over the shared labels.

    Raises ``KeyError`` when a label of ``values`` is missing from the reference.
    """
    missing = [label for label in values if label not in reference_values]
    if missing:
        raise KeyError(f"no reference value for {missing}")
    return {label: float(values[label]) - float(reference_values[label]) for label in values}


def mean_absolute_error(devs):
    """Mean of ``|deviation|``; an empty set is rejected."""
    items = list(devs.values()) if isinstance(devs, Mapping) else list(devs)
    if not items:
        raise ValueError("mean absolute error of an empty deviation set is undefined")
    return float(np.mean(np.abs(np.asarray(items, dtype=float))))


@dataclass(frozen=True)
class EnergyReport:
    """Per-method absolute and relative energies with optional comparisons.

    ``energies[method][system]`` are absolute energies (Hartree);
    ``relative[method][system]`` are gaps to the reference system (kcal/mol);
    ``deviations[method][system]`` are absolute-energy differences
    ``E_method - E_baseline`` for each system (kcal/mol);
    ``mae[method]`` is their mean absolute value; ``within_experiment`` flags
    relative energies inside the supplied experimental intervals.
    """

    reference: str
    energies: dict
    relative: dict
    baseline: Optional[str] = None
    deviations: dict = field(default_factory=dict)
    mae: dict = field(default_factory=dict)
    within_experiment: dict = field(default_factory=dict)

    def as_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "system", "energy_hartree", "relative_kcal", "deviation_kcal", "within_experiment"])
        for method in sorted(self.energies):
            for system in sorted(self.energies[method]):
                dev = self.deviations.get(method, {}).get(system)
                flag = self.within_experiment.get(method, {}).get(system)
                writer.writerow([
                    method,
                    system,
                    repr(float(self.energies[method][system])),
                    repr(float(self.relative[method][system])),
                    "" if dev is None else repr(dev),
                    "" if flag is None else str(flag).lower(),
                ])
        return buf.getvalue()

    def as_text(self):
        lines = [f"reference system: {self.reference}"]
        if self.baseline is not None:
            lines.append(f"baseline method: {self.baseline}")
        for method in sorted(self.energies):
            lines.append(f"[{method}]")
            for system in sorted(self.energies[method]):
                text = (
                    f"  {system}: E = {self.energies[method][system]:.10f} Ha, "
                    f"relative = {self.relative[method][system]:.4f} kcal/mol"
                )
                dev = self.deviations.get(method, {}).get(system)
                if dev is not None:
                    text += f", deviation = {dev:.4f} kcal/mol"
                flag = self.within_experiment.get(method, {}).get(system)
                if flag is not None:
                    text += ", inside experimental interval" if flag else ", outside experimental interval"
                lines.append(text)
            if method in self.mae:
                lines.append(f"  MAE = {self.mae[method]:.4f} kcal/mol")
        return "\n".join(lines) + "\n"


def compute_report(energies_by_label, reference_label, experimental=None, baseline=None):
    """Build an :class:`EnergyReport`.

    Parameters
    ----------
    energies_by_label : mapping
        Either ``{system: energy}`` (a single method, named ``"energy"``) or
        ``{method: {system: energy}}`` in Hartree.
    reference_label : str
        System whose energy defines zero of the relative scale.
    experimental : mapping, optional
        ``{system: (value, half_width)}`` in kcal/mol.
    baseline : str, optional
        Method whose absolute energies the others are compared against
        (deviations ``E_method - E_baseline`` and their MAE).
    """
    if energies_by_label and all(not isinstance(v, Mapping) for v in energies_by_label.values()):
        energies_by_label = {"energy": dict(energies_by_label)}
    energies = {m: {s: float(e) for s, e in systems.items()} for m, systems in energies_by_label.items()}
    relative = {m: relative_energies(systems, reference_label) for m, systems in energies.items()}
    devs, mae = {}, {}
    if baseline is not None:
        if baseline not in relative:
            raise KeyError(f"baseline method {baseline!r} not among {sorted(relative)}")
        for method, systems in energies.items():
            if method == baseline:
                continue
            diff = deviations(systems, energies[baseline])
            devs[method] = {s: hartree_to_kcal(v) for s, v in diff.items()}
            if devs[method]:
                mae[method] = mean_absolute_error(devs[method])
    within = {}
    if experimental:
        for method, rel in relative.items():
            flags = {}
            for system, (value, half_width) in experimental.items():
                if system in rel:
                    flags[system] = bool(abs(rel[system] - float(value)) <= float(half_width))
            within[method] = flags
    return EnergyReport(reference_label, energies, relative, baseline, devs, mae, within)
