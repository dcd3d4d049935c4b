import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdmhybrid.report import (
    HARTREE_TO_KCAL,
    compute_report,
    deviations,
    hartree_to_kcal,
    kcal_to_hartree,
    mean_absolute_error,
    relative_energies,
)


class TestArithmetic:
    def test_gap_conversion(self):
        rel = relative_energies({"o": -230.0, "m": -229.97578}, "o")
        assert rel["o"] == 0.0
        assert rel["m"] == pytest.approx(15.2, abs=0.05)
        assert hartree_to_kcal(0.024222) == pytest.approx(0.024222 * 627.509474, rel=1e-15)

    @pytest.mark.parametrize("devs,expected", [((3.03, 1.64, 1.21), 1.96), ((1.31, 6.08, 2.83), 3.41)])
    def test_mae_fixtures(self, devs, expected):
        assert mean_absolute_error(devs) == pytest.approx(expected, abs=0.005)

    def test_mae_uses_absolute_values(self):
        assert mean_absolute_error({"a": -1.0, "b": 3.0}) == 2.0

    def test_empty_mae_rejected(self):
        with pytest.raises(ValueError):
            mean_absolute_error({})

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
    def test_unit_round_trip(self, value):
        back = hartree_to_kcal(kcal_to_hartree(value))
        assert back == pytest.approx(value, rel=1e-12, abs=1e-300)

    def test_array_conversion(self):
        np.testing.assert_allclose(hartree_to_kcal(np.array([1.0, 2.0])), [HARTREE_TO_KCAL, 2 * HARTREE_TO_KCAL])

    def test_missing_labels(self):
        with pytest.raises(KeyError):
            relative_energies({"o": 0.0}, "m")
        with pytest.raises(KeyError):
            deviations({"o": 1.0, "m": 2.0}, {"o": 1.0})


class TestReport:
    def _energies(self):
        return {
            "casscf": {"o": -230.0, "m": -229.97578, "p": -229.95},
            "qacse": {"o": -230.01, "m": -229.975, "p": -229.962},
        }

    def test_single_system_reference_to_itself(self):
        report = compute_report({"o": -1.0}, "o")
        assert report.relative == {"energy": {"o": 0.0}}
        assert report.mae == {}
        with pytest.raises(ValueError):
            mean_absolute_error(report.deviations.get("energy", {}))

    def test_deviations_and_mae(self):
        report = compute_report(self._energies(), "o", baseline="casscf")
        dev = report.deviations["qacse"]
        assert dev["o"] == pytest.approx(-0.01 * HARTREE_TO_KCAL, rel=1e-9)
        assert report.mae["qacse"] == pytest.approx(np.mean([abs(v) for v in dev.values()]), rel=1e-15)
        assert "casscf" not in report.deviations

    def test_experimental_flags(self):
        experimental = {"m": (15.3, 4.31), "p": (31.2, 4.17)}
        report = compute_report(self._energies(), "o", experimental=experimental)
        assert report.within_experiment["casscf"]["m"] is True  # 15.20 inside 15.3 +- 4.31
        assert report.within_experiment["casscf"]["p"] is True  # 31.37 inside 31.2 +- 4.17
        assert report.within_experiment["qacse"]["p"] is True
        assert report.within_experiment["qacse"]["m"] is False  # 21.96 outside 15.3 +- 4.31

    def test_unknown_baseline(self):
        with pytest.raises(KeyError):
            compute_report(self._energies(), "o", baseline="dmrg")

    def test_csv_and_text(self):
        report = compute_report(self._energies(), "o", experimental={"m": (15.3, 4.31)}, baseline="casscf")
        rows = list(csv.DictReader(io.StringIO(report.as_csv())))
        assert len(rows) == 6
        row = next(r for r in rows if r["method"] == "qacse" and r["system"] == "m")
        assert float(row["relative_kcal"]) == pytest.approx(report.relative["qacse"]["m"], rel=1e-15)
        assert row["within_experiment"] == "false"
        text = report.as_text()
        assert "reference system: o" in text and "MAE = " in text
        assert report.as_csv() == compute_report(self._energies(), "o", experimental={"m": (15.3, 4.31)}, baseline="casscf").as_csv()
