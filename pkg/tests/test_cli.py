import subprocess
import sys

import pytest

from rdmhybrid.cli import main
from rdmhybrid.pipeline import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_STAGE

from conftest import H2_FCI_ENERGY

H2 = ["--h-chain", "2", "--spacing", "1.4"]


def _energy(path, key="energy"):
    for line in path.read_text().splitlines():
        if line.startswith(f"{key} = "):
            return float(line.split(" = ")[1])
    raise KeyError(key)


class TestSubcommands:
    def test_fci(self, tmp_path, capsys):
        assert main(["fci", *H2, "-o", str(tmp_path)]) == EXIT_OK
        assert _energy(tmp_path / "fci_energy.txt") == pytest.approx(H2_FCI_ENERGY, abs=1e-10)
        assert "E = -1.1372759436" in capsys.readouterr().out

    def test_acse_statevector(self, tmp_path):
        assert main(["acse", *H2, "-o", str(tmp_path), "--energy-tol", "1e-12"]) == EXIT_OK
        assert _energy(tmp_path / "acse_energy.txt") == pytest.approx(H2_FCI_ENERGY, abs=1e-8)

    def test_qacse_sim_then_acse_from_state(self, tmp_path):
        dev = tmp_path / "dev"
        args = ["qacse-sim", *H2, "-o", str(dev), "--shots", "exact", "--noise", "0", "--max-iters", "5"]
        assert main(args) == EXIT_OK
        assert (dev / "qacse_state.txt").is_file()
        fin = tmp_path / "fin"
        assert main(["acse", *H2, "-o", str(fin), "--state", str(dev / "qacse_state.txt")]) == EXIT_OK
        assert _energy(fin / "acse_energy.txt") < _energy(dev / "qacse_energy.txt", "device_energy")

    def test_qacse_sim_noisy_has_no_state(self, tmp_path):
        args = ["qacse-sim", *H2, "-o", str(tmp_path), "--shots", "500", "--depolarizing-p", "0.01",
                "--readout-flip", "0.02", "--max-iters", "3", "--seed", "5"]
        assert main(args) == EXIT_OK
        assert not (tmp_path / "qacse_state.txt").exists()
        assert "shots_per_setting = 500" in (tmp_path / "qacse_energy.txt").read_text()

    def test_purify_and_pdft_from_files(self, tmp_path):
        main(["fci", *H2, "-o", str(tmp_path / "fci")])
        rdm2 = str(tmp_path / "fci" / "fci_rdm2.txt")
        assert main(["purify", "--rdm2", rdm2, "-o", str(tmp_path / "pur"), "--sz", "0"]) == EXIT_OK
        assert (tmp_path / "pur" / "purify_report.csv").is_file()
        args = ["pdft", *H2, "--rdm1", str(tmp_path / "fci" / "fci_rdm1.txt"), "--rdm2", rdm2,
                "--functionals", "tPBE,tBLYP", "-o", str(tmp_path / "pdft")]
        assert main(args) == EXIT_OK
        text = (tmp_path / "pdft" / "pdft.csv").read_text()
        assert "tPBE" in text and "tBLYP" in text

    def test_report(self, tmp_path, capsys):
        table = tmp_path / "e.csv"
        table.write_text("method,system,energy\nqacse,o,-230.0\nqacse,m,-229.97578\n")
        args = ["report", "--energies", str(table), "--reference", "o",
                "--experimental", "m:15.3:4.31", "-o", str(tmp_path / "rep")]
        assert main(args) == EXIT_OK
        text = (tmp_path / "rep" / "report.txt").read_text()
        assert "relative = 15.1983 kcal/mol, inside experimental interval" in text

    def test_run_config(self, tmp_path):
        cfg = tmp_path / "chain.ini"
        cfg.write_text("[run]\nstages = fci, pdft, report\n[system]\nh_chain = 2\nspacing = 1.4\n"
                       "[pdft]\nn_radial = 30\nn_theta = 10\nn_phi = 20\n")
        assert main(["run", str(cfg)]) == EXIT_OK
        assert (tmp_path / "out" / "report.csv").is_file()

    def test_version_and_module_entry(self):
        done = subprocess.run([sys.executable, "-m", "rdmhybrid.cli", "--version"], capture_output=True, text=True)
        assert done.returncode == 0 and done.stdout.startswith("rdmhybrid ")


class TestFcidump:
    def test_gen_and_validate(self, tmp_path, capsys):
        path = tmp_path / "h2.fcidump"
        assert main(["fcidump", "gen", *H2, str(path)]) == EXIT_OK
        assert main(["fcidump", "validate", str(path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "NORB = 2" in out and "NELEC = 2" in out
        assert main(["fci", "--fcidump", str(path), "-o", str(tmp_path / "o")]) == EXIT_OK
        assert _energy(tmp_path / "o" / "fci_energy.txt") == pytest.approx(H2_FCI_ENERGY, abs=1e-10)

    def test_validate_malformed(self, tmp_path):
        path = tmp_path / "bad.fcidump"
        path.write_text("&FCI NORB=2, NELEC=2,\n&END\n0.5 1 1 9 9\n")
        assert main(["fcidump", "validate", str(path)]) == EXIT_STAGE

    def test_validate_missing_file(self, tmp_path):
        assert main(["fcidump", "validate", str(tmp_path / "none")]) == EXIT_CONFIG


class TestExitCodes:
    def test_config_error(self, tmp_path, capsys):
        assert main(["acse", *H2, "--mode", "magic", "-o", str(tmp_path)]) == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.ini")]) == EXIT_CONFIG

    def test_stage_failure(self, tmp_path, capsys):
        table = tmp_path / "e.csv"
        table.write_text("method,system,energy\nqacse,o,-1.0\n")
        assert main(["report", "--energies", str(table), "--reference", "x", "-o", str(tmp_path)]) == EXIT_STAGE
        assert "report" in capsys.readouterr().err

    def test_non_convergence(self, tmp_path, capsys):
        assert main(["acse", *H2, "--max-iters", "1", "-o", str(tmp_path)]) == EXIT_NOT_CONVERGED
        assert (tmp_path / "acse_energy.txt").is_file()
        assert "not converged: acse" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["fci"])
        assert info.value.code == 2
