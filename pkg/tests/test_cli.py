"""End-to-end command-line tests driven through main() in-process."""

import json
import math
import re

import numpy as np
import pytest

from nestquad.cli import main
from nestquad.rulestore import load


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def pair_record(tmp_path, capsys):
    path = tmp_path / "pair.json"
    code, _, _ = run(capsys, "generate", "--family", "legendre",
                     "--n1", "2", "--out", str(path))
    assert code == 0
    return path


@pytest.fixture()
def seed_record(tmp_path, capsys):
    path = tmp_path / "g1.json"
    code, _, _ = run(capsys, "gauss", "--family", "legendre",
                     "--n", "1", "--out", str(path))
    assert code == 0
    return path


class TestGenerate:
    def test_summary_line_and_record(self, tmp_path, capsys):
        out = tmp_path / "pair.json"
        code, stdout, _ = run(capsys, "generate", "--family", "legendre",
                              "--n1", "3", "--out", str(out))
        assert code == 0
        assert re.search(
            r"n1=3 n2=7 alpha1=5 alpha2=11 residual=\S+ "
            r"iterations=\d+ time=\S+", stdout)
        record = load(out)
        assert record.kind == "pair"
        assert record.payload.fine.n == 7

    def test_jacobi_example(self, capsys):
        code, stdout, _ = run(capsys, "generate", "--family", "jacobi",
                              "--params", "0,0.3", "--n1", "10")
        assert code == 0
        assert "n2=21" in stdout and "alpha2=31" in stdout

    def test_n1_zero_is_usage_error(self, capsys):
        code, _, stderr = run(capsys, "generate", "--family", "legendre",
                              "--n1", "0")
        assert code == 1
        assert "n1" in stderr

    def test_unknown_family(self, capsys):
        code, _, stderr = run(capsys, "generate", "--family", "fourier",
                              "--n1", "2")
        assert code == 1
        assert "unknown family" in stderr

    def test_batch_ordered_output(self, tmp_path, capsys):
        out = tmp_path / "batch"
        code, stdout, _ = run(capsys, "generate", "--family", "legendre",
                              "--n1", "1,2", "--out", str(out))
        assert code == 0
        lines = stdout.strip().split("\n")
        assert lines[0].startswith("n1=1 n2=3")
        assert lines[1].startswith("n1=2 n2=5")
        assert (out / "pair-legendre-n1.json").exists()
        assert (out / "pair-legendre-n2.json").exists()

    def test_diagnostics_log(self, tmp_path, capsys):
        log = tmp_path / "trace.csv"
        code, _, _ = run(capsys, "generate", "--family", "legendre",
                         "--n1", "1", "--log", str(log))
        assert code == 0
        header = log.read_text().split("\n", 1)[0]
        assert header == ("iteration,residual_norm,newton_decrement,"
                          "c_k,lambda,alpha2")


class TestExtend:
    def test_one_point_seed_two_steps(self, seed_record, tmp_path, capsys):
        out = tmp_path / "levels"
        code, stdout, _ = run(capsys, "extend", "--in", str(seed_record),
                              "--steps", "2", "--out", str(out))
        assert code == 0
        assert stdout.strip().split("\n") == ["n2=3 alpha2=5",
                                              "n2=7 alpha2=11"]
        record = load(out / "ext-legendre-n7.json")
        assert record.mode == "patterson"
        assert record.payload.exactness_degree == 11

    def test_prune_flag_accepted(self, seed_record, capsys):
        code, stdout, _ = run(capsys, "extend", "--in", str(seed_record),
                              "--steps", "1", "--prune")
        assert code == 0
        assert stdout.strip() == "n2=3 alpha2=5"

    def test_corrupt_input_is_io_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        code, _, stderr = run(capsys, "extend", "--in", str(bad))
        assert code == 3
        assert "bad.json" in stderr


class TestGauss:
    def test_summary_and_record(self, tmp_path, capsys):
        out = tmp_path / "g5.json"
        code, stdout, _ = run(capsys, "gauss", "--family", "legendre",
                              "--n", "5", "--out", str(out))
        assert code == 0
        assert stdout.startswith("n=5 alpha=9 residual=")
        assert load(out).payload.n == 5

    def test_bad_size(self, capsys):
        code, _, _ = run(capsys, "gauss", "--family", "legendre", "--n", "0")
        assert code == 1


class TestVerify:
    def test_certified_pair_passes(self, pair_record, capsys):
        code, stdout, _ = run(capsys, "verify", "--in", str(pair_record))
        assert code == 0
        assert stdout.count("PASS") == 2
        assert "coarse" in stdout and "fine" in stdout

    def test_perturbed_weight_fails_with_worst_moment(self, tmp_path,
                                                      capsys):
        path = tmp_path / "g3.json"
        run(capsys, "gauss", "--family", "legendre", "--n", "3",
            "--out", str(path))
        doc = json.loads(path.read_text())
        doc["data"]["weights"][0] += 1e-6
        path.write_text(json.dumps(doc))
        code, stdout, _ = run(capsys, "verify", "--in", str(path))
        assert code == 5
        assert "FAIL" in stdout
        assert "<- worst" in stdout

    def test_circle_theorem_legendre(self, tmp_path, capsys):
        path = tmp_path / "g12.json"
        run(capsys, "gauss", "--family", "legendre", "--n", "12",
            "--out", str(path))
        code, stdout, _ = run(capsys, "verify", "--in", str(path),
                              "--circle-theorem")
        assert code == 0
        assert "circle_theorem_deviation=" in stdout

    def test_circle_theorem_hermite_unsupported(self, tmp_path, capsys):
        path = tmp_path / "h4.json"
        run(capsys, "gauss", "--family", "hermite", "--n", "4",
            "--out", str(path))
        code, _, stderr = run(capsys, "verify", "--in", str(path),
                              "--circle-theorem")
        assert code == 1
        assert "circle theorem" in stderr


class TestSparseGrid:
    def test_nested_legendre_counts(self, tmp_path, capsys):
        code, stdout, _ = run(
            capsys, "sparse-grid", "--family", "legendre", "--d", "4",
            "--k", "6", "--schedule", "nested", "--autogen",
            "--catalog", str(tmp_path / "cat"),
            "--out", str(tmp_path / "grid"))
        assert code == 0
        assert stdout.strip() == "385"
        doc = json.loads((tmp_path / "grid.json").read_text())
        assert doc["d"] == 4 and doc["k"] == 6
        assert len(doc["weights"]) == 385
        csv = (tmp_path / "grid.csv").read_text().strip().split("\n")
        assert csv[0] == "x1,x2,x3,x4,weight"
        assert len(csv) == 386

    @pytest.mark.filterwarnings("ignore:level 6 rule")
    def test_nested_hermite_rho1_example(self, tmp_path, capsys):
        code, stdout, _ = run(
            capsys, "sparse-grid", "--family", "hermite-rho1", "--d", "4",
            "--k", "6", "--schedule", "nested", "--autogen",
            "--catalog", str(tmp_path / "cat"))
        assert code == 0
        assert stdout.strip() == "385"

    def test_gauss_d10_example(self, capsys):
        code, stdout, _ = run(capsys, "sparse-grid", "--family", "legendre",
                              "--d", "10", "--k", "4", "--schedule", "gauss")
        assert code == 0
        assert stdout.strip() == "1581"

    def test_missing_catalog_exit4(self, tmp_path, capsys):
        code, _, stderr = run(capsys, "sparse-grid", "--family", "legendre",
                              "--d", "2", "--k", "4", "--schedule", "nested",
                              "--catalog", str(tmp_path / "absent"))
        assert code == 4
        assert "--autogen" in stderr

    def test_catalog_reuse_without_autogen(self, tmp_path, capsys):
        cat = tmp_path / "cat"
        code, first, _ = run(capsys, "sparse-grid", "--family", "legendre",
                             "--d", "3", "--k", "4", "--schedule", "nested",
                             "--autogen", "--catalog", str(cat))
        assert code == 0
        code, second, _ = run(capsys, "sparse-grid", "--family", "legendre",
                              "--d", "3", "--k", "4", "--schedule", "nested",
                              "--catalog", str(cat))
        assert code == 0
        assert first == second

    def test_env_var_default_catalog(self, tmp_path, capsys, monkeypatch):
        cat = tmp_path / "envcat"
        monkeypatch.setenv("NESTQUAD_CATALOG", str(cat))
        code, stdout, _ = run(capsys, "sparse-grid", "--family", "legendre",
                              "--d", "2", "--k", "3", "--schedule", "nested",
                              "--autogen")
        assert code == 0
        assert (cat / "gauss-legendre-n1.json").exists()

    def test_d1_equals_univariate_level(self, tmp_path, capsys):
        cat = tmp_path / "cat"
        code, stdout, _ = run(capsys, "sparse-grid", "--family", "legendre",
                              "--d", "1", "--k", "3", "--schedule", "nested",
                              "--autogen", "--catalog", str(cat),
                              "--out", str(tmp_path / "g1d"))
        assert code == 0
        assert stdout.strip() == "3"
        doc = json.loads((tmp_path / "g1d.json").read_text())
        level = load(cat / "ext-legendre-n3.json").payload
        assert np.array_equal(np.array(doc["nodes"])[:, 0], level.nodes)
        assert np.array_equal(np.array(doc["weights"]), level.weights)


class TestIntegrate:
    @pytest.fixture()
    def grid_path(self, tmp_path, capsys):
        path = tmp_path / "grid"
        code, _, _ = run(capsys, "sparse-grid", "--family", "legendre",
                         "--d", "3", "--k", "3", "--schedule", "nested",
                         "--autogen", "--catalog", str(tmp_path / "cat"),
                         "--out", str(path))
        assert code == 0
        return tmp_path / "grid.json"

    @staticmethod
    def _value(stdout, key):
        match = re.search(rf"{key}=(\S+)", stdout)
        assert match, f"{key} missing in {stdout!r}"
        return float(match.group(1))

    def test_constant(self, grid_path, capsys):
        code, stdout, _ = run(capsys, "integrate", "--grid", str(grid_path),
                              "--function", "constant")
        assert code == 0
        assert self._value(stdout, "estimate") == pytest.approx(1.0,
                                                                abs=1e-10)
        assert self._value(stdout, "e_mu") <= 1e-10

    def test_monomial_within_exactness(self, grid_path, capsys):
        code, stdout, _ = run(capsys, "integrate", "--grid", str(grid_path),
                              "--function", "monomial",
                              "--params", "2,2,0")
        assert code == 0
        assert self._value(stdout, "estimate") == pytest.approx(
            1.0 / 9.0, abs=1e-10)
        assert self._value(stdout, "e_mu") <= 1e-9

    def test_product_exponential_reference(self, grid_path, capsys):
        code, stdout, _ = run(capsys, "integrate", "--grid", str(grid_path),
                              "--function", "product-exponential",
                              "--params", "0.3,0.2,0.1")
        assert code == 0
        truth = math.prod(math.sinh(c) / c for c in (0.3, 0.2, 0.1))
        assert self._value(stdout, "estimate") == pytest.approx(truth,
                                                                rel=1e-5)

    def test_genz_oscillatory(self, grid_path, capsys):
        code, stdout, _ = run(capsys, "integrate", "--grid", str(grid_path),
                              "--function", "genz-oscillatory",
                              "--params", "0.1,0.5,0.5,0.5")
        assert code == 0
        truth = (math.cos(2 * math.pi * 0.1)
                 * (math.sin(0.5) / 0.5) ** 3)
        assert self._value(stdout, "estimate") == pytest.approx(truth,
                                                                rel=1e-4)

    def test_nested_vs_gauss_same_integrand(self, tmp_path, capsys):
        nested = tmp_path / "ng"
        gauss = tmp_path / "gg"
        _, n_count, _ = run(capsys, "sparse-grid", "--family", "legendre",
                            "--d", "2", "--k", "4", "--schedule", "nested",
                            "--autogen", "--catalog", str(tmp_path / "cat"),
                            "--out", str(nested))
        _, g_count, _ = run(capsys, "sparse-grid", "--family", "legendre",
                            "--d", "2", "--k", "4", "--schedule", "gauss",
                            "--out", str(gauss))
        assert int(n_count.strip()) < int(g_count.strip())
        errors = {}
        for label, path in (("nested", nested), ("gauss", gauss)):
            code, stdout, _ = run(capsys, "integrate",
                                  "--grid", str(path) + ".json",
                                  "--function", "product-exponential",
                                  "--params", "0.4,0.3")
            assert code == 0
            errors[label] = self._value(stdout, "e_mu")
        assert errors["nested"] <= 1e-4 and errors["gauss"] <= 1e-4

    def test_pair_embedded_error(self, pair_record, capsys):
        code, stdout, _ = run(capsys, "integrate", "--rule",
                              str(pair_record), "--function",
                              "product-exponential", "--params", "0.5")
        assert code == 0
        assert "coarse=" in stdout and "fine=" in stdout
        assert self._value(stdout, "e_I") < 1e-2
        assert self._value(stdout, "e_mu") < 1e-6

    def test_unknown_function(self, grid_path, capsys):
        code, _, stderr = run(capsys, "integrate", "--grid", str(grid_path),
                              "--function", "mystery")
        assert code == 1
        assert "unknown function" in stderr

    def test_requires_exactly_one_source(self, grid_path, pair_record,
                                         capsys):
        code, _, _ = run(capsys, "integrate", "--function", "constant")
        assert code == 1
        code, _, _ = run(capsys, "integrate", "--grid", str(grid_path),
                         "--rule", str(pair_record), "--function",
                         "constant")
        assert code == 1

    def test_param_count_mismatch(self, grid_path, capsys):
        code, _, stderr = run(capsys, "integrate", "--grid", str(grid_path),
                              "--function", "monomial", "--params", "2,2")
        assert code == 1
        assert "3" in stderr


class TestExport:
    def test_pair_parts(self, pair_record, tmp_path, capsys):
        fine_csv = tmp_path / "fine.csv"
        coarse_csv = tmp_path / "coarse.csv"
        code, _, _ = run(capsys, "export", "--in", str(pair_record),
                         "--out", str(fine_csv))
        assert code == 0
        code, _, _ = run(capsys, "export", "--in", str(pair_record),
                         "--part", "coarse", "--out", str(coarse_csv))
        assert code == 0
        assert fine_csv.read_text().startswith("node,weight\n")
        assert len(fine_csv.read_text().strip().split("\n")) == 6
        assert len(coarse_csv.read_text().strip().split("\n")) == 3

    def test_rule_has_no_coarse_part(self, tmp_path, capsys):
        path = tmp_path / "g2.json"
        run(capsys, "gauss", "--family", "legendre", "--n", "2",
            "--out", str(path))
        code, _, stderr = run(capsys, "export", "--in", str(path),
                              "--part", "coarse",
                              "--out", str(tmp_path / "x.csv"))
        assert code == 1
        assert "no coarse part" in stderr


class TestTopLevel:
    def test_no_command(self, capsys):
        code, _, stderr = run(capsys)
        assert code == 1
        assert "no command" in stderr

    def test_unknown_flag(self, capsys):
        code, _, _ = run(capsys, "generate", "--family", "legendre",
                         "--n1", "1", "--frobnicate")
        assert code == 1
