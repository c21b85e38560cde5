"""Subcommand behaviour: report schema, determinism, exit codes, outputs."""

import json
import math

import pytest
from click.testing import CliRunner

from millefeuille import ExpandingStructure
from millefeuille.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def spec_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("specs") / "E.json"
    path.write_text(ExpandingStructure.diagonal([(1.0, 1), (2.0, 1)]).to_json())
    return str(path)


@pytest.fixture(scope="module")
def spec2_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("specs") / "E2.json"
    path.write_text(ExpandingStructure.diagonal([(2.0, 1), (4.0, 1)]).to_json())
    return str(path)


def _json_out(result):
    assert result.exit_code == 0, result.output
    return json.loads(result.output)


class TestDist:
    def test_madic_example(self, runner):
        result = runner.invoke(main, ["dist", "--mode", "madic", "--a", "2:{0:1}", "--b", "2:{}"])
        report = _json_out(result)
        assert report["schema"] == "v1"
        assert report["results"]["distance"] == 2.0

    def test_malformed_point_exits_2(self, runner):
        result = runner.invoke(main, ["dist", "--mode", "madic", "--a", "2:{0:7}", "--b", "2:{}"])
        assert result.exit_code == 2

    def test_tent_mode(self, runner, spec_file):
        result = runner.invoke(main, [
            "dist", "--mode", "tent", "--spec", spec_file,
            "--a", '{"x": [0.0, 0.0], "t": 0.0}', "--b", '{"x": [0.0, 0.0], "t": 3.0}'])
        assert _json_out(result)["results"]["distance"] == 3.0

    def test_mille_mode(self, runner, spec_file):
        result = runner.invoke(main, [
            "dist", "--mode", "mille", "--spec", spec_file, "--m", "2",
            "--a", '{"x": [0.0, 0.0], "xi": "2:{0:1}", "t": 0.0}',
            "--b", '{"x": [0.0, 0.0], "xi": "2:{4:1,0:1}", "t": 0.0}'])
        assert _json_out(result)["results"]["distance"] == 10.0

    def test_structure_mismatch_exits_2(self, runner, spec_file):
        result = runner.invoke(main, [
            "dist", "--mode", "mille", "--spec", spec_file, "--m", "2",
            "--a", '{"x": [0.0, 0.0], "xi": "3:{}", "t": 0.0}',
            "--b", '{"x": [0.0, 0.0], "xi": "3:{}", "t": 0.0}'])
        assert result.exit_code == 2


class TestVisual:
    def test_identical_points_zero_exit_zero(self, runner, spec_file):
        result = runner.invoke(main, ["visual", "--spec", spec_file,
                                      "--x", "1.0,2.0", "--y", "1.0,2.0"])
        report = _json_out(result)
        assert report["results"]["distance"] == 0.0

    def test_value_with_cygan(self, runner, spec_file):
        result = runner.invoke(main, ["visual", "--spec", spec_file, "--cygan",
                                      "--x", f"{math.exp(4)},0.0", "--y", "0.0,0.0"])
        report = _json_out(result)
        assert report["results"]["distance"] == pytest.approx(math.exp(4), rel=1e-9)
        assert 0.25 <= report["results"]["euclid_cygan"] / report["results"]["distance"] <= 4.0


class TestClassify:
    def test_verdict_and_exit_zero(self, runner, spec_file, spec2_file):
        result = runner.invoke(main, ["classify", "--spec", spec_file, "--spec2", spec2_file,
                                      "--m", "2", "--mp", "4"])
        report = _json_out(result)
        assert report["results"]["equivalent"] == "yes"
        assert report["results"]["common_base"] == [2, 1, 2]

    def test_inconclusive_exits_3(self, runner, spec_file, tmp_path):
        wobble = tmp_path / "wobble.json"
        wobble.write_text(ExpandingStructure.diagonal([(1.0 + 1e-8, 1), (2.0, 1)]).to_json())
        result = runner.invoke(main, ["classify", "--spec", spec_file, "--spec2", str(wobble),
                                      "--m", "2", "--mp", "2"])
        assert result.exit_code == 3
        assert '"inconclusive"' in result.output

    def test_missing_spec_exits_2(self, runner, spec_file):
        result = runner.invoke(main, ["classify", "--spec", spec_file, "--spec2", "/nope.json",
                                      "--m", "2", "--mp", "2"])
        assert result.exit_code == 2


class TestBoundary:
    def test_single_pair_and_snowflake_factor(self, runner, spec_file):
        result = runner.invoke(main, [
            "boundary", "--spec", spec_file, "--m", "2",
            "--a", '{"x": [0.0, 0.0], "xi": "2:{}"}',
            "--b", '{"x": [0.0, 0.0], "xi": "2:{3:1}"}'])
        report = _json_out(result)
        assert report["snowflake_factor"] == pytest.approx(math.log(2))
        assert report["results"]["model_value"] == pytest.approx(16.0)
        assert report["results"]["formula_value"] == pytest.approx(16.0)

    def test_batch_requires_seed(self, runner, spec_file):
        result = runner.invoke(main, ["boundary", "--spec", spec_file, "--m", "2",
                                      "--count", "10"])
        assert result.exit_code == 2
        assert "seed" in result.output

    def test_batch_with_outputs(self, runner, spec_file, tmp_path):
        out = tmp_path / "report.json"
        csv_path = tmp_path / "records.csv"
        fig = tmp_path / "ratios.png"
        result = runner.invoke(main, [
            "boundary", "--spec", spec_file, "--m", "2", "--count", "50",
            "--seed", "3", "--csv", str(csv_path), "--fig", str(fig), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["results"]["K"] <= 4.0
        assert csv_path.read_text().startswith("model_value,formula_value,ratio")
        assert fig.stat().st_size > 0

    def test_unknown_window_key_exits_2(self, runner, spec_file):
        result = runner.invoke(main, [
            "boundary", "--spec", spec_file, "--m", "2", "--count", "10", "--seed", "1",
            "--window", '{"x_half": 5.0, "t_low": -2, "t_high": 2, "bogus": 1}'])
        assert result.exit_code == 2


class TestEstimate:
    def test_requires_seed(self, runner, spec_file):
        result = runner.invoke(main, ["estimate", "--kind", "bilipschitz",
                                      "--spec", spec_file, "--m", "2"])
        assert result.exit_code == 2

    def test_bilipschitz_builtin(self, runner, spec_file, tmp_path):
        out = tmp_path / "est.json"
        csv_path = tmp_path / "est.csv"
        result = runner.invoke(main, [
            "estimate", "--kind", "bilipschitz", "--spec", spec_file, "--m", "2",
            "--family", "similarities", "--seed", "5", "--count", "200",
            "--csv", str(csv_path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        for est in report["results"]["similarities"]:
            assert est["a_low"] == pytest.approx(est["b_high"], rel=1e-9)
        assert csv_path.read_text().splitlines()[0] == "family,map,a_low,b_high"

    def test_qs_with_figure(self, runner, spec_file, tmp_path):
        fig = tmp_path / "qs.png"
        result = runner.invoke(main, [
            "estimate", "--kind", "qs", "--spec", spec_file, "--m", "2",
            "--family", "power_maps", "--seed", "5", "--count", "300", "--fig", str(fig)])
        assert result.exit_code == 0, result.output
        assert fig.stat().st_size > 0

    def test_fig_rejected_for_non_curve_kind(self, runner, spec_file, tmp_path):
        result = runner.invoke(main, [
            "estimate", "--kind", "bilipschitz", "--spec", spec_file, "--m", "2",
            "--seed", "5", "--count", "50", "--fig", str(tmp_path / "x.png")])
        assert result.exit_code == 2

    def test_unknown_family_exits_2(self, runner, spec_file):
        result = runner.invoke(main, [
            "estimate", "--kind", "qs", "--spec", spec_file, "--m", "2",
            "--family", "nope", "--seed", "5"])
        assert result.exit_code == 2

    def test_byte_identical_reports(self, runner, spec_file, tmp_path):
        args = ["estimate", "--kind", "uniform", "--spec", spec_file, "--m", "2",
                "--family", "similarities", "--seed", "9", "--count", "100"]
        r1 = runner.invoke(main, args)
        r2 = runner.invoke(main, args)
        assert r1.exit_code == r2.exit_code == 0
        assert r1.output == r2.output

    def test_catalog_file(self, runner, spec_file, tmp_path):
        catalog = {
            "maps": {"s": {"kind": "similarity", "tree_shift": 1,
                           "signs": [1.0, 1.0], "offset": [0.0, 0.0]}},
            "families": {"only": ["s"]},
        }
        cat_path = tmp_path / "catalog.json"
        cat_path.write_text(json.dumps(catalog))
        result = runner.invoke(main, [
            "estimate", "--kind", "bilipschitz", "--spec", spec_file, "--m", "2",
            "--maps", str(cat_path), "--seed", "2", "--count", "100"])
        report = _json_out(result)
        est = report["results"]["only"][0]
        assert est["a_low"] == pytest.approx(2.0, rel=1e-9)


class TestVerifyAndDistort:
    def test_verify_builtin(self, runner, spec_file):
        result = runner.invoke(main, ["verify", "--spec", spec_file, "--m", "2",
                                      "--seed", "4", "--count", "100"])
        report = _json_out(result)
        for fam, rows in report["results"].items():
            for row in rows:
                assert row["decomposition"]["passed"], fam

    def test_distort_with_outputs(self, runner, spec_file, tmp_path):
        out = tmp_path / "d.json"
        csv_path = tmp_path / "d.csv"
        fig = tmp_path / "d.png"
        result = runner.invoke(main, [
            "distort", "--spec", spec_file, "--m", "2", "--count", "20", "--seed", "1",
            "--csv", str(csv_path), "--fig", str(fig), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["results"]["slope"] == pytest.approx(
            report["results"]["target_slope"], rel=0.05)
        assert report["results"]["ratio_monotone"]
        header = csv_path.read_text().splitlines()[0]
        assert header == "level_distance,ambient,constrained,ratio"
        assert fig.stat().st_size > 0

    def test_distort_requires_seed(self, runner, spec_file):
        result = runner.invoke(main, ["distort", "--spec", spec_file])
        assert result.exit_code == 2
