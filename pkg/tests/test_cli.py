import json
import os
import textwrap

import pytest

from rsdekit import cli
from rsdekit.errors import ConfigError


def write_config(tmp_path, body, name="run.ini"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return str(path)


MOMENT_CONFIG = """
    [run]
    experiment = moment_scaling
    seed = 77
    workers = 1
    output = {out}

    [domain]
    kind = half_space
    params = {{"normal": [1.0], "offset": 0.0}}

    [coefficients]
    d = 1
    d1 = 1
    sigma = const
    sigma_params = {{"value": 1.0}}

    [experiment]
    windows = [[0.0, 0.0625], [0.0, 0.125], [0.0, 0.25]]
    p = 1.0
    x0 = [0.0]
    paths = 400
"""


class TestParsing:
    def test_unknown_section(self, tmp_path):
        path = write_config(tmp_path, """
            [run]
            experiment = exp_tail
            seed = 1
            [mystery]
            a = 1
        """)
        with pytest.raises(ConfigError, match="mystery"):
            cli.parse_config(path)

    def test_unknown_experiment_key_named(self, tmp_path):
        path = write_config(tmp_path, MOMENT_CONFIG.format(out="o") + "\n    bogus = 3\n")
        with pytest.raises(ConfigError, match="bogus"):
            cli.parse_config(path)

    def test_negative_delta_cites_key(self, tmp_path):
        path = write_config(tmp_path, """
            [run]
            experiment = approx_continuity
            seed = 1

            [domain]
            kind = half_space
            params = {"normal": [1.0], "offset": 0.0}

            [coefficients]
            d = 1
            d1 = 1

            [control]
            kind = zero

            [experiment]
            T = 1.0
            x0 = [1.0]
            epsilon = 0.3
            deltas = [-1]
            target_accepted = 10
        """)
        with pytest.raises(ConfigError, match="deltas"):
            cli.parse_config(path)

    def test_extraneous_section_rejected(self, tmp_path):
        body = MOMENT_CONFIG.format(out="o") + textwrap.dedent("""
            [control]
            kind = zero
        """)
        path = write_config(tmp_path, body)
        with pytest.raises(ConfigError, match="control"):
            cli.parse_config(path)

    def test_missing_section(self, tmp_path):
        path = write_config(tmp_path, """
            [run]
            experiment = moment_scaling
            seed = 1
            [experiment]
            windows = [[0.0, 0.5]]
            p = 1.0
            x0 = [0.0]
            paths = 8
        """)
        with pytest.raises(ConfigError, match="domain"):
            cli.parse_config(path)

    def test_defaults_materialized(self, tmp_path):
        path = write_config(tmp_path, MOMENT_CONFIG.format(out="o"))
        resolved = cli.parse_config(path)
        assert resolved["experiment"]["grid_points_min"] == 128
        assert resolved["experiment"]["slope_band"] == (0.8, None)
        assert resolved["coefficients"]["b"] == "const"

    def test_overrides(self, tmp_path):
        path = write_config(tmp_path, MOMENT_CONFIG.format(out="o"))
        resolved = cli.parse_config(path, ["experiment.paths=64", "run.seed=9"])
        assert resolved["experiment"]["paths"] == 64
        assert resolved["run"]["seed"] == 9

    def test_workers_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.WORKERS_ENV, "3")
        body = MOMENT_CONFIG.format(out="o").replace("\n    workers = 1", "")
        path = write_config(tmp_path, body)
        resolved = cli.parse_config(path)
        assert resolved["run"]["workers"] == 3


class TestRun:
    def test_dry_run_no_outputs(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, MOMENT_CONFIG.format(out=out))
        code = cli.main(["run", path, "--dry-run"])
        assert code == 0
        assert not out.exists()

    def test_full_run_outputs(self, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, MOMENT_CONFIG.format(out=out))
        code = cli.main(["run", path])
        assert code == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["name"] == "moment_scaling"
        assert doc["verdict"] == "pass"
        assert doc["resolved_config"]["experiment"]["paths"] == 400
        assert (out / "estimates.csv").exists()
        assert (out / "resolved_config.ini").exists()

    def test_config_error_exit_2(self, tmp_path):
        path = write_config(tmp_path, "[run]\nexperiment = nope\nseed = 1\n")
        assert cli.main(["run", path]) == 2

    def test_tube_too_narrow_exit_3(self, tmp_path):
        path = write_config(tmp_path, """
            [run]
            experiment = approx_continuity
            seed = 2
            output = {out}

            [domain]
            kind = half_space
            params = {{"normal": [1.0], "offset": 0.0}}

            [coefficients]
            d = 1
            d1 = 1
            sigma = const
            sigma_params = {{"value": 0.5}}

            [control]
            kind = zero

            [experiment]
            T = 1.0
            x0 = [1.0]
            epsilon = 0.3
            deltas = [0.03]
            target_accepted = 500
            grid_level = 7
        """.format(out=tmp_path / "o3"))
        assert cli.main(["run", path]) == 3

    def test_verdict_fail_exit_1(self, tmp_path):
        path = write_config(tmp_path, """
            [run]
            experiment = holder_tightness
            seed = 3
            output = {out}

            [domain]
            kind = half_space
            params = {{"normal": [1.0], "offset": 0.0}}

            [coefficients]
            d = 1
            d1 = 1
            sigma = const
            sigma_params = {{"value": 0.5}}

            [experiment]
            T = 1.0
            x0 = [1.0]
            theta = 0.2
            levels = [3, 4]
            paths = 64
            stability_factor = 1.0000001
        """.format(out=tmp_path / "o4"))
        assert cli.main(["run", path]) == 1

    def test_byte_identical_across_workers(self, tmp_path):
        out1, out2 = tmp_path / "w1", tmp_path / "w2"
        path = write_config(tmp_path, MOMENT_CONFIG.format(out=out1))
        assert cli.main(["run", path]) == 0
        assert cli.main(["run", path, "--workers", "2",
                         "--output", str(out2)]) == 0
        assert (out1 / "report.json").read_bytes() == \
            (out2 / "report.json").read_bytes()

    def test_submartingale_dispatch(self, tmp_path):
        out = tmp_path / "sub"
        path = write_config(tmp_path, """
            [run]
            experiment = submartingale_test
            seed = 6
            output = {out}

            [domain]
            kind = ball
            params = {{"center": [0.0, 0.0], "radius": 1.0}}

            [coefficients]
            d = 2
            d1 = 2
            sigma = const
            sigma_params = {{"value": 1.0}}

            [u]
            kind = quadratic
            params = {{"sign": 1.0}}

            [experiment]
            time_grid = [0.0, 0.05, 0.1]
            x = [0.0, 0.0]
            paths = 500
            grid_level = 7
        """.format(out=out))
        assert cli.main(["run", path]) == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["verdict"] == "pass"

    def test_max_principle_writes_cloud(self, tmp_path):
        out = tmp_path / "mp"
        path = write_config(tmp_path, """
            [run]
            experiment = max_principle
            seed = 5
            output = {out}

            [domain]
            kind = ball
            params = {{"center": [0.0, 0.0], "radius": 1.0}}

            [coefficients]
            d = 2
            d1 = 2
            sigma = const
            sigma_params = {{"value": 1.0}}

            [u]
            kind = constant
            params = {{"value": 2.0}}

            [experiment]
            n_controls = 50
            horizon = 0.5
            x = [0.0, 0.0]
        """.format(out=out))
        assert cli.main(["run", path]) == 0
        assert (out / "cloud.csv").exists()
        doc = json.loads((out / "report.json").read_text())
        assert doc["verdict"] == "pass"


class TestCatalog:
    def test_at_least_nine_experiments(self, capsys):
        assert cli.main(["list-experiments"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert len(lines) >= 9

    def test_json_catalog_matches(self, capsys):
        cli.main(["list-experiments", "--json"])
        doc = json.loads(capsys.readouterr().out)
        names = {row["name"] for row in doc}
        assert names == set(cli.CATALOG)
        for row in doc:
            assert row["claim"]
            assert isinstance(row["required_keys"], list)
