"""Tests for the batch front end.

Covers configuration parsing (exhaustive error reporting, cross-field
constraints, direction normalization), the artifact contract of each mode
(run_header.json, fits.json, trajectory.csv, sweep tables), byte-level
determinism of reruns, error.json on runtime failure, and the exit-code
scheme of the command line entry point.

The simulation runs here are deliberately tiny (short windows, coarse
grids, a reduced localization constant K) so the whole file stays fast;
quantitative quality of the numerics is covered elsewhere.
"""

import copy
import io
import json
import math
import multiprocessing
import os
import subprocess
import sys
import unittest
from contextlib import redirect_stderr

import numpy as np
import pytest

from blowlab import cli
from blowlab import diagnostics
from blowlab import params as params_mod
from blowlab import spectral

TINY = {
    "mode": "simulate-similarity",
    "params": {"p": 2, "n_dim": 1},
    "grid": {"L": 24.0, "N": 257},
    "solver": {"ds": 5.0e-3, "s0": 25.0, "s_end": 26.0, "record_every": 10},
    "shrinking_set": {"A": 10.0, "p1": 0.5, "K": 2.0},
    "initial_data": {"d1": 0.0, "d2": 0.0},
    "seed": 0,
}

_REAL_RUN_SIMILARITY = cli._run_similarity


def _boom_on_p3(config):
    if config.p == 3:
        raise RuntimeError("injected failure for p=3")
    return _REAL_RUN_SIMILARITY(config)


def tiny_raw(**top_level):
    raw = copy.deepcopy(TINY)
    raw.update(top_level)
    return raw


def _set_in(raw, dotted, value):
    node = raw
    *head, last = dotted.split(".")
    for key in head:
        node = node.setdefault(key, {})
    node[last] = value
    return raw


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_sim") / "run"
    config = cli.config_from_dict(tiny_raw(output_dir=str(out)))
    code = cli.run(config)
    return code, config, out


class TestConfigParsing:
    def test_minimal_verify_config_fills_defaults(self):
        config = cli.config_from_dict({"mode": "verify", "params": {"p": 3}})
        assert config.n_dim == 1
        assert config.scheme == "semi-implicit"
        assert config.pin is True
        assert config.eta == pytest.approx(2.5e-4)
        assert config.A == 10.0 and config.p1 == 0.5 and config.K == 5.0
        assert config.probe_log_radii == (10.0, 12.0, 14.0)
        assert config.sweep_ps == (2, 3, 4) and config.sweep_ns == (1, 2)
        assert config.output_dir == "out"
        assert config.seed == 0 and config.workers == 2

    def test_all_violations_reported_at_once(self):
        raw = {
            "mode": "simulate-similarity",
            "params": {"p": 11},
            "grid": {"L": 10.0, "N": 64},
            "solver": {"ds": 0.02, "s0": 25.0, "s_end": 60.0,
                       "eta": 0.5, "foo": 1},
            "extra": True,
        }
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict(raw)
        messages = info.value.errors
        assert len(messages) == 7
        joined = "\n".join(messages)
        assert "params.p" in joined
        assert "grid.N" in joined
        assert "solver.eta" in joined
        assert "2*K*sqrt(s_end)" in joined
        assert "semi-implicit scheme requires" in joined
        assert "unknown key solver.foo" in joined
        assert "unknown key <root>.extra" in joined

    def test_unknown_section_key_rejected(self):
        raw = tiny_raw()
        raw["params"]["bogus"] = 1
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict(raw)
        assert any("unknown key params.bogus" in m for m in info.value.errors)

    @pytest.mark.parametrize(
        "dotted, value, fragment",
        [
            ("params.p", 2.5, "params.p must be an integer"),
            ("grid.L", "wide", "grid.L must be a number"),
            ("solver.pin", "yes", "solver.pin must be true or false"),
            ("solver.s0", 0.5, "solver.s0 must be >= 1"),
            ("solver.record_every", 0, "solver.record_every must be >= 1"),
            ("shrinking_set.p1", 1.5, "shrinking_set.p1 must lie in (0, 1)"),
            ("seed", -1, "seed must be >= 0"),
        ],
    )
    def test_field_violation_messages(self, dotted, value, fragment):
        raw = _set_in(tiny_raw(), dotted, value)
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict(raw)
        assert any(fragment in m for m in info.value.errors)

    def test_cfl_precheck_rejects_coarse_step_on_fine_grid(self):
        raw = tiny_raw()
        raw["grid"] = {"L": 24.0, "N": 8193}
        raw["solver"]["ds"] = 0.1
        raw["solver"]["scheme"] = "explicit-rk4"
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict(raw)
        assert any("CFL pre-check" in m for m in info.value.errors)

    def test_scalar_directions_normalize(self):
        config = cli.config_from_dict(tiny_raw(initial_data={"d1": 0.5, "d2": -0.25}))
        assert config.d1 == {"const": 0.5, "lin": [0.0]}
        assert config.d2 == {"const": -0.25, "lin": [0.0], "quad": [[0.0]]}

    def test_mapping_directions_normalize_in_two_dimensions(self):
        raw = tiny_raw()
        raw["params"]["n_dim"] = 2
        raw["grid"]["N"] = 65
        raw["initial_data"] = {
            "d1": {"const": 0.1, "lin": [0.2, -0.2]},
            "d2": {"quad": [[0.3, 0.1], [0.1, -0.3]]},
        }
        config = cli.config_from_dict(raw)
        assert config.d1 == {"const": 0.1, "lin": [0.2, -0.2]}
        assert config.d2["const"] == 0.0
        assert config.d2["quad"] == [[0.3, 0.1], [0.1, -0.3]]

    @pytest.mark.parametrize(
        "initial_data, n_dim, fragment",
        [
            ({"d1": {"lin": [0.1, 0.2]}}, 1, "list of 1 numbers"),
            ({"d1": {"quad": [[0.1]]}}, 1, "does not take a quad entry"),
            ({"d2": {"quad": [[0.0, 0.5], [0.1, 0.0]]}}, 2, "must be symmetric"),
            ({"d1": 3.0}, 1, "entries must lie in [-2, 2]"),
            ({"d1": [0.1]}, 1, "must be a number or a mapping"),
        ],
    )
    def test_direction_violations(self, initial_data, n_dim, fragment):
        raw = tiny_raw(initial_data=initial_data)
        raw["params"]["n_dim"] = n_dim
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict(raw)
        assert any(fragment in m for m in info.value.errors)

    def test_similarity_mode_requires_grid_and_window(self):
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict({"mode": "simulate-similarity", "params": {"p": 2}})
        joined = "\n".join(info.value.errors)
        for key in ("grid.L", "grid.N", "solver.ds", "solver.s0", "solver.s_end"):
            assert f"missing required key {key}" in joined

    def test_physical_mode_does_not_require_window(self):
        raw = {
            "mode": "simulate-physical",
            "params": {"p": 2, "n_dim": 1},
            "grid": {"L": 0.5, "N": 1025},
            "solver": {"s0": 10.0},
            "physical": {"probe_log_radii": [4.0, 5.0]},
        }
        config = cli.config_from_dict(raw)
        assert config.mode == "simulate-physical"
        assert config.s_end == 0.0

    def test_physical_mode_requires_one_dimension(self):
        raw = {
            "mode": "simulate-physical",
            "params": {"p": 2, "n_dim": 2},
            "grid": {"L": 0.5, "N": 65},
            "solver": {"s0": 10.0},
        }
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict(raw)
        assert any("n_dim = 1 only" in m for m in info.value.errors)

    def test_probe_outside_grid_rejected(self):
        raw = {
            "mode": "simulate-physical",
            "params": {"p": 2, "n_dim": 1},
            "grid": {"L": 0.2, "N": 1025},
            "solver": {"s0": 10.0},
            "physical": {"probe_log_radii": [1.0]},
        }
        with pytest.raises(cli.ConfigError) as info:
            cli.config_from_dict(raw)
        assert any("outside the grid" in m for m in info.value.errors)

    def test_overrides_apply(self):
        config = cli.config_from_dict(
            tiny_raw(), overrides={"out": "elsewhere", "seed": 7, "workers": 5}
        )
        assert config.output_dir == "elsewhere"
        assert config.seed == 7
        assert config.workers == 5

    def test_config_hash_stable_and_sensitive(self):
        a = cli.config_from_dict(tiny_raw())
        b = cli.config_from_dict(tiny_raw())
        c = cli.config_from_dict(tiny_raw(seed=1))
        assert cli.config_hash(a) == cli.config_hash(b)
        assert cli.config_hash(a) != cli.config_hash(c)
        assert len(cli.config_hash(a)) == 16
        assert set(cli.config_hash(a)) <= set("0123456789abcdef")

    def test_as_dict_round_trips_through_parser(self):
        config = cli.config_from_dict(tiny_raw())
        again = cli.config_from_dict(config.as_dict())
        assert again == config


class TestSimilarityArtifacts:
    def test_run_succeeds(self, tiny_run):
        code, _, _ = tiny_run
        assert code == 0

    def test_header_contents(self, tiny_run):
        _, config, out = tiny_run
        with open(out / "run_header.json") as fh:
            header = json.load(fh)
        assert header["artifact_version"] == cli.ARTIFACT_VERSION
        assert header["config_hash"] == cli.config_hash(config)
        reparsed = cli.config_from_dict(header["config"])
        assert cli.config_hash(reparsed) == header["config_hash"]

    def test_fits_schema_and_values(self, tiny_run):
        _, config, out = tiny_run
        with open(out / "fits.json") as fh:
            fits = json.load(fh)
        pe = fits["profile_errors"]
        for key in ("e1_final", "e2_final", "e1_sqrt_s_final", "e2_s_p1_final",
                    "e1_slope", "e2_slope"):
            assert key in pe
        assert pe["e1_final"] > 0
        mem = fits["membership"]
        assert mem["all_inside"] is True
        assert mem["min_margin"] > 0
        assert set(mem["final_margins"]) == set(diagnostics._BOUND_NAMES)
        # a one-unit window is too short for the inner fit, which must be
        # reported as skipped rather than silently absent
        assert fits["inner"] is None
        assert "inner_skipped" in fits
        res = fits["mode_residuals"]
        assert res is not None
        assert "achieved_exponent_q2_null" in res
        assert set(res["constants"])

    def test_trajectory_csv_parses(self, tiny_run):
        _, _, out = tiny_run
        table = np.genfromtxt(out / "trajectory.csv", delimiter=",", names=True)
        assert "s" in table.dtype.names
        s = np.atleast_1d(table["s"])
        assert len(s) >= 20
        assert np.all(np.diff(s) > 0)
        assert s[0] == pytest.approx(25.0)

    def test_rerun_is_byte_identical(self, tiny_run):
        _, config, out = tiny_run
        names = ("run_header.json", "fits.json", "trajectory.csv")
        before = {n: (out / n).read_bytes() for n in names}
        assert cli.run(config) == 0
        after = {n: (out / n).read_bytes() for n in names}
        assert before == after


class TestVerifyMode:
    def test_restricted_battery(self, tmp_path):
        raw = {
            "mode": "verify",
            "params": {"p": 3, "n_dim": 2},
            "output_dir": str(tmp_path / "v"),
        }
        config = cli.config_from_dict(raw)
        assert cli.run(config) == 0
        with open(tmp_path / "v" / "verify_report.json") as fh:
            payload = json.load(fh)
        assert payload["all_pass"] is True
        names = [r["name"] for r in payload["reports"]]
        assert len(names) == len(set(names))
        assert all("p3" in n for n in names)
        assert 5 < len(names) < 42

    def test_verify_subcommand_without_config_runs_full_battery(self, tmp_path):
        out = tmp_path / "battery"
        code = cli.main(["verify", "--out", str(out)])
        assert code == 0
        with open(out / "verify_report.json") as fh:
            payload = json.load(fh)
        assert payload["all_pass"] is True
        assert len(payload["reports"]) == 42


class TestSweepMode:
    def _sweep_raw(self, out, ps, ns, workers=2):
        raw = tiny_raw(output_dir=str(out), workers=workers)
        raw["mode"] = "sweep"
        raw["sweep"] = {"ps": ps, "ns": ns, "N_2d": 65}
        return raw

    def test_single_child_sweep(self, tmp_path):
        config = cli.config_from_dict(
            self._sweep_raw(tmp_path / "sw", ps=[2], ns=[1], workers=1)
        )
        assert cli.run(config) == 0
        with open(tmp_path / "sw" / "sweep_summary.json") as fh:
            summary = json.load(fh)
        assert summary["all_ok"] is True
        assert summary["count"] == 1
        row = summary["runs"][0]
        assert row["status"] == "ok"
        assert row["p"] == 2 and row["n_dim"] == 1
        assert row["min_margin"] > 0
        assert isinstance(row["e1_slope"], float)
        # the short window skips the inner fit, so those cells are null
        assert row["w1bar_limit"] is None
        child = tmp_path / "sw" / "p2_n1"
        assert (child / "fits.json").exists()
        assert (child / "run_header.json").exists()
        lines = (tmp_path / "sw" / "sweep_table.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("p,n_dim,status,")

    def test_empty_sweep_is_ok(self, tmp_path):
        config = cli.config_from_dict(
            self._sweep_raw(tmp_path / "sw0", ps=[], ns=[1])
        )
        assert cli.run(config) == 0
        with open(tmp_path / "sw0" / "sweep_summary.json") as fh:
            summary = json.load(fh)
        assert summary == {"all_ok": True, "count": 0, "runs": []}
        lines = (tmp_path / "sw0" / "sweep_table.csv").read_text().splitlines()
        assert len(lines) == 1

    @pytest.mark.skipif(
        multiprocessing.get_start_method() != "fork",
        reason="failure injection relies on fork inheriting the patched module",
    )
    def test_partial_failure_marks_row_and_exits_nonzero(self, tmp_path, monkeypatch):
        monkeypatch.setattr(cli, "_run_similarity", _boom_on_p3)
        config = cli.config_from_dict(
            self._sweep_raw(tmp_path / "swf", ps=[2, 3], ns=[1])
        )
        assert cli.run(config) == 1
        with open(tmp_path / "swf" / "sweep_summary.json") as fh:
            summary = json.load(fh)
        assert summary["all_ok"] is False
        by_p = {row["p"]: row for row in summary["runs"]}
        assert by_p[2]["status"] == "ok"
        assert by_p[3]["status"] == "failed"
        assert by_p[3]["error"] == "injected failure for p=3"
        table = (tmp_path / "swf" / "sweep_table.csv").read_text()
        assert "failed" in table


class TestRuntimeFailure:
    def test_error_json_written_and_exit_4(self, tmp_path, monkeypatch):
        def explode(config):
            raise ValueError("synthetic runtime failure")

        monkeypatch.setattr(cli, "_run_similarity", explode)
        config = cli.config_from_dict(tiny_raw(output_dir=str(tmp_path / "boom")))
        assert cli.run(config) == 4
        with open(tmp_path / "boom" / "error.json") as fh:
            err = json.load(fh)
        assert err == {"error": "ValueError", "message": "synthetic runtime failure"}
        # the header is written before dispatch, so a failed run is still
        # attributable to its configuration
        assert (tmp_path / "boom" / "run_header.json").exists()


class TestPhysicalMode:
    def _fake_trajectory(self, grid, probes):
        axis = grid.axis()
        bump = np.exp(-((axis / 0.1) ** 2))
        snaps = [
            (0.9, 2.0 + 1.0 * bump, np.full_like(axis, 1.0)),
            (0.95, 2.0 + 1.0 * bump, np.full_like(axis, 1.0)),
            (0.975, 2.0 + 2.0 * bump, np.full_like(axis, 1.0)),
        ]
        ptraj = diagnostics.PhysicalTrajectory(
            grid=grid, probes=np.asarray(probes), T_estimate=1.0, status="ok",
        )
        for k, t in enumerate((0.5, 0.7, 0.9)):
            ptraj.add(diagnostics.PhysicalRecord(
                t=t, dt=0.01, max_u=2.0 + k, argmax=(8,),
                probe_u1=np.full(len(probes), 2.0),
                probe_u2=np.full(len(probes), 1.0),
            ))
        ptraj.snapshots = snaps
        return ptraj

    def test_plumbing_with_stubbed_evolution(self, tmp_path, monkeypatch):
        grid = spectral.Grid(1, 0.5, 17)
        holder = {}

        def fake_run(u0, pr, **kwargs):
            ptraj = self._fake_trajectory(grid, kwargs["probes"])
            holder["ptraj"] = ptraj
            return ptraj, 1.0

        monkeypatch.setattr(cli._solver, "run_physical_blowup", fake_run)
        raw = {
            "mode": "simulate-physical",
            "params": {"p": 2, "n_dim": 1},
            "grid": {"L": 0.5, "N": 17},
            "solver": {"s0": 3.0},
            "physical": {"probe_log_radii": [1.0, 2.0]},
            "output_dir": str(tmp_path / "phys"),
        }
        config = cli.config_from_dict(raw)
        assert cli.run(config) == 0

        with open(tmp_path / "phys" / "fits.json") as fh:
            fits = json.load(fh)
        assert fits["T_estimate"] == 1.0
        assert fits["T_target"] == pytest.approx(math.exp(-3.0))
        assert fits["status"] == "ok"
        assert fits["records"] == 3 and fits["snapshots"] == 3

        outer, inner = fits["probes"]
        # at x = e^{-1} the bump has died off, so the dyadic samples agree
        assert outer["log_radius"] == 1.0
        assert outer["converged"] is True
        assert outer["u1_star"] == pytest.approx(2.0, rel=1e-5)
        assert outer["ratio_u2_lnx_over_u1"] == pytest.approx(0.5, rel=1e-5)
        assert outer["ratio_u1_over_prediction"] == pytest.approx(
            outer["u1_star"] / outer["u_star_prediction"], rel=1e-12
        )
        # at x = e^{-2} the last two dyadic samples differ by the bump growth
        assert inner["converged"] is False
        assert "not Cauchy-converged" in inner["reason"]

        lines = (tmp_path / "phys" / "trajectory.csv").read_text().splitlines()
        assert lines[0] == ("t,dt,max_u,argmax_0,"
                            "probe0_u1,probe0_u2,probe1_u1,probe1_u2")
        assert len(lines) == 4

    def test_u_star_prediction_spot_values(self):
        pr = params_mod.make_params(2, 1)
        x = math.exp(-10.0)
        assert cli._u_star_prediction(pr, x) == pytest.approx(
            160.0 * math.exp(20.0), rel=1e-12
        )
        pr3 = params_mod.make_params(3, 1)
        expect = (4.0 * x * x / (24.0 * 10.0)) ** -0.5
        assert cli._u_star_prediction(pr3, x) == pytest.approx(expect, rel=1e-12)

    def test_physical_csv_thins_long_runs(self, tmp_path):
        grid = spectral.Grid(1, 0.5, 17)
        ptraj = diagnostics.PhysicalTrajectory(
            grid=grid, probes=np.array([]), T_estimate=None,
        )
        for k in range(12003):
            ptraj.add(diagnostics.PhysicalRecord(
                t=float(k), dt=1.0, max_u=1.0, argmax=(0,),
                probe_u1=np.array([]), probe_u2=np.array([]),
            ))
        path = tmp_path / "long.csv"
        cli._write_physical_csv(ptraj, str(path))
        lines = path.read_text().splitlines()
        # stride 3 keeps indices 0, 3, ..., 12000, plus the appended last row
        assert len(lines) == 1 + 4001 + 1
        assert lines[-1].split(",")[0] == cli._fmt(12002.0)


class TestMainEntry(unittest.TestCase):
    def _main_with_stderr(self, argv):
        err = io.StringIO()
        with redirect_stderr(err):
            code = cli.main(argv)
        return code, err.getvalue()

    def test_subcommand_is_required(self):
        with self.assertRaises(SystemExit):
            cli.main([])

    def test_simulate_requires_config(self):
        code, err = self._main_with_stderr(["simulate"])
        self.assertEqual(code, 2)
        payload = json.loads(err)
        self.assertEqual(payload["error"], "ConfigError")
        self.assertIn("--config is required", payload["messages"][0])

    def test_missing_config_file_exits_2(self):
        code, err = self._main_with_stderr(
            ["simulate", "--config", "/nonexistent/run.yaml"]
        )
        self.assertEqual(code, 2)
        self.assertEqual(json.loads(err)["error"], "OSError")

    def test_subcommand_mode_mismatch_exits_2(self):
        import tempfile

        import yaml

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.yaml")
            with open(path, "w") as fh:
                yaml.safe_dump({"mode": "verify", "params": {"p": 2}}, fh)
            code, err = self._main_with_stderr(["simulate", "--config", path])
        self.assertEqual(code, 2)
        payload = json.loads(err)
        self.assertIn("requires mode in", payload["messages"][0])

    def test_invalid_config_lists_messages(self):
        import tempfile

        import yaml

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.yaml")
            with open(path, "w") as fh:
                yaml.safe_dump({"mode": "simulate-similarity",
                                "params": {"p": 99}}, fh)
            code, err = self._main_with_stderr(["simulate", "--config", path])
        self.assertEqual(code, 2)
        payload = json.loads(err)
        self.assertGreater(len(payload["messages"]), 1)


def test_module_entry_point_help():
    proc = subprocess.run(
        [sys.executable, "-m", "blowlab.cli", "--help"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    for word in ("simulate", "verify", "sweep"):
        assert word in proc.stdout
