import json
import shutil
import subprocess
import sys

import pytest

from projlab import cli


def write_config(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def read_single_report(out_dir):
    reports = sorted(out_dir.glob("report_*.json"))
    reports = [p for p in reports if not p.name.endswith(".meta.json")]
    assert len(reports) == 1
    return json.loads(reports[0].read_text())


def test_help_lists_all_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for name in cli.EXPERIMENT_NAMES:
        assert name in out
    assert len(cli.EXPERIMENT_NAMES) == 9


def test_bad_height_is_reported_by_key(tmp_path, capsys):
    cfg = write_config(tmp_path, "[manifold]\nc = 1.5\n")
    rc = cli.main(["manifold-info", "--config", cfg])
    assert rc == 2
    err = capsys.readouterr().err
    assert "manifold.c" in err
    assert "outside the admissible range (-1,0) u (0,1)" in err


def test_all_config_errors_collected(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "[run]\nbogus = 1\nseed = -4\n"
        "[manifold]\nn = 2\nwhat = x\n"
        "[project-dim]\nquantile = 1.5\nmystery = 7\n"
        "[leftovers]\na = 1\n",
    )
    rc = cli.main(["project-dim", "--config", cfg])
    assert rc == 2
    err = capsys.readouterr().err
    for frag in (
        "run.bogus",
        "run.seed",
        "manifold.n",
        "manifold.what",
        "project-dim.quantile",
        "project-dim.mystery",
        "leftovers: unknown section",
    ):
        assert frag in err


def test_missing_config_file(tmp_path, capsys):
    rc = cli.main(["manifold-info", "--config", str(tmp_path / "nope.ini")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_no_experiment_selected(capsys):
    rc = cli.main([])
    assert rc == 2
    assert "no experiment selected" in capsys.readouterr().err


def test_window_and_band_and_constant_translation(tmp_path):
    cfg = write_config(
        tmp_path,
        "[run]\nexperiments = project-dim\n"
        "[project-dim]\nk_min = 5\nk_max = 9\nband_lo = 0.7\nband_hi = 0.9\n"
        "[config-bound]\ns = 0.5\nc_const = 2.0\n",
    )
    parsed = cli.parse_config(cfg)
    assert parsed.params["project-dim"]["k_window"] == (5, 9)
    assert parsed.params["project-dim"]["band"] == (0.7, 0.9)
    assert parsed.params["config-bound"]["C"] == 2.0
    assert "c_const" not in parsed.params["config-bound"]


def test_short_window_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, "[project-dim]\nk_min = 5\nk_max = 7\n")
    rc = cli.main(["project-dim", "--config", cfg])
    assert rc == 2
    assert "shorter than 4 scales" in capsys.readouterr().err


def test_product_axes_grammar(tmp_path):
    cfg = write_config(
        tmp_path,
        "[fractal]\nplacement = product-axes\n"
        "axes = cantor:2:0.25:6 point uniform:128\n"
        "rotate_to_x = 0.5\n",
    )
    parsed = cli.parse_config(cfg)
    assert parsed.fractal["axes"] == [("cantor", 2, 0.25, 6), ("point",), ("uniform", 128)]
    assert parsed.fractal["rotate_to_x"] == [0.5]


def test_bad_axis_spec_and_misplaced_rotation(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "[fractal]\nplacement = product-axes\naxes = cantor:2 uniform:x\n",
    )
    rc = cli.main(["project-dim", "--config", cfg])
    assert rc == 2
    err = capsys.readouterr().err
    assert "bad axis spec 'cantor:2'" in err
    assert "bad axis spec 'uniform:x'" in err

    cfg2 = write_config(tmp_path, "[fractal]\nplacement = axis\nrotate_to_x = 0.5\n")
    rc = cli.main(["project-dim", "--config", cfg2])
    assert rc == 2
    assert "only valid with product-axes" in capsys.readouterr().err


def test_defaults_without_config_sections(tmp_path):
    cfg = write_config(tmp_path, "[run]\nexperiments = manifold-info\n")
    parsed = cli.parse_config(cfg)
    assert parsed.manifold == {"kind": "cap", "n": 3, "c": 0.6}
    assert parsed.fractal is None
    assert parsed.seed == 0
    assert parsed.threads == 1
    assert parsed.out_dir == "reports"


def test_run_writes_report_and_exits_zero(tmp_path, capsys):
    cfg = write_config(tmp_path, "[manifold-info]\nsamples = 300\n")
    out = tmp_path / "out"
    rc = cli.main(["manifold-info", "--config", cfg, "--out-dir", str(out), "--seed", "3"])
    assert rc == 0
    assert "manifold-info: pass" in capsys.readouterr().out
    rep = read_single_report(out)
    assert rep["verdict"] == "pass"
    assert rep["seed"] == 3
    assert rep["config"]["run"]["out_dir"] == str(out)
    assert sorted(out.glob("raw_*.csv")) and sorted(out.glob("*.meta.json"))


def test_two_experiments_two_reports(tmp_path):
    cfg = write_config(
        tmp_path,
        "[run]\nexperiments = manifold-info cinematic-check\nseed = 5\n"
        f"out_dir = {tmp_path / 'multi'}\n"
        "[manifold-info]\nsamples = 200\n"
        "[cinematic-check]\npairs = 150\ngrid = 33\n",
    )
    rc = cli.main(["--config", cfg])
    assert rc == 0
    names = {p.name.split("_")[1] for p in (tmp_path / "multi").glob("report_*.json")
             if not p.name.endswith(".meta.json")}
    assert names == {"manifold-info", "cinematic-check"}


def test_failing_tolerance_gives_exit_one(tmp_path, capsys):
    cfg = write_config(
        tmp_path, "[cinematic-check]\npairs = 150\ngrid = 33\nhi_lo_max = 1.001\n"
    )
    out = tmp_path / "out"
    rc = cli.main(["cinematic-check", "--config", cfg, "--out-dir", str(out)])
    assert rc == 1
    assert "cinematic-check: fail" in capsys.readouterr().out
    rep = read_single_report(out)
    assert rep["verdict"] == "fail"
    assert rep["status"] == "complete"


def test_runtime_error_gives_exit_two_and_aborted_report(tmp_path, capsys):
    cfg = write_config(
        tmp_path, "[config-bound]\ns = 0.5\ns_prime = 0.5\nc_const = 0.25\n"
    )
    out = tmp_path / "out"
    rc = cli.main(["config-bound", "--config", cfg, "--out-dir", str(out)])
    assert rc == 2
    assert "runtime error" in capsys.readouterr().err
    rep = read_single_report(out)
    assert rep["status"] == "aborted"
    assert rep["verdict"] == "fail"
    assert "ConfigurationError" in rep["error"]


def test_flag_overrides_positional(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(
        ["cinematic-check", "--experiment", "manifold-info", "--out-dir", str(out)]
    )
    assert rc == 0
    rep = read_single_report(out)
    assert rep["experiment"] == "manifold-info"
    capsys.readouterr()


def test_negative_seed_flag_rejected(capsys):
    rc = cli.main(["manifold-info", "--seed", "-1"])
    assert rc == 2
    assert "--seed" in capsys.readouterr().err


def test_bad_threads_rejected(tmp_path, capsys):
    rc = cli.main(["manifold-info", "--threads", "0"])
    assert rc == 2
    assert "--threads" in capsys.readouterr().err
    cfg = write_config(tmp_path, "[run]\nthreads = 0\n")
    rc = cli.main(["manifold-info", "--config", cfg])
    assert rc == 2
    assert "run.threads" in capsys.readouterr().err


def test_identical_runs_are_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path, "[manifold-info]\nsamples = 250\n")
    out = tmp_path / "out"
    outs = []
    for _ in range(2):
        rc = cli.main(["manifold-info", "--config", cfg, "--out-dir", str(out), "--seed", "7"])
        assert rc == 0
        reports = [p for p in out.glob("report_*.json") if not p.name.endswith(".meta.json")]
        outs.append((reports[0].read_bytes(), (out / "raw_manifold-info.csv").read_bytes()))
        shutil.rmtree(out)
    capsys.readouterr()
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == outs[1][1]


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "projlab.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "projlab" in proc.stdout
