import subprocess
import sys

from asyncadmm import load_instance
from asyncadmm.cli import main

QUAD_ARGS = ["--problem", "quadratic", "--topology", "ring", "--n-nodes", "6",
             "--rho", "20", "--max-iter", "500", "--tol", "1e-8",
             "--threshold", "1e-4", "--replicates", "2", "--seed", "7"]
LOC_ARGS = ["--problem", "localization", "--n-nodes", "10", "--radius", "0.6",
            "--anchors", "5", "--noise-sigma", "0.01", "--rho", "10",
            "--max-iter", "60", "--tol", "1e-10", "--threshold", "1e-2",
            "--replicates", "1", "--seed", "3"]


def test_exit_codes(capsys, tmp_path):
    assert main(["run", "--preset", "warp"] ) == 1
    assert "configuration error" in capsys.readouterr().err
    missing = tmp_path / "nope.cfg"
    assert main(["run", "--config", str(missing)]) == 2
    assert "error" in capsys.readouterr().err


def test_run_prints_replicate_lines(capsys, tmp_path):
    out = tmp_path / "exp"
    assert main(["run", *QUAD_ARGS, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "replicate 0: converged" in text
    assert "replicate 1: converged" in text
    assert f"outputs written to {out}" in text
    assert (out / "summary.csv").exists()
    assert (out / "config.txt").exists()


def test_flag_beats_config_file(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("max_iter = 50\nseed = 1\n")
    out = tmp_path / "exp"
    assert main(["run", "--problem", "quadratic", "--topology", "ring",
                 "--n-nodes", "6", "--rho", "20", "--replicates", "1",
                 "--config", str(cfg), "--max-iter", "60",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    lines = (out / "config.txt").read_text().splitlines()
    assert "max_iter = 60" in lines
    assert "seed = 1" in lines


def test_cli_runs_are_byte_identical(capsys, tmp_path):
    assert main(["run", *LOC_ARGS, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", *LOC_ARGS, "--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    for name in ("trace_0000.csv", "summary.csv", "estimates.csv",
                 "feasibility.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_warns_when_rho_is_infeasible(capsys):
    assert main(["run", *LOC_ARGS]) == 0
    text = capsys.readouterr().out
    assert "warning: penalty parameter below the guaranteed-descent bound" in text
    assert "running anyway" in text
    assert "aggregate nrmse over 1 replicates" in text


def test_sync_check_preset_reports_reference_match(capsys):
    assert main(["run", "--preset", "sync-check", "--replicates", "1",
                 "--max-iter", "50"]) == 0
    text = capsys.readouterr().out
    assert "matches reference: yes" in text
    assert "engine matches reference on all replicates: yes" in text


def test_check_params_reports_margins(capsys):
    assert main(["check-params", "--problem", "quadratic", "--topology",
                 "ring", "--n-nodes", "6", "--rho", "auto", "--seed", "0"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("node  rho")
    assert "descent conditions hold at every node" in text

    assert main(["check-params", *LOC_ARGS]) == 0
    text = capsys.readouterr().out
    assert "descent conditions FAIL at nodes" in text


def test_gen_graph_validation(capsys, tmp_path):
    assert main(["gen-graph", *LOC_ARGS]) == 1
    assert "--out" in capsys.readouterr().err
    assert main(["gen-graph", *QUAD_ARGS, "--out", str(tmp_path / "g.txt")]) == 1
    assert "localization" in capsys.readouterr().err


def test_gen_graph_writes_loadable_instance(capsys, tmp_path):
    path = tmp_path / "instance.txt"
    assert main(["gen-graph", *LOC_ARGS, "--out", str(path)]) == 0
    text = capsys.readouterr().out
    assert "wrote instance: 10 nodes" in text
    problem = load_instance(path)
    assert problem.n_nodes == 10
    assert problem.anchor_ids == (0, 1, 2, 3, 4)


def test_sweep_prints_one_line_per_value(capsys, tmp_path):
    root = tmp_path / "sweep"
    assert main(["sweep", "--param", "rho", "--values", "10,40",
                 "--problem", "quadratic", "--topology", "ring",
                 "--n-nodes", "6", "--max-iter", "40", "--threshold", "1e-4",
                 "--replicates", "1", "--seed", "7", "--out", str(root)]) == 0
    text = capsys.readouterr().out
    assert "rho = 10:" in text
    assert "rho = 40:" in text
    assert (root / "sweep.csv").exists()
    assert (root / "rho-10" / "summary.csv").exists()


def test_sweep_rejects_unknown_parameter(capsys):
    assert main(["sweep", "--param", "seed", "--values", "1,2",
                 "--problem", "quadratic", "--topology", "ring",
                 "--n-nodes", "6", "--replicates", "1"]) == 1
    assert "configuration error" in capsys.readouterr().err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "asyncadmm", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "run" in proc.stdout and "sweep" in proc.stdout
