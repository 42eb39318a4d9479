import json
import time

import pytest

from tightprop import cli


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(args):
    return cli.main(args)


SMOKE_BLOBS = {
    "experiment": "train", "seed": 0,
    "params": {"dataset": {"source": "blobs", "train_size": 100, "test_size": 50, "n_classes": 2,
                           "dim": 4, "separation": 0.3, "noise": 0.1},
               "hidden": [8], "runs": [{"id": "nominal", "kappa": 0.0, "eps_train": 0.1},
                                       {"id": "robust", "kappa": 0.5, "eps_train": 0.1}],
               "epochs": 2, "batch_size": 20, "evaluate": {"eps_test": [0.1], "steps": 5}},
}


def test_smoke_correctness_is_fast(tmp_path):
    t0 = time.perf_counter()
    assert run(["correctness", "--config", "smoke_correctness", "--trials", "1",
                "--out", str(tmp_path), "--no-plots"]) == 0
    assert time.perf_counter() - t0 < 5
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["files"]) == {"gamma_vs_n.csv", "gamma_vs_n_summary.csv"}
    assert manifest["seed"] == 0 and len(manifest["config_sha256"]) == 64
    assert manifest["config"]["params"]["trials"] == 1


def test_malformed_json_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"experiment": ')
    assert run(["correctness", "--config", str(path)]) == 2
    assert "bad.json" in capsys.readouterr().err


def test_empty_sweep_is_schema_error(tmp_path, capsys):
    doc = {"experiment": "tightness", "params": {"axis": "k", "values": [], "eps_values": [0.1], "trials": 1}}
    assert run(["tightness", "--config", write(tmp_path, doc)]) == 2
    assert "/params/values" in capsys.readouterr().err


def test_unknown_field_is_schema_error(tmp_path, capsys):
    doc = {"experiment": "tightness", "params": {"axis": "k", "values": [2], "eps_values": [0.1],
                                                 "trials": 1, "typo": 3}}
    assert run(["tightness", "--config", write(tmp_path, doc)]) == 2


def test_config_for_other_command(tmp_path):
    assert run(["tightness", "--config", "smoke_correctness", "--out", str(tmp_path)]) == 2


def test_dry_run_prints_resolved_config(tmp_path, capsys):
    assert run(["train", "--config", write(tmp_path, SMOKE_BLOBS), "--seed", "7", "--dry-run"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["seed"] == 7 and doc["params"]["seeds"] == [7]
    assert not (tmp_path / "tightprop-runs").exists()


def test_train_evaluate_and_refusal(tmp_path, capsys):
    cfg = write(tmp_path, SMOKE_BLOBS)
    out = tmp_path / "run"
    assert run(["train", "--config", cfg, "--out", str(out), "--no-plots"]) == 0
    assert (out / "checkpoints" / "robust_s0.json").exists()
    header = (out / "scatter.csv").read_text().splitlines()[1]
    assert header.startswith("model_id,eps_train,kappa,accuracy,robustness_0.1,mean_robustness")
    assert run(["train", "--config", cfg, "--out", str(out)]) == 3
    assert "--force" in capsys.readouterr().err
    assert run(["train", "--config", cfg, "--out", str(out), "--force", "--no-plots"]) == 0

    ev = {"experiment": "evaluate", "params": {"dataset": SMOKE_BLOBS["params"]["dataset"],
                                              "checkpoint_dir": str(out),
                                              "pgd": {"eps_test": [0.1], "steps": 5}}}
    assert run(["evaluate", "--config", write(tmp_path, ev, "ev.json"), "--out", str(tmp_path / "ev"),
                "--no-plots"]) == 0
    a = (out / "scatter.csv").read_text()
    b = (tmp_path / "ev" / "scatter.csv").read_text()
    assert a == b


def test_divergence_exit_4(tmp_path):
    doc = json.loads(json.dumps(SMOKE_BLOBS))
    doc["params"]["dataset"]["separation"] = 1e155
    doc["params"]["learning_rate"] = 1.0
    assert run(["train", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 4


def test_stats_prop2_and_k0(tmp_path, capsys):
    assert run(["stats", "--config", "smoke_stats", "--out", str(tmp_path / "s"), "--no-plots"]) == 0
    assert "prop2: variance = 1\n" in capsys.readouterr().out
    doc = {"experiment": "stats", "params": {"prop3": {"k_values": [0, 4], "draws": 10}}}
    assert run(["stats", "--config", write(tmp_path, doc), "--out", str(tmp_path / "t")]) == 2


def test_reruns_are_byte_identical_and_thread_independent(tmp_path):
    for name, threads in (("a", "1"), ("b", "2")):
        assert run(["tightness", "--config", "smoke_tightness", "--out", str(tmp_path / name),
                    "--threads", threads, "--no-plots"]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())["files"]
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())["files"]
    assert ma == mb


def test_polytope_command(tmp_path):
    doc = {"experiment": "polytope", "params": {"n": 4, "hidden": [6], "eps_values": [0.1],
                                                "nets_per_eps": 1, "n_samples": 20}}
    assert run(["polytope", "--config", write(tmp_path, doc), "--out", str(tmp_path / "p"),
                "--no-plots"]) == 0
    lines = (tmp_path / "p" / "polytope.csv").read_text().splitlines()
    assert lines[1] == "eps,net,method,corner,x,y" and len(lines) == 2 + 4 + 21


def test_figures_written_when_matplotlib_present(tmp_path):
    pytest.importorskip("matplotlib")
    assert run(["tightness", "--config", "smoke_tightness", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "tightness_vs_depth.png").stat().st_size > 0


def test_bundled_configs_validate():
    for name in ("fig2a", "fig2b", "fig3", "fig3_n", "fig4_depth", "polytope", "stats",
                 "mnist_small", "blobs_small", "smoke_correctness", "smoke_tightness", "smoke_stats"):
        cli.load_config(name)
