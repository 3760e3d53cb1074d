import json
import math

import numpy as np
import pytest

from nfard.cli import main, parse_weights
from nfard.metrics import load_neuron_matrix
from nfard.model import MlpModel, save_model
from nfard.zoo import load_manifest


@pytest.fixture(scope="module")
def paths(zoo_dir):
    def model(mid):
        return str(zoo_dir / "models" / f"{mid}.json")

    return {
        "victim": model("mlp-s.victim"),
        "refs": [model(f"ref.mlp-s.task-A.0{j}") for j in range(5)],
        "negative": model("ref.mlp-s.task-A.07"),
        "data": str(zoo_dir / "data" / "task-A.csv"),
        "zoo": str(zoo_dir),
        "model": model,
    }


def run_detect(paths, suspect, refs, *extra):
    return main(["detect", "--victim", paths["victim"], "--suspect", suspect,
                 "--refs", *refs, "--data", paths["data"], *extra])


def test_self_detection_exit_code_and_defaults(paths, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run_detect(paths, paths["victim"], paths["refs"][:2], "--report", str(out)) == 2
    assert "verdict: positive" in capsys.readouterr().out
    payload = json.loads(out.read_text())
    assert payload["config"]["alpha"] == 0.85
    assert payload["config"]["weights"] == {"eu": 1.0, "ac": 120.0}
    assert payload["config"]["mode"] == "blackbox"
    assert payload["report"]["verdict"] is True
    assert all(m["suspect_distance"] == 0.0 for m in payload["report"]["metrics"].values())


def test_negative_exit_code_and_whitebox_echo(paths, tmp_path):
    out = tmp_path / "r.json"
    assert run_detect(paths, paths["negative"], paths["refs"], "--mode", "white", "--report", str(out)) == 0
    payload = json.loads(out.read_text())
    assert payload["config"]["alpha"] == 3.5 and payload["report"]["verdict"] is False
    assert payload["report"]["layer_used"] == 1


def test_error_paths_exit_one(paths, tmp_path, capsys):
    assert run_detect(paths, str(tmp_path / "missing.json"), paths["refs"]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert run_detect(paths, str(tmp_path / "bad.json"), paths["refs"]) == 1
    assert run_detect(paths, paths["negative"], paths["refs"][:1]) == 1
    assert run_detect(paths, paths["negative"], paths["refs"], "--weights", "eu") == 1
    assert run_detect(paths, paths["negative"], paths["refs"], "--n", "5000") == 1
    assert main(["detect", "--victim", paths["victim"]]) == 1
    assert main(["bogus"]) == 1
    assert "error:" in capsys.readouterr().err


def test_config_file_precedence(paths, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# decision settings\nalpha = 2.0\nweights = eu=2,ac=50\nn = 300\n")
    out = tmp_path / "r.json"
    args = ["--config", str(cfg)]
    assert main(args + ["detect", "--victim", paths["victim"], "--suspect", paths["negative"],
                        "--refs", *paths["refs"], "--data", paths["data"], "--report", str(out)]) == 0
    conf = json.loads(out.read_text())["config"]
    assert (conf["alpha"], conf["weights"], conf["suite_size"]) == (2.0, {"eu": 2.0, "ac": 50.0}, 300)
    main(args + ["detect", "--victim", paths["victim"], "--suspect", paths["negative"],
                 "--refs", *paths["refs"], "--data", paths["data"], "--report", str(out), "--alpha", "1.0"])
    conf = json.loads(out.read_text())["config"]
    assert conf["alpha"] == 1.0 and conf["suite_size"] == 300
    # required flags may come from the file too
    cfg.write_text(f"victim = {paths['victim']}\ndata = {paths['data']}\nrefs = {' '.join(paths['refs'])}\n")
    assert main(args + ["detect", "--suspect", paths["victim"]]) == 2
    cfg.write_text("alpha 2\n")
    assert main(args + ["detect", "--suspect", paths["victim"]]) == 1


def test_parse_weights():
    assert parse_weights("eu=1, ac=120") == {"eu": 1.0, "ac": 120.0}


def test_evaluate_outputs(paths, tmp_path, capsys):
    js, txt = tmp_path / "e.json", tmp_path / "e.txt"
    assert main(["evaluate", paths["zoo"], "--mode", "white", "--json", str(js), "--text", str(txt)]) == 0
    summary = json.loads(js.read_text())
    assert summary["mode"] == "whitebox" and summary["tp"] + summary["fn"] == 22
    assert "F1=" in txt.read_text() and txt.read_text() in capsys.readouterr().out


def test_roc_and_sweep_csv(paths, tmp_path, capsys):
    roc = tmp_path / "roc.csv"
    assert main(["roc", paths["zoo"], "--alphas=-1e6,0.85,1e6", "--out", str(roc)]) == 0
    lines = roc.read_text().splitlines()
    assert lines[0] == "alpha,tpr,fpr" and len(lines) == 4
    assert lines[1].endswith(",1.0,1.0") and lines[3].endswith(",0.0,0.0")
    assert capsys.readouterr().out.startswith("AUC=")
    assert main(["roc", paths["zoo"], "--alphas", "1.0"]) == 1
    sweep = tmp_path / "s.csv"
    assert main(["sweep", paths["zoo"], "--sizes", "100,2000", "--modes", "white", "--out", str(sweep)]) == 0
    lines = sweep.read_text().splitlines()
    assert lines[0] == "n,mode,f1" and [l.split(",")[0] for l in lines[1:]] == ["100", "2000"]
    assert main(["sweep", paths["zoo"], "--sizes", "2001", "--modes", "white"]) == 1
    assert main(["sweep", paths["zoo"], "--modes", "grey"]) == 1


def test_extract_round_trip_and_shapes(paths, tmp_path):
    out = tmp_path / "h.csv"
    assert main(["extract", paths["victim"], paths["data"], "--out", str(out)]) == 0
    h = load_neuron_matrix(out)
    assert h.values.shape == (2000, 8) and h.layer_index == 3
    assert main(["extract", paths["victim"], paths["data"], "--layer", "second-last", "--out", str(out)]) == 0
    assert load_neuron_matrix(out).values.shape == (2000, 16)
    assert main(["extract", paths["victim"], paths["data"], "--layer", "middle", "--out", str(out)]) == 1
    uniform = MlpModel([20, 8], [np.zeros((8, 20))], [np.zeros(8)])
    save_model(uniform, tmp_path / "u.json")
    assert main(["extract", str(tmp_path / "u.json"), paths["data"], "--blackbox", "--out", str(out)]) == 0
    h = load_neuron_matrix(out)
    assert np.allclose(h.values, math.log(1 / 8), atol=1e-15) and h.source == "blackbox"


def test_zoo_build_seed_env_and_bad_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("NFARD_SEED", "5")
    assert main(["zoo-build", str(tmp_path / "z"), "--scale", "0.05", "--quiet"]) == 0
    assert load_manifest(tmp_path / "z").master_seed == 5
    assert "victims=2 surrogates=22 references=40" in capsys.readouterr().out
    assert len(list((tmp_path / "z" / "models").glob("*.json"))) == 64
    (tmp_path / "file").write_text("x")
    assert main(["zoo-build", str(tmp_path / "file"), "--quiet"]) == 1
    assert main(["zoo-build", str(tmp_path / "y"), "--scale", "0", "--quiet"]) == 1
