import csv
import json

import numpy as np
import pytest

from gfgn import cli
from gfgn import tensor as T
from gfgn.data import Dataset, write_dataset
from gfgn.graph import load_edges

FAST = ["--epochs", "30", "--patience", "10", "--heads", "2", "--hidden", "4", "--splits", "2", "--repeats", "2"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"n": 100, "C": 3, "D": 6, "homophilous_dims": [0, 1, 2], "p_in": 0.1,
                                "p_out": 0.01, "seed": 4}))
    assert cli.main(["synth", "--spec", str(spec), "--out", str(root / "ds")]) == 0
    return root / "ds"


@pytest.fixture
def k2_dir(tmp_path):
    d = Dataset(load_edges([(0, 1)], 2), np.eye(2), np.array([0, 1]), 2, "k2")
    write_dataset(d, tmp_path / "k2", row_normalize_on_load=False)
    return tmp_path / "k2"


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    return json.loads(lines[0][len("# config: "):]), list(csv.DictReader(lines[1:]))


def test_train_outputs_and_determinism(synth_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["train", "--dataset", str(synth_dir), "--model", "gcn", *FAST]
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    out = json.loads(a.read_text())
    assert len(out["runs"]) == 4 and out["config"]["model"] == "gcn"
    assert out["config"]["epochs"] == 30 and out["dataset"]["content_hash"]


def test_lambda_zero_pair_equals_mlp(synth_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    cli.main(["train", "--dataset", str(synth_dir), "--model", "gfgn-pair", "--lambda", "0", *FAST, "--out", str(a)])
    cli.main(["train", "--dataset", str(synth_dir), "--model", "mlp", *FAST, "--out", str(b)])
    assert json.loads(a.read_text())["runs"] == json.loads(b.read_text())["runs"]


def test_train_defaults_mirror_protocol():
    args = cli.build_parser().parse_args(["train", "--dataset", "x"])
    cfg = cli._config(args)
    assert (cfg.splits, cfg.repeats, cfg.epochs, cfg.patience, cfg.heads, cfg.units_per_head) == (10, 10, 1000, 100, 8, 8)


def test_exit_codes(synth_dir, tmp_path, monkeypatch):
    monkeypatch.delenv("GFGN_DATA", raising=False)
    assert cli.main(["train", "--dataset", str(tmp_path / "nope")]) == cli.EXIT_DATA
    assert cli.main(["train", "--dataset", str(synth_dir), "--dropout", "1.5"]) == cli.EXIT_CONFIG
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "features.tsv").write_text("1\n")
    assert cli.main(["homophily", "--dataset", str(tmp_path / "bad")]) == cli.EXIT_DATA
    with pytest.raises(SystemExit) as info:
        cli.main(["train"])
    assert info.value.code == cli.EXIT_CONFIG
    assert cli.main(["noise-sweep", "--dataset", str(synth_dir), "--ratios", "x"]) == cli.EXIT_CONFIG


def test_dataset_resolved_under_env(synth_dir, monkeypatch, capsys):
    monkeypatch.setenv("GFGN_DATA", str(synth_dir.parent))
    assert cli.main(["homophily", "--dataset", "ds"]) == 0
    assert 0.0 <= float(capsys.readouterr().out) <= 1.0


def test_noise_sweep_csv(synth_dir, tmp_path):
    out = tmp_path / "n.csv"
    args = ["noise-sweep", "--dataset", str(synth_dir), "--ratios", "0,0.5", "--models", "mlp,gcn",
            *FAST[:-4], "--splits", "1", "--repeats", "1", "--out", str(out)]
    assert cli.main(args) == 0
    config, rows = read_csv(out)
    assert len(rows) == 4 and config["ratios"] == [0.0, 0.5]
    first = out.read_bytes()
    cli.main(args)
    assert out.read_bytes() == first
    # ratio 0 row equals a plain train run
    tj = tmp_path / "t.json"
    cli.main(["train", "--dataset", str(synth_dir), "--model", "gcn", *FAST[:-4], "--splits", "1",
              "--repeats", "1", "--out", str(tj)])
    assert float(rows[1]["mean"]) == json.loads(tj.read_text())["mean"]


def test_dump_scores(synth_dir, tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["dump-scores", "--dataset", str(synth_dir), "--model", "gfgn-graph", "--lambda", "2",
                     *FAST, "--out", str(out)]) == 0
    config, rows = read_csv(out)
    assert len(rows) == 2 * 4 and config["layer"] == 1
    vals = [float(v) for r in rows for k, v in r.items() if k.startswith("score")]
    assert vals and all(0.0 <= v <= 2.0 for v in vals)
    assert cli.main(["dump-scores", "--dataset", str(synth_dir), "--model", "gcn"]) == cli.EXIT_CONFIG


def test_spectral_k2(k2_dir, tmp_path):
    out = tmp_path / "sp.csv"
    assert cli.main(["spectral", "--dataset", str(k2_dir), "--s-grid", "0,0.3,1", "--k", "3", "--out", str(out)]) == 0
    config, rows = read_csv(out)
    assert config["eigen_residual"] < 1e-8
    for r in rows:
        lam, s = float(r["eigenvalue"]), float(r["s"])
        assert float(r["coefficient"]) == pytest.approx((1 - s * lam) ** 3, abs=1e-12)
        assert float(r["filter_residual"]) < 1e-8
        if s == 0:
            assert float(r["coefficient"]) == 1.0
    assert any(abs(float(r["eigenvalue"]) - 2) < 1e-12 for r in rows)


def test_gradcheck_pass_and_negative_control(monkeypatch, capsys):
    assert cli.main(["gradcheck", "--model", "mlp"]) == 0
    assert cli.main(["gradcheck", "--model", "gfgn-pair", "--n", "6", "--seed", "0"]) == 0

    def broken_sigmoid(a):
        out = 1.0 / (1.0 + np.exp(-a.data))
        return T._result(out, "sigmoid", (a,), lambda g: (g * out,))

    monkeypatch.setattr(T, "sigmoid", broken_sigmoid)
    capsys.readouterr()
    assert cli.main(["gradcheck", "--model", "gfgn-graph"]) == cli.EXIT_CHECK
    printed = capsys.readouterr().out
    assert "FAIL" in printed and "worst layer" in printed


def test_synth_and_homophily(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"n": 40, "C": 2, "D": 3, "homophilous_dims": [0], "p_in": 1.0, "p_out": 0.0}))
    assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / "d")]) == 0
    capsys.readouterr()
    assert cli.main(["homophily", "--dataset", str(tmp_path / "d")]) == 0
    assert capsys.readouterr().out.strip() == "1.0"
    spec.write_text(json.dumps({"n": 40, "p_in": 0.1, "p_out": 0.5}))
    assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / "e")]) == cli.EXIT_CONFIG


def test_atomic_write_leaves_no_temp(tmp_path):
    cli.atomic_write(tmp_path / "x.txt", "hello")
    cli.atomic_write(tmp_path / "x.txt", "again")
    assert (tmp_path / "x.txt").read_text() == "again"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_parse_floats():
    assert cli.parse_floats("0:1:0.2") == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert cli.parse_floats("0.1,0.5") == [0.1, 0.5]
    with pytest.raises(T.ConfigError):
        cli.parse_floats("1:0:-1")
