import json

import numpy as np
import pytest

import oracles
from tsda import cli
from tsda import tensor as T
from tsda.data import DomainDataset, read_dataset, write_dataset
from tsda.twostream import load_checkpoint


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def moons(tmp_path, capsys):
    s, t = tmp_path / "s.tsda", tmp_path / "t.tsda"
    code, out, _ = run(capsys, "gen", "--kind", "moons", "--n", 120, "--rot", 30, "--seed", 7, "--out-src", s, "--out-tgt", t)
    assert code == 0
    return s, t


TRAIN_FAST = ("--epochs-pretrain", 3, "--epochs-joint", 3, "--arch", "d8,r,d8,r")


def test_gen_writes_conforming_files(moons, tmp_path):
    s, t = moons
    src, tgt = read_dataset(s), read_dataset(t)
    assert len(src) == len(tgt) == 120 and src.fully_labeled and tgt.fully_labeled
    manifest = json.loads((tmp_path / "s.tsda.manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["params"]["rot"] == 30.0


def test_gen_identity_shift(tmp_path, capsys):
    s, t = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "gen", "--rot", 0, "--shift=0,0", "--scale", 1, "--out-src", s, "--out-tgt", t)[0] == 0
    assert read_dataset(s).equals(read_dataset(t))


def test_gen_missing_output_is_a_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen", "--out-tgt", str(tmp_path / "t")])
    assert exc.value.code == 2


def test_seed_from_environment_and_flag_precedence(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TSDA_SEED", "11")
    _, out, _ = run(capsys, "gen", "--n", 8, "--out-src", tmp_path / "a", "--out-tgt", tmp_path / "b")
    assert json.loads(out)["seed"] == 11
    _, out, _ = run(capsys, "gen", "--n", 8, "--seed", 3, "--out-src", tmp_path / "a", "--out-tgt", tmp_path / "b")
    assert json.loads(out)["seed"] == 3


def test_train_produces_checkpoint_report_and_manifest(moons, tmp_path, capsys):
    s, t = moons
    ck, rep = tmp_path / "m.ckpt", tmp_path / "r.csv"
    code, out, err = run(capsys, "train", "--source", s, "--target", t, "--target-labeled", 10,
                         "--pattern", "+--", *TRAIN_FAST, "--out", ck, "--report", rep)
    assert code == 0, err
    manifest = json.loads(out)
    assert manifest["pattern"] == "+--" and manifest["config"]["lambda_w"] == 1.0
    assert manifest["config"]["coupling_form"] == "exponential"
    pair, task = load_checkpoint(ck)
    assert task == "multiclass_hinge" and pair.pattern == "+--"
    assert rep.read_text().count("\n") == 1 + 3 + 3


def test_train_is_byte_reproducible(moons, tmp_path, capsys):
    s, t = moons
    outs = []
    for k in range(2):
        ck, rep = tmp_path / f"m{k}.ckpt", tmp_path / f"r{k}.csv"
        run(capsys, "train", "--source", s, "--target", t, "--target-labeled", 5, *TRAIN_FAST, "--out", ck, "--report", rep)
        outs.append((ck.read_bytes(), rep.read_bytes()))
    assert outs[0] == outs[1]


def test_pure_source_baseline_flags(moons, tmp_path, capsys):
    s, t = moons
    code, _, err = run(capsys, "train", "--source", s, "--target", t, "--lambda-u", 0, "--lambda-w", 0,
                       "--target-labeled", 0, *TRAIN_FAST, "--out", tmp_path / "m", "--report", tmp_path / "r")
    assert code == 0, err
    rows = (tmp_path / "r").read_text().splitlines()[1:]
    assert all(r.split(",")[3] == "" for r in rows)


def test_unreadable_dataset_exits_2_with_path(tmp_path, capsys):
    missing = tmp_path / "nope.tsda"
    code, out, err = run(capsys, "train", "--source", missing, "--target", missing, "--out", tmp_path / "m", "--report", tmp_path / "r")
    assert code == 2 and str(missing) in err and out == ""


def test_pattern_length_mismatch(moons, tmp_path, capsys):
    s, t = moons
    code, _, err = run(capsys, "train", "--source", s, "--target", t, "--pattern", "++---", *TRAIN_FAST,
                       "--out", tmp_path / "m", "--report", tmp_path / "r")
    assert code == 2 and "3 parameterized layers" in err


def test_select_reports_every_pattern_and_is_reproducible(moons, tmp_path, capsys):
    s, t = moons
    args = ("select", "--source", s, "--target", t, "--target-labeled", 0, "--form", "l2",
            "--arch", "d8,r,d8,r,d8,r,d8,r", "--epochs-pretrain", 2, "--epochs-joint", 2)
    code, out, err = run(capsys, *args, "--out", tmp_path / "a.csv", "--workers", 1)
    assert code == 0, err
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert len(rows) == 1 + 16
    assert out.splitlines()[-1] == rows[1].split(",")[1]
    run(capsys, *args, "--out", tmp_path / "b.csv", "--workers", 2)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_select_zero_shift_picks_all_shared(tmp_path, capsys):
    s, t = tmp_path / "s", tmp_path / "t"
    run(capsys, "gen", "--n", 100, "--rot", 0, "--shift=0,0", "--out-src", s, "--out-tgt", t)
    code, out, _ = run(capsys, "select", "--source", s, "--target", t, "--target-labeled", 0, "--form", "l2",
                       "--arch", "d8,r,d8,r", "--epochs-pretrain", 2, "--epochs-joint", 2, "--out", tmp_path / "sel.csv")
    assert code == 0 and out.splitlines()[-1] == "---"


def test_eval_metrics_and_pr_curve(moons, tmp_path, capsys):
    s, t = moons
    ck = tmp_path / "m.ckpt"
    run(capsys, "train", "--source", s, "--target", t, "--target-labeled", 10, *TRAIN_FAST, "--out", ck, "--report", tmp_path / "r")
    code, out, err = run(capsys, "eval", "--checkpoint", ck, "--data", t, "--source-data", s,
                         "--out", tmp_path / "m.csv", "--pr-out", tmp_path / "pr.csv")
    assert code == 0, err
    metrics = {tuple(r.split(",")[:2]): float(r.split(",")[2]) for r in (tmp_path / "m.csv").read_text().splitlines()[1:]}
    assert set(metrics) >= {("target", "accuracy"), ("target", "average_precision"), ("source", "accuracy")}
    # the curve file agrees with an independent AP computation on the same scores
    from tsda.twostream import predict

    pair, _ = load_checkpoint(ck)
    tgt = read_dataset(t)
    sc = predict(pair, "target", tgt.features)
    margin = sc[:, 1] - sc[:, 0]
    if len(np.unique(margin)) == len(margin):
        assert metrics[("target", "average_precision")] == pytest.approx(
            oracles.average_precision(list(margin), list(tgt.labels == 1)), abs=1e-12)
    rows = (tmp_path / "pr.csv").read_text().splitlines()
    assert rows[0] == "threshold,precision,recall"
    recall = [float(r.split(",")[2]) for r in rows[1:]]
    assert recall == sorted(recall) and recall[-1] == 1.0


def test_eval_perfect_model_scores_one(tmp_path, capsys):
    # linearly separable data; AdaDelta starts with tiny steps, so give it ~700 updates
    rng = np.random.default_rng(0)
    x = rng.normal(size=(60, 2))
    y = (x[:, 0] > 0).astype(np.int64)
    x[:, 0] += np.where(y == 1, 2.0, -2.0)
    ds = DomainDataset("classification", 2, x, y)
    write_dataset(ds, tmp_path / "d")
    run(capsys, "train", "--source", tmp_path / "d", "--target", tmp_path / "d", "--arch", "", "--pattern", "-",
        "--epochs-pretrain", 100, "--batch-source", 8, "--epochs-joint", 0, "--out", tmp_path / "m", "--report", tmp_path / "r")
    code, out, _ = run(capsys, "eval", "--checkpoint", tmp_path / "m", "--data", tmp_path / "d")
    assert code == 0 and "target,accuracy,1.0" in out


def test_eval_pcp_on_classifier_is_an_error(moons, tmp_path, capsys):
    s, t = moons
    run(capsys, "train", "--source", s, "--target", t, *TRAIN_FAST, "--out", tmp_path / "m", "--report", tmp_path / "r")
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "m", "--data", t, "--pcp")
    assert code == 1 and "landmark regression" in err


def test_eval_pcp_on_landmark_regressor(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    y = np.concatenate([x[:, :2] * 4, x[:, 1:] * 4], axis=1)
    write_dataset(DomainDataset("regression", 4, x, y), tmp_path / "d")
    code, _, err = run(capsys, "train", "--source", tmp_path / "d", "--target", tmp_path / "d", "--task-loss", "squared_error",
                       "--arch", "d8,r", "--epochs-pretrain", 5, "--epochs-joint", 1, "--out", tmp_path / "m", "--report", tmp_path / "r")
    assert code == 0, err
    code, out, err = run(capsys, "eval", "--checkpoint", tmp_path / "m", "--data", tmp_path / "d", "--pcp", "--radius", 3)
    assert code == 0, err
    assert "target,pcp_landmark_1," in out and "target,pcp_mean," in out


def test_arch_grammar():
    specs = cli.parse_arch("c4k3,r,p,f,d16,r", (1, 8, 8), 3)
    assert [s.kind for s in specs] == ["conv2d", "relu", "maxpool2d", "flatten", "dense", "relu", "dense"]
    assert specs[4] == T.dense(36, 16) and specs[-1] == T.dense(16, 3)
    assert cli.parse_arch("c2k3", (1, 5, 5), 2)[-2:] == [T.flatten(), T.dense(18, 2)]
    with pytest.raises(ValueError):
        cli.parse_arch("d4", (1, 5, 5), 2)
    with pytest.raises(ValueError):
        cli.parse_arch("q7", (2,), 2)


def test_figures_are_opt_in(moons, tmp_path, capsys):
    s, t = moons
    run(capsys, "train", "--source", s, "--target", t, *TRAIN_FAST, "--out", tmp_path / "m", "--report", tmp_path / "r")
    assert not list(tmp_path.glob("*.png"))
    run(capsys, "train", "--source", s, "--target", t, *TRAIN_FAST, "--out", tmp_path / "m", "--report", tmp_path / "r",
        "--fig-dir", tmp_path / "figs")
    assert (tmp_path / "figs" / "loss_trace.png").stat().st_size > 0


def test_outputs_into_missing_directories(moons, tmp_path, capsys):
    s, t = moons
    deep = tmp_path / "a" / "b"
    code, _, err = run(capsys, "train", "--source", s, "--target", t, *TRAIN_FAST, "--out", deep / "m.ckpt",
                       "--report", deep / "r.csv")
    assert code == 0, err
    assert (deep / "m.ckpt").exists() and (deep / "m.ckpt.manifest.json").exists()
