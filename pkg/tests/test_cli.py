from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from padfusion import cli
from padfusion import diagnostics as D
from padfusion.diagnostics import PairRecord
from padfusion.formats import Pixmap, read_padt, write_padt, write_pixmap
from padfusion.fusion import pad_block_param_count
from padfusion.network import synth_dataset, to_pairs
from padfusion.tensor import Tensor


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def self_pair_manifest(tmp_path):
    rgb = np.random.default_rng(0).uniform(size=(3, 16, 16))
    p = PairRecord(Tensor(rgb), D.to_grayscale(rgb), None, "self")
    return D.write_manifest([p], tmp_path / "data")


def synth_manifest(tmp_path, n=2, size=32, seed=1):
    pairs = to_pairs(synth_dataset(n, size, 3, seed=seed))
    return D.write_manifest(pairs, tmp_path / "data"), pairs


def strip_timestamp(text):
    data = json.loads(text)
    data.pop("generated_at", None)
    return data


# -- analyze


@pytest.mark.filterwarnings("ignore:constant sample")
def test_analyze_self_pair_has_zero_appd(tmp_path):
    m = self_pair_manifest(tmp_path)
    assert cli.main(["analyze", "--manifest", str(m), "--out", str(tmp_path / "out")]) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["appd"]["mean"] == 0.0 and rep["n_pairs"] == 1
    assert rep["config"]["eps"] == 1e-8 and "generated_at" in rep
    for name in ("rsd_map.padt", "rad_map.padt", "appd_map.padt", "radial_profile.csv"):
        assert (tmp_path / "out" / name).exists()


def test_analyze_matches_library(tmp_path):
    m, pairs = synth_manifest(tmp_path)
    assert cli.main(["analyze", "--manifest", str(m), "--out", str(tmp_path / "out")]) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    lib = D.analyze(pairs)
    sc = lib.scalars()
    for key in ("rsd", "rad", "appd"):
        assert rep[key]["mean"] == sc[key][0] and rep[key]["variance"] == sc[key][1]
    assert rep["appd"]["all"]["skewness"] == lib.all_stats.skewness
    assert read_padt(tmp_path / "out" / "appd_map.padt").data.tobytes() == lib.appd_map.data.tobytes()


def test_analyze_exit_codes(tmp_path, capsys):
    m = self_pair_manifest(tmp_path)
    assert cli.main(["analyze", "--manifest", str(m), "--out", str(tmp_path / "o"), "--eps", "0"]) == 4
    assert cli.main(["analyze", "--manifest", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 2
    assert "missing.csv" in capsys.readouterr().err
    assert cli.main(["analyze", "--manifest", str(m), "--out", str(tmp_path / "o"), "--bogus"]) == 4
    # spatial mismatch inside a pair
    d = tmp_path / "bad"
    d.mkdir()
    write_padt(d / "a.padt", np.zeros((3, 8, 8)))
    write_padt(d / "b.padt", np.zeros((1, 8, 6)))
    (d / "m.csv").write_text("id,rgb,sar,mask\nx,a.padt,b.padt,\n")
    assert cli.main(["analyze", "--manifest", str(d / "m.csv"), "--out", str(tmp_path / "o")]) == 3
    (d / "junk.padt").write_bytes(b"garbage")
    (d / "j.csv").write_text("id,rgb,sar,mask\nx,junk.padt,b.padt,\n")
    assert cli.main(["analyze", "--manifest", str(d / "j.csv"), "--out", str(tmp_path / "o")]) == 2


def test_analyze_reads_pixmaps(tmp_path):
    rng = np.random.default_rng(2)
    d = tmp_path / "pm"
    d.mkdir()
    write_pixmap(d / "rgb.ppm", Pixmap(rng.integers(0, 256, size=(3, 8, 8)), 255))
    write_pixmap(d / "sar.pgm", Pixmap(rng.integers(0, 65536, size=(1, 8, 8)), 65535))
    (d / "m.csv").write_text("id,rgb,sar\np,rgb.ppm,sar.pgm\n")
    assert cli.main(["analyze", "--manifest", str(d / "m.csv"), "--out", str(tmp_path / "o")]) == 0


def test_analyze_outputs_are_deterministic(tmp_path):
    m, _ = synth_manifest(tmp_path, n=3)
    outs = []
    for k, threads in enumerate(("1", "1", "4")):
        o = tmp_path / f"o{k}"
        assert cli.main(["analyze", "--manifest", str(m), "--out", str(o), "--threads", threads]) == 0
        outs.append(o)
    a, b, c = (strip_timestamp((o / "report.json").read_text()) for o in outs)
    assert a == b
    c["config"]["threads"] = 1
    assert a == c
    for name in ("radial_profile.csv", "appd_map.padt"):
        assert (outs[0] / name).read_bytes() == (outs[2] / name).read_bytes()


# -- sweep, masked, enl, fuse


def test_sweep_writes_trajectory(tmp_path):
    m, pairs = synth_manifest(tmp_path, size=64)
    assert cli.main(["sweep", "--manifest", str(m), "--out", str(tmp_path / "s"), "--rates", "1,0.5,0.25"]) == 0
    rows = read_csv(tmp_path / "s" / "sweep.csv")
    assert [r["factor"] for r in rows] == ["1", "2", "4"]
    assert float(rows[0]["appd_mean"]) == D.analyze(pairs).scalars()["appd"][0]
    assert cli.main(["sweep", "--manifest", str(m), "--out", str(tmp_path / "s"), "--rates", "1,2"]) == 4


def test_masked_command(tmp_path):
    rng = np.random.default_rng(3)
    rgb = rng.uniform(size=(3, 16, 16))
    sar = D.to_grayscale(rgb).data.copy()
    sar[..., 10:] = rng.uniform(size=(1, 16, 6))
    mask = np.ones((1, 16, 16))
    mask[..., 10:] = 0
    m = D.write_manifest([PairRecord(Tensor(rgb), Tensor(sar), Tensor(mask), "m")], tmp_path / "d")
    assert cli.main(["masked", "--manifest", str(m), "--out", str(tmp_path / "o")]) == 0
    row = read_csv(tmp_path / "o" / "masked.csv")[0]
    assert float(row["excluded_appd"]) < 1e-6 < float(row["included_appd"])


def test_enl_command(tmp_path):
    img = np.random.default_rng(4).gamma(4.0, 0.25, size=(1, 64, 64))
    write_padt(tmp_path / "s.padt", img)
    write_padt(tmp_path / "c.padt", img)
    args = ["enl", "--image", str(tmp_path / "s.padt"), "--out", str(tmp_path / "o")]
    assert cli.main(args + ["--compare", str(tmp_path / "c.padt")]) == 0
    rep = json.loads((tmp_path / "o" / "enl.json").read_text())
    assert 3.0 < rep["interior_mean"] < 5.0 and "spearman" in rep
    assert cli.main(args + ["--window", "4"]) == 4


def test_fuse_command(tmp_path):
    rng = np.random.default_rng(5)
    write_padt(tmp_path / "r.padt", rng.uniform(size=(4, 16, 16)))
    write_padt(tmp_path / "s.padt", rng.uniform(size=(1, 16, 16)))
    args = ["fuse", "--rgb", str(tmp_path / "r.padt"), "--sar", str(tmp_path / "s.padt"), "--out", str(tmp_path / "o")]
    assert cli.main(args) == 0
    rep = json.loads((tmp_path / "o" / "fuse.json").read_text())
    assert rep["shape"] == [4, 16, 16] and rep["param_count"] == pad_block_param_count(4, 2, 1)
    write_padt(tmp_path / "s.padt", rng.uniform(size=(1, 8, 16)))
    assert cli.main(args) == 3


# -- gradcheck


def test_gradcheck_command(tmp_path):
    out = tmp_path / "g"
    assert cli.main(["gradcheck", "--ops", "sigmoid,fd,asf_forward", "--seeds", "3", "--out", str(out)]) == 0
    rep = json.loads((out / "gradcheck.json").read_text())
    assert [r["op"] for r in rep["results"]] == ["sigmoid", "fd", "asf_forward"]
    assert all(r["passed"] for r in rep["results"])
    assert cli.main(["gradcheck", "--ops", "nope"]) == 4


# -- train / eval


def train_args(out, *extra):
    return ["train", "--out", str(out), "--iters", "3", "--n", "2", "--c0", "4", "--eval-n", "2", *extra]


def test_train_writes_artifacts_and_eval_reproduces(tmp_path, capsys):
    run = tmp_path / "run"
    assert cli.main(train_args(run)) == 0
    for name in ("config.json", "train_log.csv", "checkpoint.padc", "metrics.json"):
        assert (run / name).exists()
    log = read_csv(run / "train_log.csv")
    assert list(log[0]) == ["iter", "seg", "aux", "amp", "total"] and len(log) == 3
    metrics = json.loads((run / "metrics.json").read_text())
    assert metrics["mIoU"] == metrics["heldout"]["mIoU"]
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.padc"), "--out", str(tmp_path / "e")]) == 0
    ev = json.loads((tmp_path / "e" / "eval.json").read_text())
    assert ev["pixel_accuracy"] == metrics["train"]["pixel_accuracy"]
    assert ev["mIoU"] == metrics["train"]["mIoU"]


def test_train_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(train_args(a)) == 0 and cli.main(train_args(b)) == 0
    for name in ("train_log.csv", "checkpoint.padc"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    for name in ("config.json", "metrics.json"):
        assert strip_timestamp((a / name).read_text()) == strip_timestamp((b / name).read_text())


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("PAD_SEED", "7")
    assert cli.main(train_args(tmp_path / "env")) == 0
    assert json.loads((tmp_path / "env" / "config.json").read_text())["model"]["seed"] == 7
    assert cli.main(train_args(tmp_path / "flag", "--seed", "9")) == 0
    assert json.loads((tmp_path / "flag" / "config.json").read_text())["model"]["seed"] == 9
    monkeypatch.setenv("PAD_SEED", "x")
    assert cli.main(train_args(tmp_path / "bad")) == 4
    monkeypatch.delenv("PAD_SEED")
    assert cli.resolve_seed(None) == 42


def test_train_add_arm_and_flag_errors(tmp_path):
    assert cli.main(train_args(tmp_path / "add", "--fusion", "add")) == 0
    assert json.loads((tmp_path / "add" / "metrics.json").read_text())["fusion"] == "add"
    assert cli.main(train_args(tmp_path / "x", "--fusion", "mix")) == 4
    assert cli.main(train_args(tmp_path / "x", "--size", "48")) == 4
    assert cli.main(["train", "--iters", "0", "--out", str(tmp_path / "x")]) == 4


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_numeric_abort_exit_code(tmp_path):
    assert cli.main(train_args(tmp_path / "nan", "--lr", "1e305")) == 5


def test_eval_missing_checkpoint(tmp_path):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.padc")]) == 2


# -- bench


def test_bench_rows_and_counts(tmp_path):
    out = tmp_path / "b"
    assert cli.main(["bench", "--sizes", "32", "--repeats", "1", "--c0", "4", "--out", str(out)]) == 0
    rows = read_csv(out / "bench.csv")
    assert [(r["op"], r["size"]) for r in rows] == [("rfft2", "32"), ("pad_block_forward", "32"), ("full_forward", "32")]
    assert int(rows[1]["param_count"]) == pad_block_param_count(8)


def test_bench_rfft2_scaling_is_bounded(tmp_path):
    out = tmp_path / "b"
    assert cli.main(["bench", "--sizes", "128,256", "--repeats", "7", "--channels", "4", "--out", str(out)]) == 0
    t = {int(r["size"]): float(r["median_seconds"]) for r in read_csv(out / "bench.csv") if r["op"] == "rfft2"}
    assert t[256] / t[128] < 8.0
