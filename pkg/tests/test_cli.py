import json
import os
import subprocess
import sys

import pytest

from beamlattice import io
from beamlattice.cli import main


def run(*args):
    return main([str(a) for a in args])


def jsonl(path):
    return [json.loads(line) for line in open(path)]


@pytest.fixture
def corpus(tmp_path):
    out = tmp_path / "data"
    assert run("gen", "--out", out, "--seed", 7, "--num-utts", 6, "--min-frames", 30,
               "--max-frames", 70, "--vocab", 4, "--style", "planted", "--table-order", 2) == 0
    return out


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("gen", "--out", tmp_path / name, "--seed", 7, "--num-utts", 4,
                   "--min-frames", 50, "--max-frames", 100, "--vocab", 5, "--style", "random") == 0
    for i in range(4):
        a = (tmp_path / "a" / "grids" / f"utt{i:04d}.ctcg").read_bytes()
        assert a == (tmp_path / "b" / "grids" / f"utt{i:04d}.ctcg").read_bytes()
    rows = jsonl(tmp_path / "a" / "manifest.jsonl")
    assert all(50 <= r["frames"] <= 100 for r in rows)
    assert not (tmp_path / "a" / "refs.jsonl").exists()


def test_gen_blank_heavy_writes_vad_inputs(tmp_path):
    out = tmp_path / "bh"
    assert run("gen", "--out", out, "--style", "blank_heavy", "--num-utts", 1, "--min-frames", 400,
               "--max-frames", 400, "--silence", "200:300") == 0
    (utt,) = io.read_manifest(out / "manifest.jsonl")
    assert (utt.grid.logp[200:300, -1] == 0.0).all()
    assert json.loads((out / "nodemap.json").read_text()) == {"speech": [0, 1], "noise": [2, 3]}
    assert jsonl(out / "vad_manifest.jsonl")[0]["vad"] == "vad/utt0000.vadg"


def test_decode_batch_sizes_agree_and_eval(corpus, capsys):
    m, sc = corpus / "manifest.jsonl", f"table:{corpus / 'scorer.json'}"
    assert run("decode", "--manifest", m, "--scorer", sc, "--batch-size", 1, "--out",
               corpus / "r1.jsonl") == 0
    assert run("decode", "--manifest", m, "--scorer", sc, "--batch-size", 16, "--out",
               corpus / "r16.jsonl", "--report", corpus / "rep.json") == 0
    assert (corpus / "r1.jsonl").read_bytes() == (corpus / "r16.jsonl").read_bytes()
    assert [r["id"] for r in jsonl(corpus / "r1.jsonl")] == [f"utt{i:04d}" for i in range(6)]
    rep = json.loads((corpus / "rep.json").read_text())
    assert rep["xrt"] > 0 and rep["utterances"] == 6
    capsys.readouterr()
    assert run("eval", "--refs", corpus / "refs.jsonl", "--hyps", corpus / "r1.jsonl") == 0
    report = json.loads(capsys.readouterr().out.splitlines()[0])
    assert report["utterances"] == 6 and report["cer"] >= 0


def test_decode_jobs_keep_order(corpus):
    m = corpus / "manifest.jsonl"
    assert run("decode", "--manifest", m, "--batch-size", 2, "--out", corpus / "a.jsonl") == 0
    assert run("decode", "--manifest", m, "--batch-size", 2, "--jobs", 2, "--out",
               corpus / "b.jsonl") == 0
    assert (corpus / "a.jsonl").read_bytes() == (corpus / "b.jsonl").read_bytes()


def test_restricted_window_counts_fewer_frames(corpus):
    m = corpus / "manifest.jsonl"
    run("decode", "--manifest", m, "--m2", 20, "--out", corpus / "x", "--report", corpus / "r20")
    run("decode", "--manifest", m, "--m2", "inf", "--out", corpus / "y", "--report", corpus / "ri")
    r20 = json.loads((corpus / "r20").read_text())["ctc_frames_evaluated"]
    rinf = json.loads((corpus / "ri").read_text())["ctc_frames_evaluated"]
    assert r20 < rinf


def test_decode_errors(tmp_path, corpus, capsys):
    assert run("decode", "--manifest", tmp_path / "missing.jsonl") == 2
    bad = tmp_path / "bad.ctcg"
    bad.write_bytes(b"nope")
    io.write_jsonl(tmp_path / "m.jsonl", [io.manifest_row("x", str(bad), 3)])
    assert run("decode", "--manifest", tmp_path / "m.jsonl") == 2
    assert run("decode", "--manifest", corpus / "manifest.jsonl", "--scorer", "loop:9:0.9") == 2
    assert "error:" in capsys.readouterr().err


def test_segment_hard(tmp_path, capsys):
    out = tmp_path / "seg.jsonl"
    assert run("segment", "--mode", "hard", "--frames", 4000, "--out", out) == 0
    rows = jsonl(out)
    assert [(r["start_frame"], r["end_frame"]) for r in rows] == [(0, 2000), (2000, 4000)]
    assert rows[0]["source"] == "hard"
    assert capsys.readouterr().out.strip() == "segments=2 mean=20.00 std=0.00"


def test_segment_vad(tmp_path):
    data = tmp_path / "bh"
    run("gen", "--out", data, "--style", "blank_heavy", "--num-utts", 1, "--min-frames", 1000,
        "--max-frames", 1000, "--silence", "400:525", "--shift", 40)
    out = tmp_path / "seg.jsonl"
    assert run("segment", "--mode", "vad", "--manifest", data / "vad_manifest.jsonl",
               "--nodemap", data / "nodemap.json", "--min", 15, "--max", 20, "--out", out) == 0
    edges = [(r["start_frame"], r["end_frame"]) for r in jsonl(out)]
    assert any(abs(e - 400) <= 5 for _, e in edges)
    assert any(abs(s - 525) <= 5 for s, _ in edges)
    assert run("segment", "--mode", "vad", "--manifest", data / "vad_manifest.jsonl") == 2


def test_oracle_command(capsys):
    assert run("oracle", "--trials", 5) == 0
    assert capsys.readouterr().out.count("PASS") == 3
    assert run("oracle", "--trials", 5, "--mutate", "window-start") == 1
    assert "seed=" in capsys.readouterr().out
    assert run("oracle", "--trials", 0) == 0
    assert "vacuous" in capsys.readouterr().err
    assert run("oracle", "--max-frames", 13) == 2


def test_bench(corpus, capsys):
    out = corpus / "bench.jsonl"
    assert run("bench", "--manifest", corpus / "manifest.jsonl", "--batch-sizes", "1,4",
               "--m2-values", "inf,20", "--eos-modes", "both,baseline", "--repeat", 2,
               "--out", out) == 0
    cells = jsonl(out)
    assert len(cells) == 8
    assert {c["batch_size"] for c in cells} == {1, 4}
    text = capsys.readouterr().out
    assert "speedup batch 4 vs 1" in text and "ctc_frames m2=20.0 / m2=inf" in text


def test_module_entry_point_and_log_env(tmp_path):
    env = dict(os.environ, BEAMLATTICE_LOG="info")
    proc = subprocess.run([sys.executable, "-m", "beamlattice", "gen", "--out", str(tmp_path / "g"),
                           "--num-utts", "1"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "wrote 1 utterances" in proc.stderr
