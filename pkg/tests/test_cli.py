import dataclasses
import io
import json
import subprocess
import sys
import wave
from pathlib import Path

import numpy as np
import pytest

from oracles import naive_token_count
from scoretrack import cli
from scoretrack.features import AudioParams
from scoretrack.oltw import OltwParams
from scoretrack.score import build_database, dump_score
from scoretrack.sim import generate_random_score
from scoretrack.tracker import TrackerConfig

GOLDEN = Path(__file__).parent / "golden"


def run(argv, capsys, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = cli.main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scores = root / "scores"
    scores.mkdir()
    for s in range(3):
        dump_score(generate_random_score(300, seed=s), scores / f"s{s}.json")
    assert cli.main(["build-index", "--scores", str(scores), "--out", str(root / "idx.bin")]) == 0
    return root


def write_script(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_build_index_counts(workspace, capsys):
    code, out, _ = run(["build-index", "--scores", workspace / "scores", "--out", workspace / "again.bin"], capsys)
    db = build_database(workspace / "scores")
    n = sum(naive_token_count(db[s]) for s in db.ids)
    assert code == 0 and out == f"3 scores, {n} tokens\n"
    assert (workspace / "again.bin").read_bytes() == (workspace / "idx.bin").read_bytes()


def test_build_index_empty_dir(tmp_path, capsys):
    code, _, err = run(["build-index", "--scores", tmp_path, "--out", tmp_path / "x.bin"], capsys)
    assert code == 1 and "error" in err


def test_build_index_bad_score(tmp_path, capsys):
    (tmp_path / "a.json").write_text('{"id": "a", "notes": [{"pitch": 200, "onset_beats": 0, "duration_beats": 1}]}')
    assert run(["build-index", "--scores", tmp_path, "--out", tmp_path / "x.bin"], capsys)[0] == 1


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["track", "--bogus"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2


def simulate(workspace, tmp, script, capsys, name="p"):
    s = write_script(tmp / f"{name}.json", script)
    files = {k: tmp / f"{name}.{k}.jsonl" for k in ("events", "truth", "jumps")}
    code, _, err = run(["simulate", "--index", workspace / "idx.bin", "--script", s,
                        "--events", files["events"], "--truth", files["truth"], "--jumps", files["jumps"]], capsys)
    assert code == 0, err
    return files


def test_simulate_identity_matches_onsets(workspace, tmp_path, capsys):
    script = {"score_id": "random-000001", "base_tempo_bpm": 120, "jitter_std": 0, "p_drop": 0, "p_insert": 0}
    f = simulate(workspace, tmp_path, script, capsys)
    ev = [json.loads(x) for x in f["events"].read_text().splitlines()]
    sc = generate_random_score(300, seed=1)
    assert [e["t"] for e in ev] == [o * 0.5 for o in np.unique(sc.onsets)]
    assert f["jumps"].read_text() == ""


def test_simulate_deterministic_and_jumps(workspace, tmp_path, capsys):
    script = {"score_id": "random-000002", "base_tempo_bpm": 100, "seed": 9, "jumps": [[16, 0]], "end_beat": 32}
    a = simulate(workspace, tmp_path, script, capsys, "a")
    b = simulate(workspace, tmp_path, script, capsys, "b")
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()
    truth = [json.loads(x) for x in a["truth"].read_text().splitlines()]
    beats = [p["score_beat"] for p in truth]
    k = next(i for i in range(1, len(beats)) if beats[i] < beats[i - 1])
    assert max(beats[:k]) < 16 and beats[k] < 1 and truth[k]["segment"] == 1
    assert len(a["jumps"].read_text().splitlines()) == 1


def test_simulate_unknown_score(workspace, tmp_path, capsys):
    s = write_script(tmp_path / "s.json", {"score_id": "nope", "base_tempo_bpm": 120})
    code, _, err = run(["simulate", "--index", workspace / "idx.bin", "--script", s,
                        "--events", tmp_path / "e", "--truth", tmp_path / "t"], capsys)
    assert code == 1 and "nope" in err


def test_track_identity_and_stdin_equivalence(workspace, tmp_path, capsys, monkeypatch):
    script = {"score_id": "random-000000", "base_tempo_bpm": 120, "seed": 1, "end_beat": 40}
    f = simulate(workspace, tmp_path, script, capsys)
    out_file = tmp_path / "out.jsonl"
    code, _, _ = run(["track", "--index", workspace / "idx.bin", "--events", f["events"], "--out", out_file], capsys)
    assert code == 0
    recs = [json.loads(x) for x in out_file.read_text().splitlines()]
    assert recs and all(r["score_id"] == "random-000000" for r in recs)
    assert set(recs[0]) == {"t_perf", "score_id", "beat", "confidence", "agent_id", "n_agents"}
    code, out, _ = run(["track", "--index", workspace / "idx.bin", "--quiet", "--single-thread"], capsys,
                       stdin=f["events"].read_text(), monkeypatch=monkeypatch)
    assert code == 0 and out == out_file.read_text()


def test_pipe_simulate_into_track(workspace, tmp_path):
    script = write_script(tmp_path / "s.json", {"score_id": "random-000002", "base_tempo_bpm": 130, "seed": 3,
                                                 "end_beat": 30})
    exe = [sys.executable, "-m", "scoretrack"]
    idx = str(workspace / "idx.bin")
    sim = subprocess.run(exe + ["simulate", "--index", idx, "--script", str(script), "--events", "-",
                                "--truth", str(tmp_path / "t.jsonl")], capture_output=True, check=True)
    piped = subprocess.run(exe + ["track", "--index", idx, "--quiet"], input=sim.stdout, capture_output=True,
                           check=True)
    (tmp_path / "e.jsonl").write_bytes(sim.stdout)
    subprocess.run(exe + ["track", "--index", idx, "--events", str(tmp_path / "e.jsonl"), "--out",
                          str(tmp_path / "o.jsonl")], check=True, capture_output=True)
    assert piped.stdout == (tmp_path / "o.jsonl").read_bytes() and piped.stdout


def test_track_malformed_record(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"t": 0.0, "pitches": [60]}\n{"t": 0.5, "pitches": "x"}\n')
    code, _, err = run(["track", "--index", workspace / "idx.bin", "--events", bad, "--out", tmp_path / "o"], capsys)
    assert code == 1 and "line 2" in err


def test_track_missing_index(tmp_path, capsys):
    assert run(["track", "--index", tmp_path / "none.bin"], capsys)[0] == 1


def write_wav(path, x, rate=44100):
    pcm = (np.clip(x, -1, 1) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


def test_track_silence_audio(workspace, tmp_path, capsys):
    write_wav(tmp_path / "s.wav", np.zeros(44100 * 2))
    code, out, _ = run(["track", "--index", workspace / "idx.bin", "--audio", tmp_path / "s.wav", "--quiet"], capsys)
    assert code == 0 and out == ""
    np.zeros(44100, dtype="<f4").tofile(tmp_path / "s.f32")
    code, out, _ = run(["track", "--index", workspace / "idx.bin", "--audio", tmp_path / "s.f32", "--raw-float32",
                        "--quiet"], capsys)
    assert code == 0 and out == ""


def test_track_wrong_rate_audio(workspace, tmp_path, capsys):
    write_wav(tmp_path / "s.wav", np.zeros(22050), rate=22050)
    code, _, err = run(["track", "--index", workspace / "idx.bin", "--audio", tmp_path / "s.wav"], capsys)
    assert code == 1 and "22050" in err


def test_help_lists_module_defaults(capsys):
    parser = cli.build_parser()
    track = next(a for a in parser._subparsers._group_actions[0].choices.items() if a[0] == "track")[1]
    text = track.format_help()
    for cls in (TrackerConfig, OltwParams, AudioParams):
        for f in dataclasses.fields(cls):
            flag = "--" + f.name.replace("_", "-")
            assert flag in text
            action = next(a for a in track._actions if flag in a.option_strings)
            assert action.default == f.default
    for sub in ("build-index", "simulate", "track", "eval"):
        h = parser._subparsers._group_actions[0].choices[sub].format_help()
        assert "(default:" in h


def eval_args(workspace, f, track, out="-"):
    return ["eval", "--index", workspace / "idx.bin", "--truth", f["truth"], "--track", track,
            "--jumps", f["jumps"], "--out", out]


def test_eval_perfect_and_wrong(workspace, tmp_path, capsys):
    script = {"score_id": "random-000001", "base_tempo_bpm": 120, "seed": 2, "end_beat": 20}
    f = simulate(workspace, tmp_path, script, capsys)
    truth = [json.loads(x) for x in f["truth"].read_text().splitlines()]
    perfect = tmp_path / "perfect.jsonl"
    perfect.write_text("".join(json.dumps({"t_perf": p["t_perf"], "score_id": p["score_id"],
                                           "beat": p["score_beat"], "confidence": 1.0, "agent_id": 0,
                                           "n_agents": 1}) + "\n" for p in truth))
    code, out, _ = run(eval_args(workspace, f, perfect), capsys)
    rep = json.loads(out)
    assert code == 0 and rep["align_err_median_ms"] == 0.0 and rep["ident_latency_s"] == truth[0]["t_perf"]
    wrong = tmp_path / "wrong.jsonl"
    wrong.write_text(perfect.read_text().replace("random-000001", "random-000002"))
    rep = json.loads(run(eval_args(workspace, f, wrong), capsys)[1])
    assert rep["ident_latency_s"] == "inf" and rep["align_err_ms"] == []


def test_eval_missing_file(workspace, tmp_path, capsys):
    f = {"truth": tmp_path / "missing", "jumps": tmp_path / "missing2"}
    assert run(eval_args(workspace, f, tmp_path / "none"), capsys)[0] == 1


def test_eval_stdin_equivalence_and_plot(workspace, tmp_path, capsys, monkeypatch):
    script = {"score_id": "random-000000", "base_tempo_bpm": 120, "seed": 5, "end_beat": 40, "jumps": [[20, 4]]}
    f = simulate(workspace, tmp_path, script, capsys)
    track = tmp_path / "o.jsonl"
    run(["track", "--index", workspace / "idx.bin", "--events", f["events"], "--out", track, "--quiet"], capsys)
    _, from_file, _ = run(eval_args(workspace, f, track) + ["--plot", tmp_path / "fig.png"], capsys)
    _, from_stdin, _ = run(eval_args(workspace, f, "-"), capsys, stdin=track.read_text(), monkeypatch=monkeypatch)
    assert from_file == from_stdin
    assert (tmp_path / "fig.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def _regression_run(tmp_path, capsys):
    g = GOLDEN
    idx = tmp_path / "g.bin"
    assert cli.main(["build-index", "--scores", str(g / "scores"), "--out", str(idx)]) == 0
    files = {k: tmp_path / f"{k}.jsonl" for k in ("events", "truth", "jumps", "track")}
    assert cli.main(["simulate", "--index", str(idx), "--script", str(g / "script.json"), "--events",
                     str(files["events"]), "--truth", str(files["truth"]), "--jumps", str(files["jumps"])]) == 0
    assert cli.main(["track", "--index", str(idx), "--events", str(files["events"]), "--out",
                     str(files["track"]), "--quiet"]) == 0
    capsys.readouterr()
    code, out, _ = run(["eval", "--index", idx, "--truth", files["truth"], "--track", files["track"],
                        "--jumps", files["jumps"]], capsys)
    assert code == 0
    return json.loads(out)


def test_regression_corpus_matches_golden(tmp_path, capsys):
    rep = _regression_run(tmp_path, capsys)
    want = json.loads((GOLDEN / "report.json").read_text())
    for key in ("ident_latency_s", "align_err_mean_ms", "align_err_median_ms", "align_err_p95_ms"):
        assert rep[key] == pytest.approx(want[key], rel=1e-6, abs=1e-6), key
    assert rep["recovery_times_s"] == pytest.approx(want["recovery_times_s"], rel=1e-6, abs=1e-6)
    assert rep["n_outputs"] == want["n_outputs"] and rep["n_align"] == want["n_align"]
