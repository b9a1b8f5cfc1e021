import json
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handpipe import io
from handpipe.cli import main, track_records
from handpipe.config import ConfigError, PipelineConfig
from handpipe.detector import generate_anchors
from handpipe.gesture import GestureTable, recognize
from handpipe.metrics import evaluate
from handpipe.render import BASE_RADIUS, landmark_radius, render_svg
from handpipe.simulator import (
    random_scene,
    run_script,
    steady_hand_script,
    synthesize_raw_output,
)
from handpipe.types import HAND_CONNECTIONS, HandLandmarks

SAMPLE = "sample/exit_reenter.json"
SVG = "{http://www.w3.org/2000/svg}"


def lines(path):
    return open(path, encoding="utf-8").read().splitlines()


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_scene_round_trip(seed):
    scene = io.quantize_scene(random_scene(np.random.default_rng(seed), timestamp=seed))
    record = json.loads(io.dumps(io.scene_to_record(scene)))
    assert io.scene_from_record(record) == scene
    jsonschema.validate(record, io.load_schema("scene_record"))


def test_track_round_trip(tmp_path):
    scenes = list(run_script(steady_hand_script(12, events=[(5, "exit"), (8, "enter")])))
    records = track_records(PipelineConfig(tier="light"), scenes, max_workers=0)
    path = tmp_path / "t.jsonl"
    io.write_tracks(path, records)
    assert io.read_tracks(path) == records
    schema = io.load_schema("track_record")
    for line in lines(path)[1:]:
        jsonschema.validate(json.loads(line), schema)


def test_raw_output_round_trip(tmp_path):
    anchors = generate_anchors()
    rng = np.random.default_rng(0)
    raws = []
    for t in range(3):
        raw = synthesize_raw_output(random_scene(rng), anchors, 0.1, rng)
        # Quantize once so the comparison is exact.
        raws.append((t, io.raw_output_from_record(io.raw_output_to_record(t, raw))[1]))
    path = tmp_path / "raw.jsonl"
    io.write_raw_outputs(path, raws)
    back = io.read_raw_outputs(path)
    for t, raw in raws:
        assert np.array_equal(back[t].logits, raw.logits)
        assert np.array_equal(back[t].boxes, raw.boxes)
        assert np.array_equal(back[t].keypoints, raw.keypoints)


def test_config_round_trip(tmp_path):
    config = PipelineConfig(seed=5, tier="heavy", max_hands=3, gesture_table=({"pattern": "SSSSS", "label": "OK"},))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(config.to_dict()))
    assert PipelineConfig.load(path) == config
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"unknown_key": 1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"presence_threshold": 1.5})


def test_quantization_is_stable():
    for x in (0.1, 1 / 3, 123456.789012345, -2.5e-12):
        assert io.q(io.q(x)) == io.q(x)
        assert json.loads(json.dumps(io.q(x))) == io.q(x)
    with pytest.raises(ValueError):
        io.q(float("nan"))


def test_reader_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"schema":"handpipe/v1"}\n{"t_us": 0, "hands": [], "camera": {}}\n')
    with pytest.raises(io.FormatError) as err:
        io.read_scenes(path)
    assert err.value.line == 2
    path.write_text('{"t_us": 0}\n')
    with pytest.raises(io.FormatError):
        io.read_scenes(path)


# CLI

def simulate(tmp_path, name="scenes.jsonl", script=SAMPLE, *extra):
    out = tmp_path / name
    assert main(["simulate", "--script", str(script), "--out", str(out), *extra]) == 0
    return out


def test_simulate_is_byte_identical(tmp_path):
    a = simulate(tmp_path, "a.jsonl")
    b = simulate(tmp_path, "b.jsonl")
    assert a.read_bytes() == b.read_bytes()
    rows = lines(a)
    assert json.loads(rows[0]) == io.HEADER
    assert len(rows) - 1 == 300
    c = simulate(tmp_path, "c.jsonl", SAMPLE, "--seed", "99")
    assert len(lines(c)) == 301


def test_simulate_empty_script(tmp_path):
    script = tmp_path / "empty.json"
    script.write_text("")
    out = simulate(tmp_path, "e.jsonl", script)
    assert lines(out) == [io.dumps(io.HEADER)]


@pytest.mark.parametrize(
    "text",
    ['{"num_frames": 10, "hands": [', '{"num_frames": -1}', '{"num_frames": 5, "hands": [{"keyframes": []}]}'],
)
def test_simulate_malformed_script_exits_2(tmp_path, text, capsys):
    script = tmp_path / "bad.json"
    script.write_text(text)
    assert main(["simulate", "--script", str(script), "--out", str(tmp_path / "o.jsonl")]) == 2
    assert "bad.json" in capsys.readouterr().err


def test_track_then_eval_matches_in_process(tmp_path):
    scenes_path = simulate(tmp_path)
    tracks = tmp_path / "tracks.jsonl"
    report = tmp_path / "eval.json"
    assert main(["track", "--in", str(scenes_path), "--out", str(tracks), "--config", "sample/config.json"]) == 0
    assert main(["eval", "--in", str(tracks), "--scenes", str(scenes_path), "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    jsonschema.validate(data, io.load_schema("eval_report"))
    scenes = io.read_scenes(scenes_path)
    expected = evaluate(track_records(PipelineConfig.load("sample/config.json"), scenes), scenes)
    assert {k: data[k] for k in expected} == io.round_floats(expected)
    assert data["ap"] == 1.0


def test_track_output_is_deterministic(tmp_path):
    scenes_path = simulate(tmp_path)
    outs = []
    for workers in ("0", "4"):
        out = tmp_path / f"t{workers}.jsonl"
        assert main(["track", "--in", str(scenes_path), "--out", str(out), "--workers", workers]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_track_steady_sequence_runs_detector_once(tmp_path):
    scenes_path = tmp_path / "steady.jsonl"
    io.write_scenes(scenes_path, run_script(steady_hand_script(300)))
    out = tmp_path / "t.jsonl"
    assert main(["track", "--in", str(scenes_path), "--out", str(out)]) == 0
    assert sum(r.detector_ran for r in io.read_tracks(out)) == 1


def test_track_empty_scene_stream(tmp_path):
    from handpipe.types import HandScene

    scenes_path = tmp_path / "empty.jsonl"
    io.write_scenes(scenes_path, [HandScene(timestamp=t * 33_333) for t in range(5)])
    out = tmp_path / "t.jsonl"
    assert main(["track", "--in", str(scenes_path), "--out", str(out)]) == 0
    records = [json.loads(line) for line in lines(out)[1:]]
    assert len(records) == 5
    assert all(r["hands"] == [] and r["detector_ran"] is True for r in records)


def test_perfect_oracle_run_has_zero_error(tmp_path):
    scenes_path = simulate(tmp_path)
    config = tmp_path / "perfect.json"
    config.write_text(json.dumps({"landmark_noise": 0.0}))
    tracks, report = tmp_path / "t.jsonl", tmp_path / "r.json"
    assert main(["track", "--in", str(scenes_path), "--out", str(tracks), "--config", str(config)]) == 0
    assert main(["eval", "--in", str(tracks), "--scenes", str(scenes_path), "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["normalized_error"] == 0.0
    assert data["normalized_error_percent"] == 0.0


def test_bad_graph_exits_3(tmp_path, capsys):
    scenes_path = simulate(tmp_path)
    graph = tmp_path / "broken.graph"
    graph.write_text(
        "input scene HandScene\n"
        "node landmarks HandLandmarkCalculator\n"
        "node merge TrackMergeCalculator\n"
        "edge scene -> landmarks.scene\n"
        "edge merge.state -> landmarks.prev_state\n"
        "edge landmarks.phase -> merge.phase\n"
        "edge scene -> merge.scene\n"
    )
    code = main(["track", "--in", str(scenes_path), "--out", str(tmp_path / "t.jsonl"), "--graph", str(graph)])
    assert code == 3
    err = capsys.readouterr().err
    assert "cycle" in err and "dangling" in err


def test_bad_config_exits_3(tmp_path):
    scenes_path = simulate(tmp_path)
    config = tmp_path / "c.json"
    config.write_text('{"max_hands": 0}')
    assert main(["track", "--in", str(scenes_path), "--out", str(tmp_path / "t"), "--config", str(config)]) == 3


def test_malformed_stream_exits_2(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"schema":"handpipe/v1"}\nnot json\n')
    assert main(["track", "--in", str(bad), "--out", str(tmp_path / "t.jsonl")]) == 2


def test_eval_timestamp_mismatch_exits_4(tmp_path):
    scenes_path = simulate(tmp_path)
    tracks = tmp_path / "t.jsonl"
    assert main(["track", "--in", str(scenes_path), "--out", str(tracks)]) == 0
    short = tmp_path / "short.jsonl"
    io.write_scenes(short, io.read_scenes(scenes_path)[:10])
    assert main(["eval", "--in", str(tracks), "--scenes", str(short)]) == 4


def test_gesture_command_applies_table(tmp_path):
    scenes_path = simulate(tmp_path)
    tracks, relabelled = tmp_path / "t.jsonl", tmp_path / "g.jsonl"
    assert main(["track", "--in", str(scenes_path), "--out", str(tracks)]) == 0
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"gesture_table": [{"pattern": "SSSSS", "label": "FIST"}]}))
    assert main(["gesture", "--in", str(tracks), "--out", str(relabelled), "--config", str(config)]) == 0
    before, after = io.read_tracks(tracks), io.read_tracks(relabelled)
    table = GestureTable.from_rows([{"pattern": "SSSSS", "label": "FIST"}])
    assert [h.gesture for r in after for h in r.hands] == [recognize(h.landmarks, table) for r in before for h in r.hands]
    assert "OPEN_PALM" in {h.gesture.value for r in before for h in r.hands}
    assert "OPEN_PALM" not in {h.gesture.value for r in after for h in r.hands}
    assert [h.landmarks for r in before for h in r.hands] == [h.landmarks for r in after for h in r.hands]


def test_bench_report_validates(tmp_path):
    report = tmp_path / "bench.json"
    assert main(["bench", "--frames", "30", "--repetitions", "1", "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    jsonschema.validate(data, io.load_schema("bench_report"))
    assert data["gating"]["detector_invocations"] == 1
    assert data["no_gating"]["detector_invocations"] == 30


# Rendering

def circles(svg_text):
    root = ET.fromstring(svg_text)
    return {int(c.get("data-index")): c for c in root.iter(f"{SVG}circle")}


def test_render_radius_rule():
    pts = np.zeros((21, 3))
    pts[:, 0] = np.linspace(0.1, 0.9, 21)
    pts[:, 1] = 0.5
    pts[5, 2] = -0.5
    pts[6, 2] = 0.3
    found = circles(render_svg([(0, HandLandmarks(pts), "OPEN_PALM")]))
    assert len(found) == 21
    assert float(found[0].get("r")) == pytest.approx(BASE_RADIUS)
    assert float(found[5].get("r")) > float(found[0].get("r"))
    assert float(found[6].get("r")) < float(found[0].get("r"))
    assert landmark_radius(-0.5) > landmark_radius(0.0) > landmark_radius(0.5)


def test_render_command(tmp_path):
    scenes_path = simulate(tmp_path)
    tracks = tmp_path / "t.jsonl"
    assert main(["track", "--in", str(scenes_path), "--out", str(tracks)]) == 0
    out_dir = tmp_path / "frames"
    assert main(["render", "--in", str(tracks), "--out", str(out_dir)]) == 0
    files = sorted(out_dir.glob("*.svg"))
    assert len(files) == 300
    records = io.read_tracks(tracks)
    for path, rec in zip(files[::37], records[::37]):
        root = ET.fromstring(path.read_text())
        assert len(list(root.iter(f"{SVG}circle"))) == 21 * len(rec.hands)
        assert len(list(root.iter(f"{SVG}line"))) == len(HAND_CONNECTIONS) * len(rec.hands)
