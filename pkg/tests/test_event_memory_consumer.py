import json

import pytest

from consumers.event_memory_consumer import (
    EXIT_CONFIG_ERROR,
    EXIT_GRADCHECK_FAILED,
    EXIT_OK,
    EXIT_STAGE_FAILURE,
    main,
)
from utils.utils_tensor_io import read_tensor

TOY = ["--dim", "8", "--patches", "4", "--heads", "2"]


@pytest.fixture
def synth_video(tmp_path):
    path = tmp_path / "blocks.hemt"
    assert main(["synth", "--blocks", "4,4,4,4", "--size", "4", "--output", str(path)]) == EXIT_OK
    return path


def test_synth_writes_video(synth_video):
    assert read_tensor(synth_video).shape == (3, 16, 4, 4)


def test_run_writes_outputs_and_summary(tmp_path, synth_video, capsys):
    out = tmp_path / "out"
    code = main(["run", "--input", str(synth_video), "--output", str(out), "--events", "4", "--target", "1", *TOY])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["split_points"] == [4, 8, 12]
    assert report["zv_shape"] == [8, 128]
    assert "split_points=[4, 8, 12]" in capsys.readouterr().out


def test_preset_sets_event_count(tmp_path, synth_video):
    out = tmp_path / "out"
    assert main(["run", "--preset", "vqa", "--input", str(synth_video), "--output", str(out), *TOY]) == EXIT_OK
    assert json.loads((out / "report.json").read_text())["num_events"] == 2


def test_segment_command(tmp_path, synth_video, capsys):
    out = tmp_path / "out"
    assert main(["segment", "--input", str(synth_video), "--output", str(out), "--events", "3"]) == EXIT_OK
    doc = json.loads((out / "segments.json").read_text())
    assert doc["videos"][0]["split_points"] == [4, 8]
    assert "split_points=[4, 8]" in capsys.readouterr().out


def test_sample_command(tmp_path, capsys):
    out = tmp_path / "out"
    args = ["sample", "--frames", "10", "--split-points", "3,6", "--scheme", "1", "--output", str(out)]
    assert main(args) == EXIT_OK
    assert json.loads((out / "sample_plan.json").read_text())["segment_lengths"] == [7, 7]
    assert "segment_lengths=[7, 7]" in capsys.readouterr().out


def test_gradcheck_passes_and_reports_epsilon(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "gradcheck PASS" in out
    assert "epsilon=1e-05" in out


def test_gradcheck_detects_corrupted_gradient(capsys):
    assert main(["gradcheck", "--corrupt-gradient"]) == EXIT_GRADCHECK_FAILED
    assert "gradcheck FAIL" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, synth_video, capsys):
    code = main(["run", "--input", str(synth_video), "--output", str(tmp_path), "--events", "0"])
    assert code == EXIT_CONFIG_ERROR
    assert "[config]" in capsys.readouterr().err


def test_several_inputs_need_batch(tmp_path, synth_video):
    args = ["run", "--input", str(synth_video), "--input", str(synth_video), "--output", str(tmp_path)]
    assert main(args) == EXIT_CONFIG_ERROR


def test_stage_failure_exits_1_with_stage_name(tmp_path, capsys):
    code = main(["run", "--input", str(tmp_path / "missing.hemt"), "--output", str(tmp_path)])
    assert code == EXIT_STAGE_FAILURE
    assert "[ingest]" in capsys.readouterr().err


def test_ablate_prints_one_row_per_setting(tmp_path, synth_video, capsys):
    out = tmp_path / "out"
    assert main(["ablate", "--input", str(synth_video), "--output", str(out), "--events", "4", *TOY]) == EXIT_OK
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 4


def test_unwritable_output_exits_1_with_write_stage(tmp_path, synth_video, capsys):
    blocked = tmp_path / "blocked"
    blocked.write_text("not a directory")
    code = main(["segment", "--input", str(synth_video), "--output", str(blocked), "--events", "3"])
    assert code == EXIT_STAGE_FAILURE
    assert "[write]" in capsys.readouterr().err


def test_sample_report_write_failure_exits_1(tmp_path):
    blocked = tmp_path / "blocked"
    blocked.write_text("not a directory")
    args = ["sample", "--frames", "10", "--split-points", "3,6", "--output", str(blocked)]
    assert main(args) == EXIT_STAGE_FAILURE


def test_synth_random_frames_follow_seed(tmp_path):
    first, second = tmp_path / "a.hemt", tmp_path / "b.hemt"
    for path in (first, second):
        assert main(["synth", "--random", "5", "--size", "3", "--seed", "11", "--output", str(path)]) == EXIT_OK
    video = read_tensor(first)
    assert video.shape == (3, 5, 3, 3)
    assert 0.0 <= video.min() and video.max() <= 1.0
    assert first.read_bytes() == second.read_bytes()


def test_synth_random_needs_frames(tmp_path):
    assert main(["synth", "--random", "0", "--output", str(tmp_path / "v.hemt")]) == EXIT_CONFIG_ERROR
