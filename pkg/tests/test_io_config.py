import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdwatch import io as tio
from crowdwatch.config import ConfigError, RunConfig, load_config, parse_config
from crowdwatch.domain import DuplicateObservation


def lines(text):
    return io.StringIO(text)


def test_csv_single_observation():
    (r,) = tio.parse_trajectories(lines("frame,agent_id,x,y\n0,a,0.0,1.0\n"))
    assert (r.frame, r.agent_id, r.x, r.y, r.label) == (0, "a", 0.0, 1.0, None)


def test_parse_error_carries_line_number():
    with pytest.raises(tio.ParseError) as exc:
        tio.parse_trajectories(lines("frame,agent_id,x,y\n0,a,0,0\n1,a,zero,0\n"))
    assert exc.value.line == 3


@pytest.mark.parametrize("row", ["0,a,1", "0,a,nan,1", "0,a,inf,0", "x,a,0,0", "0,,0,0"])
def test_bad_rows(row):
    with pytest.raises(tio.ParseError):
        tio.parse_trajectories(lines(f"frame,agent_id,x,y\n{row}\n"))


def test_bad_header():
    with pytest.raises(tio.ParseError) as exc:
        tio.parse_trajectories(lines("t,id,x,y\n"))
    assert exc.value.line == 1


def test_stream_validation_is_applied():
    with pytest.raises(DuplicateObservation):
        tio.parse_trajectories(lines("frame,agent_id,x,y\n0,a,0,0\n0,a,1,1\n"))


def test_blank_line_is_frame_break():
    recs = list(tio.iter_records(lines("frame,agent_id,x,y\n0,a,0,0\n\n1,a,1,0\n")))
    assert isinstance(recs[1], tio.FrameBreak) and recs[1].line == 3


def test_jsonl_with_labels():
    text = ('{"frame": 0, "agent_id": "a", "x": 1.5, "y": 2, "label": true}\n'
            '{"frame": 1, "agent_id": "a", "x": 1.6, "y": 2}\n')
    a, b = tio.parse_trajectories(lines(text), "jsonl")
    assert a.label is True and b.label is None and a.x == 1.5
    with pytest.raises(tio.ParseError):
        tio.parse_trajectories(lines('{"frame": 0, "x": 1, "y": 2}\n'), "jsonl")
    with pytest.raises(tio.ParseError):
        tio.parse_trajectories(lines("[1, 2]\n"), "jsonl")


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite, st.booleans()), min_size=1, max_size=20),
       st.sampled_from(tio.FORMATS))
def test_round_trip_is_lossless_at_nine_digits(rows, fmt):
    recs = [tio.TrajectoryRecord(f, f"p{f % 3}", x, y, lab) for f, (x, y, lab) in enumerate(rows)]
    out = io.StringIO()
    tio.write_trajectories(recs, out, fmt, with_labels=True)
    back = tio.parse_trajectories(lines(out.getvalue()), fmt)
    assert [(r.frame, r.agent_id, r.label) for r in back] == \
        [(r.frame, r.agent_id, r.label) for r in recs]
    for a, b in zip(recs, back):
        assert b.x == float(f"{a.x:.9g}") and b.y == float(f"{a.y:.9g}")
    # a second pass is exact
    again = io.StringIO()
    tio.write_trajectories(back, again, fmt, with_labels=True)
    assert again.getvalue() == out.getvalue()


def test_labels_round_trip():
    labels = {(0, "a"): True, (0, "b"): False, (3, "a"): False}
    out = io.StringIO()
    tio.write_labels(labels, out)
    assert out.getvalue().splitlines()[0] == "frame,agent_id,label"
    assert tio.read_labels(lines(out.getvalue())) == labels
    with pytest.raises(tio.ParseError):
        tio.read_labels(lines("frame,agent_id,label\n0,a,1\n0,a,0\n"))


def test_records_and_scores():
    ev = tio.event_record(4, "a", 2.123456789123, 1.0, "local")
    sc = tio.score_record(5, "b", 0.5, False)
    assert ev == '{"frame": 4, "agent_id": "a", "score": 2.12345679, "threshold": 1.0, ' \
                 '"scope": "local"}'
    scores, complete = tio.read_scores(lines(ev + "\n"))
    assert scores == {(4, "a"): 2.12345679} and not complete
    scores, complete = tio.read_scores(lines(sc + "\n"))
    assert complete
    with pytest.raises(tio.ParseError):
        tio.read_scores(lines('{"frame": 1}\n'))


def test_key_mismatch_message():
    err = tio.KeyMismatch([(i, "a") for i in range(12)])
    assert "12 scored keys" in str(err) and "(9, a)" in str(err) and "(10, a)" not in str(err)


def test_config_defaults_and_units():
    cfg = RunConfig()
    pc = cfg.pipeline_config()
    assert pc.behavior.local_window == 25 and pc.behavior.global_window == 125
    assert pc.params.pref_speed == pytest.approx(0.04)
    assert pc.detector.threshold == 1.0


def test_config_parse_and_override():
    cfg = parse_config("# comment\nrun.fps = 10\ndetector.threshold = 3.5  # inline\n\n"
                       "behavior.clusters = 2\nfilter.adaptive_speed = no\n")
    assert cfg.fps == 10.0 and cfg["detector.threshold"] == 3.5
    pc = cfg.pipeline_config()
    assert pc.behavior.local_window == 10 and pc.behavior.clusters == 2
    assert pc.filter.adaptive_speed is False
    over = cfg.with_overrides({"detector.threshold": 5.0, "run.seed": None})
    assert over["detector.threshold"] == 5.0 and over.seed == 0
    assert parse_config(cfg.dumps()).values == cfg.values


@pytest.mark.parametrize("text", ["nonsense\n", "bogus.key = 1\n", "run.fps = 0\n",
                                  "run.fps = fast\n", "detector.threshold = 1\n"
                                  "detector.threshold = 2\n", "detector.threshold = -1\n",
                                  "behavior.scope = street\n"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config(tmp_path):
    assert load_config(None).values == RunConfig().values
    p = tmp_path / "run.cfg"
    p.write_text("run.seed = 42\n")
    assert load_config(p).seed == 42
