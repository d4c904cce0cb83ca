import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from wqad.core import (
    DEFAULT_SENSOR_SPECS,
    AnomalyLabel,
    ConfigError,
    DataError,
    DetectorConfig,
    InsufficientDataError,
    InvalidTypeError,
    SeriesFrame,
)
from wqad.detect import run_detection
from wqad.evaluate import ConfusionMatrix
from wqad.features import OutlierScoreSet
from wqad.forecast import ForecastModel
from wqad.pipeline import (
    ColumnMapping,
    ExtrapolationError,
    RunConfig,
    VariableConfig,
    build_training_set,
    emit_plot,
    frames_to_csv,
    interpolate_covariate,
    load_csv,
    read_csv_text,
    run_pipeline,
    sanitize_nonpositive,
    stage,
)
from wqad.synth import Injection, InjectionPlan, generate_base, inject, synthesize

T0 = np.datetime64("2021-01-01T00:00", "s")


def frame_of(values, labels=None, name="turbidity", step=3600):
    ts = T0 + np.arange(len(values)) * np.timedelta64(step, "s")
    return SeriesFrame.from_arrays(name, ts, values, {ts[i]: AnomalyLabel(c) for i, c in (labels or {}).items()})


def config(*names, **kw):
    variables = tuple(VariableConfig(n, DEFAULT_SENSOR_SPECS[n], direction="negative" if n == "turbidity" else "positive")
                      for n in names)
    return RunConfig(variables, **kw)


# -- ingestion -----------------------------------------------------------------------

CSV = """timestamp,turbidity,turbidity_label
2021-01-01T00:00:00,5.0,
2021-01-01T01:00:00,6.0,A
2021-01-01T02:00:00,5.5,
"""


def test_load_three_rows(tmp_path):
    p = tmp_path / "in.csv"
    p.write_text(CSV)
    f = load_csv(p)["turbidity"]
    assert len(f) == 3
    lab = f.labels[np.datetime64("2021-01-01T01:00:00", "s")]
    assert lab.type_code == "A" and lab.anomaly_class == 1


def test_bad_timestamp_names_line():
    with pytest.raises(DataError, match="line 3"):
        read_csv_text(CSV.replace("2021-01-01T01:00:00", "yesterday"))


def test_bad_label_and_value():
    with pytest.raises(InvalidTypeError, match="line 2"):
        read_csv_text(CSV.replace("5.0,", "5.0,Z"))
    with pytest.raises(DataError, match="line 4"):
        read_csv_text(CSV.replace("5.5", "five"))


def test_missing_file_and_columns(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "absent.csv")
    with pytest.raises(ConfigError):
        read_csv_text(CSV, ColumnMapping("time", {"turbidity": "turbidity"}))


def test_custom_timestamp_format():
    text = "when,level\n01/02/2021 10:30,1.5\n01/02/2021 11:30,1.7\n"
    f = read_csv_text(text, ColumnMapping("when", {"level": "level"}, {}, "%d/%m/%Y %H:%M"))["level"]
    assert f.timestamps[0] == np.datetime64("2021-02-01T10:30", "s")


def test_blank_cells_are_missing_observations():
    text = "timestamp,a,b\n2021-01-01T00:00:00,1,2\n2021-01-01T01:00:00,,3\n"
    frames = read_csv_text(text)
    assert len(frames["a"]) == 1 and len(frames["b"]) == 2


def test_csv_round_trip():
    f = synthesize(InjectionPlan("ar1", {}, [Injection("A", 5, 1, 8.0)]), 30, 1, "turbidity")
    back = read_csv_text(frames_to_csv({"turbidity": f}))["turbidity"]
    assert np.array_equal(back.values, f.values)
    assert back.labels == f.labels


# -- preprocessing ---------------------------------------------------------------------

def test_interpolation():
    cov = SeriesFrame.from_arrays("level", [T0, T0 + np.timedelta64(10, "s")], [1.0, 2.0])
    at = lambda *sec: SeriesFrame.from_arrays("t", T0 + np.array(sec) * np.timedelta64(1, "s"), np.ones(len(sec)))
    assert interpolate_covariate(at(5), cov)[0] == 1.5
    assert interpolate_covariate(at(0), cov)[0] == 1.0
    with pytest.raises(ExtrapolationError):
        interpolate_covariate(at(12), cov)


@pytest.mark.parametrize("raw,clean,replaced", [
    ([5, -1, 7], [5, 5, 7], [1]),
    ([5, 0, 0, 7], [5, 5, 5, 7], [1, 2]),
    ([1, 2, 3], [1, 2, 3], []),
])
def test_sanitize(raw, clean, replaced):
    v, idx = sanitize_nonpositive(raw)
    assert list(v) == clean and list(idx) == replaced


def test_sanitize_leading_nonpositive():
    with pytest.raises(DataError):
        sanitize_nonpositive([0, 1])


def test_training_counts():
    labels = {i: "AB"[i % 2] for i in range(0, 20, 2)}
    labels[50] = "K"
    f = frame_of(np.linspace(1, 2, 100), labels)
    assert len(build_training_set(f)) == 90
    assert len(build_training_set(frame_of(np.linspace(1, 2, 100)))) == 100
    assert len(build_training_set(f, "diff-log")) == 89
    with pytest.raises(InsufficientDataError):
        build_training_set(frame_of(np.ones(49)))


def test_stage_tag_keeps_type():
    with pytest.raises(InsufficientDataError, match=r"^\[fit\] "):
        with stage("fit"):
            raise InsufficientDataError("too short")


# -- configuration ---------------------------------------------------------------------

def test_config_round_trip_and_validation():
    c = RunConfig.from_dict({"variables": [{"name": "turbidity"}, {"name": "x", "min_detectable": 0, "max_detectable": 5}],
                             "models": ["naive", "arima"], "feature_methods": ["kNN-sum"]})
    assert RunConfig.from_dict(c.to_dict()) == c
    for bad in ({"variables": []}, {"variables": [{"name": "turbidity"}], "models": ["lstm"]},
                {"variables": [{"name": "unknown"}]}, {"variables": [{"name": "turbidity"}], "colour": 1},
                {"variables": [{"name": "turbidity"}], "models": ["regarima"]}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)


# -- orchestration ---------------------------------------------------------------------

def two_variable_frames(n=400):
    t = synthesize(InjectionPlan("ar1", {"sigma": 0.05}, [Injection("A", 200, 1, 20.0)]), n, 1, "turbidity")
    c = generate_base("ar1", {"sigma": 0.05, "level": 6.0}, n, 2, "conductivity")
    return {"turbidity": t, "conductivity": c}


def test_spike_found_end_to_end():
    frames = two_variable_frames()
    res = run_pipeline(config("turbidity"), {"turbidity": frames["turbidity"]})
    (report,) = res.reports
    assert report.matrix.tp >= 1 and report.per_type["A"].hit == 1


def test_arima_plus_hdoutliers_gives_two_reports():
    frames = two_variable_frames()
    c = config("turbidity", models=("arima",), arima_order=(1, 1, 0), feature_methods=("HDoutliers",))
    res = run_pipeline(c, {"turbidity": frames["turbidity"]})
    assert len(res.reports) == 2
    assert [r.name for r in res.reports] == ["turbidity ARIMA(1,1,0):AD", "turbidity HDoutliers:derivative"]


def test_empty_input_fails_at_load():
    with pytest.raises(DataError, match=r"^\[load\]"):
        run_pipeline(config("turbidity"), {})


def test_short_input_fails_at_fit():
    with pytest.raises(InsufficientDataError, match=r"^\[fit:turbidity:naive\]"):
        run_pipeline(config("turbidity"), {"turbidity": frame_of(np.linspace(1, 2, 20))})


def test_flag_rows_cover_every_observation():
    frames = two_variable_frames()
    c = config("turbidity", "conductivity", models=("naive", "linear_ar"), modes=("AD", "ADAM"),
               feature_methods=("kNN-agg",))
    res = run_pipeline(c, frames)
    methods = {}
    for row in res.flags:
        methods.setdefault((row[1], row[2]), []).append(row)
    assert len(methods) == 2 * 2 * 2 + 2
    for (var, _), rows in methods.items():
        assert len(rows) == len(frames[var])
    for r in res.reports:
        assert r.matrix.total == len(frames[r.name.split()[0]])


def test_rule_rows_marked_in_flags():
    v = np.r_[np.linspace(2, 3, 100), 5000.0, np.linspace(3, 2, 100)]
    res = run_pipeline(config("turbidity", modes=("ADAM",)), {"turbidity": frame_of(v, {100: "G"})})
    rule_rows = [r for r in res.flags if r[5] == "rule"]
    assert rule_rows == [(str(T0 + np.timedelta64(100 * 3600, "s")), "turbidity", "Naive:ADAM", 1, "G", "rule")]
    # substitution keeps the spike out of the next forecast, so nothing else is flagged
    assert res.reports[0].matrix == ConfusionMatrix(tp=1, fp=0, tn=200, fn=0)


def test_artifacts_are_deterministic(tmp_path):
    frames = two_variable_frames()
    c = config("turbidity", "conductivity", models=("naive",), modes=("AD", "ADAM"), feature_methods=("HDoutliers",))
    run_pipeline(c, frames, tmp_path / "a")
    run_pipeline(c, frames, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(p.suffix == ".svg" for p in files) and any(p.suffix == ".json" for p in files)
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


# -- plots ---------------------------------------------------------------------------

SVG = "{http://www.w3.org/2000/svg}"


def groups(path):
    root = ET.parse(path).getroot()
    return {g.get("id"): g for g in root.iter(f"{SVG}g") if g.get("id")}


def marks(group):
    return len([u for u in group.iter(f"{SVG}use")])


def naive_trace(values, mode="AD"):
    m = ForecastModel("Naive", 0, 1, 0, 0.0, (), (), 1.0, 500, 1, training_transform="identity")
    return run_detection(frame_of(values), m, mode)


def test_plot_ten_points(tmp_path):
    tr = naive_trace(np.r_[np.full(5, 10.0), 40.0, np.full(4, 10.0)])
    f = frame_of(np.ones(10), {5: "A", 2: "C"})
    path = emit_plot(tr, tmp_path / "t.svg", f.labels)
    g = groups(path)
    pts = {k: marks(v) for k, v in g.items() if k.startswith("points-")}
    assert sum(pts.values()) == 10
    assert pts["points-TP"] >= 1 and pts["points-FN"] == 1
    assert "pi-band" in g


def test_plot_single_class(tmp_path):
    g = groups(emit_plot(naive_trace(np.full(10, 3.0)), tmp_path / "t.svg"))
    assert [k for k in g if k.startswith("points-")] == ["points-TN"]
    assert "substituted" not in g


def test_plot_marks_substitutions(tmp_path):
    tr = naive_trace(np.r_[np.full(5, 10.0), np.full(5, 40.0)], "ADAM")
    g = groups(emit_plot(tr, tmp_path / "t.svg"))
    assert marks(g["substituted"]) == int(tr.substituted.sum()) == 5


def test_plot_scores(tmp_path):
    s = OutlierScoreSet(np.arange(10.0), "kNN-sum", 8.5, timestamps=T0 + np.arange(10) * np.timedelta64(60, "s"))
    g = groups(emit_plot(s, tmp_path / "s.svg"))
    assert marks(g["points-FP"]) == 1 and marks(g["points-TN"]) == 9


def test_plot_is_deterministic(tmp_path):
    tr = naive_trace(np.r_[np.full(5, 10.0), 40.0, np.full(4, 10.0)])
    a = emit_plot(tr, tmp_path / "a.svg").read_bytes()
    b = emit_plot(tr, tmp_path / "b.svg").read_bytes()
    assert a == b and not re.search(rb"<dc:date>", a)
