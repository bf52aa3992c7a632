import pathlib

import numpy as np
import pytest

import pcstream

ROOT = pathlib.Path(__file__).resolve().parents[2]


def test_target_bitrate():
    assert pcstream.target_bitrate(62500, 0.05) == 1e7
    assert pcstream.target_bitrate(100, 0.05) == 3e6
    assert pcstream.target_bitrate(1e6, 0.05) == 1e7


def test_encode_decode_round_trip():
    pts = pcstream.synthetic_scan(seed=3, t=1.0, rings=8, columns=128)
    assert pts.shape == (1024, 3)
    unit = pcstream.encode(pts, 16, 4, row_stride=128)
    assert (unit.q, unit.c) == (16, 4)
    back = pcstream.decode(pcstream.EncodedUnit.from_bytes(unit.to_bytes()))
    assert back.shape == pts.shape
    r = pcstream.residual(pts, back)
    # 100 m box over 2^16 cells per axis
    assert r["max_ptp"] <= np.sqrt(3) * 100 / 2**16
    assert pcstream.encode(pts, 8, 4, row_stride=128).payload_bits < unit.payload_bits


def test_errors_map_to_python():
    pts = np.zeros((4, 3))
    with pytest.raises(pcstream.ConfigError):
        pcstream.encode(pts, 30, 0)
    with pytest.raises(pcstream.ConfigError):
        pcstream.encode(np.zeros((4, 2)), 16, 0)
    with pytest.raises(pcstream.DecodeError):
        pcstream.EncodedUnit.from_bytes(b"junk")
    assert issubclass(pcstream.InfeasibleError, pcstream.Error)


def test_calibrate_minrate_and_run(tmp_path):
    table = str(tmp_path / "table.csv")
    model = str(tmp_path / "model.txt")
    info = pcstream.calibrate(table, model, scans=2, train_duration=0)
    assert info["configs"] == 170
    b = pcstream.min_rate(table, 0.05)
    assert b["r_min"] <= b["r_max"]
    assert b["q_floor"] >= 8
    with pytest.raises(pcstream.InfeasibleError):
        pcstream.min_rate(table, 1e-9)
    assert pcstream.predict(model, 24, 0) > pcstream.predict(model, 8, 9)
    q, c = pcstream.select_config(model, 1e12, min_q=b["q_floor"])
    assert (q, c) == (24, 0)

    out = pcstream.run(str(ROOT / "scenarios" / "step.json"), model, table, duration=3)
    s = out["summary"]
    assert s["scans_generated"] == 30
    assert s["scans_unaccounted"] == 0
    assert out["metrics_csv"].startswith("# pcstream metrics v1\n")
    again = pcstream.run(str(ROOT / "scenarios" / "step.json"), model, table, duration=3)
    assert again["metrics_csv"] == out["metrics_csv"]

    base = pcstream.run(str(ROOT / "scenarios" / "step.json"), duration=2, mode="baseline")
    assert base["summary"]["mode"] == "baseline"
