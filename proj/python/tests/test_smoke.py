import json
import math

import pytest

import geoaddr


def test_encode_decode_roundtrip():
    chars, face = geoaddr.encode(30.25, 120.15, 18)
    assert len(chars) == 27 and set(chars) <= set("012")
    lat, lon = geoaddr.decode_center(chars, face, 18)
    assert geoaddr.haversine_km(lat, lon, 30.25, 120.15) < 0.05


def test_bad_label_raises():
    with pytest.raises(geoaddr.GeoaddrError):
        geoaddr.decode_center("9" * 27, 0, 18)


def test_haversine_quarter_meridian():
    assert geoaddr.haversine_km(0, 0, 90, 0) == pytest.approx(math.pi / 2 * 6371.0, rel=1e-9)


def test_cli_usage_error():
    code, status, err = geoaddr.run("no-such-command")
    assert code == 2 and status is None and err


def test_cli_small_pipeline(tmp_path):
    cfg = {
        "out_dir": str(tmp_path / "run"),
        "world": {"n_aois": 8, "n_couriers": 3, "deliveries_per_courier": 20},
        "sample": {"n_samples": 8, "shard_size": 4},
        "model": {"d_model": 16, "n_heads_text": 2, "n_heads_graph": 2,
                  "n_layers_text": 1, "n_layers_graph": 1, "n_layers_pre": 1},
        "pretrain": {"steps": 2, "batch_size": 2},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    for cmd in ["gen-world", "build-graph", "sample", "featurize", "make-pretrain", "pretrain"]:
        code, status, err = geoaddr.run("--config", path, cmd)
        assert code == 0, err
        assert status["status"] == "ok" and status["command"] == cmd
    code, status, err = geoaddr.run("--config", path, "eval-geo", "--head", "pretrain")
    assert code == 0, err
    report = json.loads((tmp_path / "run" / "reports" / "geocoding.json").read_text())
    assert "config_hash" in report


def test_verify_quick():
    results = geoaddr.verify(include_overfit=False)
    assert len(results) >= 7
    assert all(r["pass"] for r in results), [r for r in results if not r["pass"]]
