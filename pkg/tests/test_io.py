import json
import struct

import numpy as np
import pytest

from sgdlab import io
from sgdlab.fokker_planck import GridSpec
from sgdlab.sde import Trajectory


def test_binary_roundtrip(tmp_path):
    x = np.random.default_rng(0).standard_normal((7, 3))
    p = io.write_trajectory_bin(tmp_path / "t.bin", x)
    raw = p.read_bytes()
    assert raw[:4] == b"SGDV"
    assert struct.unpack("<IIQ", raw[4:20]) == (1, 3, 7)
    np.testing.assert_array_equal(io.read_trajectory_bin(p), x)


def test_binary_rejects_corruption(tmp_path):
    p = io.write_trajectory_bin(tmp_path / "t.bin", np.zeros((2, 2)))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(ValueError):
        io.read_trajectory_bin(p)
    p.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(ValueError):
        io.read_trajectory_bin(p)


def test_trajectory_csv(tmp_path):
    traj = Trajectory(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.0, 0.5]))
    p = io.write_trajectory_csv(tmp_path / "t.csv", traj)
    header, data = io.read_table(p)
    assert header == ["t", "w0", "w1"]
    np.testing.assert_array_equal(data, [[0, 1, 2], [0.5, 3, 4]])


def test_float_text_roundtrip(tmp_path):
    v = np.array([np.pi, 1e-300, -2.0 / 3.0])
    _, data = io.read_table(io.write_table(tmp_path / "v.csv", ["v"], [v]))
    np.testing.assert_array_equal(data[:, 0], v)


def test_grid_dump_has_sidecar(tmp_path):
    g = GridSpec(3, 4)
    p = io.write_grid(tmp_path / "rho.csv", np.arange(12.0).reshape(3, 4), g)
    np.testing.assert_array_equal(io.read_grid(p), np.arange(12.0).reshape(3, 4))
    assert json.loads((tmp_path / "rho.json").read_text())["grid"]["nx"] == 3


def test_manifest(tmp_path):
    f = io.write_json(tmp_path / "a.json", {"x": np.float64(1.5), "y": np.arange(2)})
    m = json.loads(io.write_manifest(tmp_path, {"k": 1}, 7, [f], "test").read_text())
    assert m["seed"] == 7 and m["config"] == {"k": 1}
    assert m["files"][0]["path"] == "a.json"
    assert m["files"][0]["bytes"] == f.stat().st_size
