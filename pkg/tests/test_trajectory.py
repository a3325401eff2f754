import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from natsim.trajectory import Trajectory, read_sidecar, read_trajectory_csv, transferred_energy


def make(times, sink, gamma=0.5):
    occ = np.column_stack([np.zeros_like(sink), sink])
    return Trajectory(times, occ, np.ones_like(times), detection_site=1, gamma_det=gamma)


def test_zero_occupation():
    t = np.linspace(0, 5, 11)
    traj = make(t, np.zeros_like(t))
    assert np.all(traj.e_tr == 0.0)
    assert transferred_energy(traj)(2.3) == 0.0


def test_constant_occupation_is_exact():
    t = np.linspace(0, 7, 401)
    c = 0.0375
    traj = make(t, np.full_like(t, c), gamma=0.5)
    np.testing.assert_allclose(traj.e_tr, 2 * 0.5 * c * t, rtol=1e-14, atol=0)
    assert traj.energy(3.3) == pytest.approx(c * 3.3, rel=1e-14)
    assert traj.energy.late_slope() == pytest.approx(c, rel=1e-10)


def test_explicit_rate_override():
    t = np.linspace(0, 1, 5)
    traj = make(t, np.ones_like(t), gamma=0.5)
    assert transferred_energy(traj, gamma_det=1.0).values[-1] == pytest.approx(2.0)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 30, elements=st.floats(-1e-12, 2.0)))
def test_energy_nondecreasing(sink):
    t = np.linspace(0, 3, 30)
    e = make(t, sink).e_tr
    assert e[0] == 0.0
    assert np.all(np.diff(e) >= 0)


def test_csv_roundtrip_full_precision(tmp_path):
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 17)
    traj = make(t, rng.random(17) / 3)
    traj.metadata = {"engine": "fock", "cutoff": 3}
    path = traj.write(tmp_path, "run", extra={"note": "x"})
    cols = read_trajectory_csv(path)
    assert list(cols) == ["time", "n_0", "n_1", "trace", "E_tr"]
    np.testing.assert_array_equal(cols["n_1"], traj.sink_occupation)
    np.testing.assert_array_equal(cols["E_tr"], traj.e_tr)
    meta = read_sidecar(tmp_path / "run.json")
    assert meta["cutoff"] == 3 and meta["note"] == "x" and meta["n_samples"] == 17
