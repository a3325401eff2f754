import numpy as np
import pytest

from natsim.errors import InvalidParameter, NoTransientWindow, TooFewPoints
from natsim.experiments import (
    SweepSpec,
    TransmissionCurve,
    baseline_transmission,
    detect_nat_peak,
    ensemble_average,
    ensemble_average_transmission,
    ensemble_samples,
    point_transmission,
    sweep_dephasing,
    sweep_disorder,
    transient_fit,
    write_curves,
)
from natsim.fock import build_basis
from natsim.lindblad import DensityMatrix, build_liouvillian, evolve, steady_state
from natsim.moments import build_moment_generator, evolve_moments, steady_moments
from natsim.network import single_site, validate_network


def curve(values, x=None):
    x = np.arange(len(values), dtype=float) if x is None else x
    return TransmissionCurve.from_raw(x, values, 1.0)


def test_sweep_spec_validation():
    with pytest.raises(InvalidParameter):
        SweepSpec(disorder_grid=())
    with pytest.raises(InvalidParameter):
        SweepSpec(dephasing_grid=(0.1, -0.2))
    with pytest.raises(InvalidParameter):
        SweepSpec(disorder_grid=(float("inf"),))
    with pytest.raises(InvalidParameter):
        SweepSpec(disorder_grid=(10.0,))
    with pytest.raises(InvalidParameter):
        SweepSpec(engine="other")
    spec = SweepSpec()
    assert len(spec.disorder_grid) == 9 and spec.disorder_grid[-1] == 2.0
    assert len(spec.dephasing_grid) == 11 and spec.dephasing_grid[3] == 0.3


def test_baseline_self_normalizes():
    spec = SweepSpec("constructive", (0.0,), (0.0, 0.5, 1.0), "moments")
    c = sweep_dephasing(spec)[0]
    assert c.normalized[0] == 1.0
    assert c.baseline == baseline_transmission("moments")


def test_baselines_agree_across_engines():
    fock = baseline_transmission("fock", cutoff=3)
    mom = baseline_transmission("moments")
    assert abs(fock - mom) / mom <= 0.02
    assert fock > point_transmission("destructive", 0.0, 0.0, "fock", 3)


def test_normalization_consistency(tmp_path):
    spec = SweepSpec("destructive", (0.0, 1.5), (0.0, 0.3, 0.9), "moments")
    curves = sweep_disorder(spec)
    assert len(curves) == 3
    paths = write_curves(curves, tmp_path)
    for path, c in zip(paths, curves):
        back = TransmissionCurve.read(path)
        np.testing.assert_array_equal(back.raw / back.baseline, back.normalized)
        np.testing.assert_array_equal(back.normalized, c.normalized)
        assert back.metadata["sweep"]["mode"] == "destructive"


def test_sweeps_are_deterministic_and_worker_independent(tmp_path):
    spec = SweepSpec("constructive", (0.0, 2.0), (0.0, 0.5, 1.0), "fock", cutoff=2)
    write_curves(sweep_dephasing(spec, workers=1), tmp_path / "a")
    write_curves(sweep_dephasing(spec, workers=2), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_both_engines_recorded():
    spec = SweepSpec("constructive", (1.0,), (0.0, 0.5), "both", cutoff=3)
    c = sweep_dephasing(spec)[0]
    assert c.metadata["max_relative_engine_difference"] <= 0.02
    assert len(c.metadata["moments_raw"]) == 2


@pytest.mark.parametrize("g", [(0.0, 0.0, 0.4, 0.35), (0.0, 0.45, 0.4, 0.35)])
def test_mode_irrelevant_without_g01(g):
    for engine in ("moments", "fock"):
        a = point_transmission("constructive", 0.7, 0.3, engine, 2, g)
        b = point_transmission("destructive", 0.7, 0.3, engine, 2, g)
        assert a == b


def test_destructive_dephasing_assists():
    t0 = point_transmission("destructive", 0.0, 0.0, "moments")
    assert point_transmission("destructive", 0.0, 1.0, "moments") > t0
    assert point_transmission("destructive", 2.0, 0.0, "moments") > t0


def test_constructive_zero_disorder_has_no_peak():
    spec = SweepSpec("constructive", (0.0,), tuple(np.linspace(0, 1, 11)), "moments")
    c = sweep_dephasing(spec)[0]
    assert np.all(np.diff(c.normalized) <= 0)
    assert detect_nat_peak(c) is None


def test_peak_detection_examples():
    assert detect_nat_peak(curve([0.2, 0.5, 0.3])) == (1.0, 0.5)
    assert detect_nat_peak(curve([0.9, 0.7, 0.5, 0.1])) is None
    assert detect_nat_peak(curve([0.5, 0.505, 0.5])) is None  # below the 1% margin
    assert detect_nat_peak(curve([0.5, 0.505, 0.5]), margin=0.001) is not None
    # ties go to the smaller abscissa, also for unsorted input
    assert detect_nat_peak(curve([0.1, 0.6, 0.6, 0.2])) == (1.0, 0.6)
    assert detect_nat_peak(curve([0.2, 0.6, 0.6, 0.1], x=np.array([3.0, 2.0, 1.0, 0.0]))) == (1.0, 0.6)
    with pytest.raises(TooFewPoints):
        detect_nat_peak(curve([0.1, 0.2]))


def test_margin_is_relative_to_baseline():
    c = TransmissionCurve.from_raw([0.0, 1.0, 2.0], [0.10, 0.115, 0.10], baseline=2.0)
    assert detect_nat_peak(c) is None  # 0.015 raw is 0.0075 of the baseline
    c = TransmissionCurve.from_raw([0.0, 1.0, 2.0], [0.10, 0.13, 0.10], baseline=2.0)
    assert detect_nat_peak(c) == (1.0, 0.065)


def test_ensemble_degenerate_window():
    single = point_transmission("destructive", 0.4, 0.0, "moments")
    for samples in (1, 5, 17):
        assert ensemble_average_transmission("destructive", 0.4, 0.0, samples, "moments") == single
    assert ensemble_average_transmission("destructive", 0.4, 1.0, 1, "moments") == single


def test_ensemble_grid_and_seed():
    np.testing.assert_allclose(ensemble_samples(1.0, 2.0, 5), [0.0, 0.5, 1.0, 1.5, 2.0])
    a = ensemble_samples(0.0, 1.0, 8, seed=3)
    np.testing.assert_array_equal(a, ensemble_samples(0.0, 1.0, 8, seed=3))
    assert np.all(np.abs(a) <= 0.5)
    res = ensemble_average("constructive", 0.0, 1.0, 5, "moments")
    assert res.mean == pytest.approx(np.mean(res.transmissions))
    with pytest.raises(InvalidParameter):
        ensemble_samples(0.0, -1.0, 3)
    with pytest.raises(InvalidParameter):
        ensemble_samples(0.0, 1.0, 0)


def test_transient_fit_single_site_decay():
    net = validate_network(single_site(0.0, 0.0, 0.5))
    basis = build_basis(1, 2)
    traj = evolve(build_liouvillian(net, basis), DensityMatrix.fock_state(basis, [1]), 20.0)
    fit = transient_fit(traj)
    assert fit.rate == pytest.approx(1.0, rel=0.01)
    assert fit.amplitude == pytest.approx(1.0, rel=0.01)
    assert fit.goodness > 0.999


def test_transient_fit_rejects_steady_run():
    net = validate_network(single_site())
    basis = build_basis(1, 3)
    L = build_liouvillian(net, basis)
    traj = evolve(L, steady_state(L), 20.0)
    with pytest.raises(NoTransientWindow):
        transient_fit(traj)
    gen = build_moment_generator(net)
    with pytest.raises(NoTransientWindow):
        transient_fit(evolve_moments(gen, steady_moments(gen), 20.0))
