"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

The summary lines are printed at the end of the pytest run under
"acceptance criteria".
"""

import time

import numpy as np

from conftest import CRITERIA
from natsim.bench import complexity_benchmark
from natsim.experiments import (
    DEFAULT_DEPHASING_GRID,
    DEFAULT_DISORDER_GRID,
    SweepSpec,
    detect_nat_peak,
    ensemble_average_transmission,
    point_transmission,
    sweep_dephasing,
    sweep_disorder,
    transient_fit,
)
from natsim.fock import build_basis, site_annihilator
from natsim.lindblad import DensityMatrix, build_liouvillian, evolve, steady_state, transmission
from natsim.moments import build_moment_generator, moment_transmission
from natsim.network import DetectionSpec, InjectionSpec, NetworkSpec, single_site, standard_four_site, validate_network


def record(number, title, passed, detail):
    CRITERIA.append((number, title, bool(passed), detail))
    print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, detail


def relative(a, b):
    return abs(a - b) / abs(b)


def half_crossing(x, y):
    """First abscissa where y falls to half of y[0] (linear interpolation), or None."""
    half = 0.5 * y[0]
    below = np.flatnonzero(y <= half)
    if len(below) == 0:
        return None
    k = int(below[0])
    return float(x[k - 1] + (half - y[k - 1]) * (x[k] - x[k - 1]) / (y[k] - y[k - 1]))


def test_criterion_01_closed_form():
    start = time.perf_counter()
    net = validate_network(single_site(0.5, 0.1, 0.5))
    t_mom = moment_transmission(net)
    basis = build_basis(1, 4)
    t_fock = transmission(steady_state(build_liouvillian(net, basis)), net, basis)
    elapsed = time.perf_counter() - start
    err_mom, err_fock = relative(t_mom, 1 / 30), relative(t_fock, 1 / 30)
    record(1, "closed-form single site",
           err_mom <= 1e-9 and err_fock <= 1e-3 and elapsed < 1.0,
           f"moments rel err {err_mom:.2e} (<=1e-9), fock cutoff 4 rel err {err_fock:.2e} (<=1e-3), {elapsed:.2f} s")


def test_criterion_02_cross_engine_grid():
    worst = {3: 0.0, 4: 0.0}
    where = {3: None, 4: None}
    failures = {3: 0, 4: 0}
    limits = {3: 0.02, 4: 0.005}
    points = 0
    for mode in ("constructive", "destructive"):
        for w in DEFAULT_DISORDER_GRID:
            for g in DEFAULT_DEPHASING_GRID:
                points += 1
                t_mom = point_transmission(mode, w, g, "moments")
                for cutoff in (3, 4):
                    err = relative(point_transmission(mode, w, g, "fock", cutoff), t_mom)
                    if err > limits[cutoff]:
                        failures[cutoff] += 1
                    if err > worst[cutoff]:
                        worst[cutoff], where[cutoff] = err, (mode, w, g)
    record(2, "cross-engine agreement on the sweep grid",
           failures[3] == 0 and failures[4] == 0,
           f"{points} points; cutoff 3 max rel diff {worst[3]:.3%} at {where[3]} ({failures[3]} above 2%); "
           f"cutoff 4 max {worst[4]:.3%} at {where[4]} ({failures[4]} above 0.5%)")


def test_criterion_03_closure_certification():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    trials = 25
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        edges = [(i, j, rng.uniform(-1, 1)) for i in range(n) for j in range(i + 1, n)]
        net = validate_network(NetworkSpec.from_edges(
            n, edges, omega=rng.uniform(-1, 1, n), gamma_deph=rng.uniform(0, 1, n),
            injection=InjectionSpec(int(rng.integers(n)), rng.uniform(0, 1), rng.uniform(0, 0.5)),
            detection=DetectionSpec(int(rng.integers(n)), rng.uniform(0, 1)),
        ))
        basis = build_basis(n, 3)
        keep = np.flatnonzero(basis.occupations.max(axis=1) <= 2)
        x = rng.normal(size=(len(keep),) * 2) + 1j * rng.normal(size=(len(keep),) * 2)
        rho = np.zeros((basis.dim, basis.dim), dtype=complex)
        rho[np.ix_(keep, keep)] = x @ x.conj().T
        rho /= np.trace(rho)
        ops = [site_annihilator(basis, i) for i in range(n)]

        def moments(r):
            return np.array([[np.trace(r @ (ai.conj().T @ aj).toarray()) for aj in ops] for ai in ops])

        fock_rate = moments(build_liouvillian(net, basis).apply(rho))
        closure_rate = build_moment_generator(net).apply(moments(rho))
        worst = max(worst, float(np.abs(fock_rate - closure_rate).max()))
    elapsed = time.perf_counter() - start
    record(3, "moment closure certification", worst <= 1e-6 and elapsed < 60,
           f"{trials} random networks, max |dC/dt difference| {worst:.2e} (<=1e-6), {elapsed:.1f} s")


def test_criterion_04_physicality():
    details, ok = [], True
    for mode in ("constructive", "destructive"):
        net = validate_network(standard_four_site(mode))
        basis = build_basis(4, 3)
        L = build_liouvillian(net, basis)
        traj = evolve(L, DensityMatrix.vacuum(basis), 100.0)
        drift = float(np.abs(traj.trace - 1).max())
        lam = traj.final_state.min_eigenvalue()
        monotone = bool(np.all(np.diff(traj.e_tr) >= 0))
        t_ss = transmission(steady_state(L), net, basis)
        slope_err = relative(traj.energy.late_slope(), t_ss)
        ok &= drift <= 1e-8 and lam >= -1e-8 and monotone and slope_err <= 0.01
        details.append(f"{mode}: trace drift {drift:.1e}, min eig {lam:.1e}, E_tr monotone {monotone}, "
                       f"slope vs T rel err {slope_err:.2%}")
    record(4, "physicality along evolution", ok, "; ".join(details))


def _dephasing_curve(mode, omega2):
    spec = SweepSpec(mode, (omega2,), DEFAULT_DEPHASING_GRID, "fock", 3)
    return sweep_dephasing(spec)[0]


def test_criterion_05_nat_constructive():
    flat = _dephasing_curve("constructive", 0.0)
    monotone = bool(np.all(np.diff(flat.normalized) <= 0))
    no_peak = detect_nat_peak(flat) is None
    disordered = _dephasing_curve("constructive", 2.0)
    peak = detect_nat_peak(disordered)
    k = int(np.argmax(disordered.normalized))
    record(5, "NAT peak under constructive interference", monotone and no_peak and peak is not None,
           f"omega2=0 nonincreasing {monotone}, no peak {no_peak}; omega2=2 peak {peak} "
           f"(curve {disordered.normalized[0]:.4f} -> {disordered.normalized[-1]:.4f}, "
           f"max {disordered.normalized[k]:.4f} at gamma2={disordered.abscissa[k]:g})")


def test_criterion_06_destructive():
    clean = _dephasing_curve("destructive", 0.0)
    t00, t01 = clean.raw[0], clean.raw[-1]
    t20 = point_transmission("destructive", 2.0, 0.0, "fock", 3)
    is_min = bool(np.argmin(clean.raw) == 0)
    disordered = _dephasing_curve("destructive", 2.0)
    peak = detect_nat_peak(disordered)
    k = int(np.argmin(disordered.normalized))
    record(6, "destructive interference: noise assists transport",
           is_min and t01 > t00 and t20 > t00 and peak is not None,
           f"T(0,0)={t00:.5f} is curve minimum {is_min}; T(0,1)={t01:.5f}; T(2,0)={t20:.5f}; "
           f"omega2=2 peak {peak} (curve {disordered.normalized[0]:.4f} -> {disordered.normalized[-1]:.4f}, "
           f"min {disordered.normalized[k]:.4f} at gamma2={disordered.abscissa[k]:g})")


def test_criterion_07_robustness():
    spec = SweepSpec("constructive", DEFAULT_DISORDER_GRID, (0.0, 1.0), "fock", 3)
    c0, c1 = sweep_disorder(spec)
    x0 = half_crossing(c0.abscissa, c0.raw)
    x1 = half_crossing(c1.abscissa, c1.raw)
    passed = x0 is not None and (x1 is None or x1 > x0)
    record(7, "dephasing makes transport robust to disorder", passed,
           f"half-value crossing gamma2=0: {x0}, gamma2=1: {x1} "
           f"(gamma2=0 curve min {c0.raw.min() / c0.raw[0]:.3f} of start, "
           f"gamma2=1 curve min {c1.raw.min() / c1.raw[0]:.3f} of start, omega2 in [0, 2])")


def test_criterion_08_ensemble():
    kw = {"engine": "fock", "cutoff": 3}
    exact = all(
        ensemble_average_transmission(m, 0.0, 0.0, 9, **kw) == point_transmission(m, 0.0, 0.0, "fock", 3)
        for m in ("constructive", "destructive")
    )
    d0 = point_transmission("destructive", 0.0, 0.0, "fock", 3)
    d1 = ensemble_average_transmission("destructive", 0.0, 1.0, 21, **kw)
    c0 = point_transmission("constructive", 0.0, 0.0, "fock", 3)
    widths = (0.5, 1.0, 2.0, 4.0)
    cs = [ensemble_average_transmission("constructive", 0.0, w, 21, **kw) for w in widths]
    record(8, "ensemble emulation", exact and d1 > d0 and all(c <= c0 for c in cs),
           f"width-0 exact {exact}; destructive {d0:.5f} -> {d1:.5f} at width 1; "
           f"constructive {c0:.5f} vs averaged max {max(cs):.5f} over widths {widths}")


def test_criterion_09_transient():
    net = validate_network(standard_four_site())
    basis = build_basis(4, 3)
    L = build_liouvillian(net, basis)
    traj = evolve(L, DensityMatrix.vacuum(basis), 40.0)
    n_ss = transmission(steady_state(L), net, basis) / (2 * net.detection.rate_gamma_det)
    fit = transient_fit(traj, steady_value=n_ss)
    record(9, "exponential transient of the sink occupation", fit.goodness >= 0.99,
           f"fit a(1-exp(-b t)): b={fit.rate:.4f}, a={fit.amplitude:.4f}, R^2={fit.goodness:.4f} (>=0.99)")


def test_criterion_10_scaling():
    fock = complexity_benchmark("fock", [2, 3, 4, 5], cutoff=3, repetitions=3)
    mom = complexity_benchmark("moments", [4, 8, 16, 32, 64], repetitions=3)
    increasing = all(b > a for a, b in zip(fock.median, fock.median[1:]))
    passed = (fock.fit.goodness >= 0.9 and fock.fit.slope > 0 and mom.fit.slope <= 6)
    record(10, "computational scaling", passed,
           f"fock medians {[round(t, 3) for t in fock.median]} s, exp slope {fock.fit.slope:.3f}, "
           f"R^2 {fock.fit.goodness:.3f} (>=0.9), increasing {increasing}; "
           f"moments log-log slope {mom.fit.slope:.3f} (<=6)")
