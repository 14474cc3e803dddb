import numpy as np
import pytest

from salsa_tt.microstep import filter_matrix, weights_all_modes
from salsa_tt.rank_control import (
    OmegaSchedule,
    ProgressTracker,
    check_termination,
    classify_spectrum,
    decrease_rank,
    filter_fixpoints,
    increase_rank,
    minimal_filter_values,
    sigma_min_fixpoint,
    sigma_min_map,
    spectrum_change,
    stabilized_ranks,
    tt_dof,
    unblocked_ranks,
    update_omega,
)
from salsa_tt.solvers import SolverConfig
from salsa_tt.tt import constant_tensor, frobenius_norm, full_contract, standard_representation

from conftest import random_tt


def _weights(n, omega, boundary="formula"):
    return weights_all_modes(n, omega, boundary)


def test_theta_all_one_at_omega_zero():
    n = (4, 4, 4, 4)
    sigmas = [np.array([2.0, 1.0])] * 3
    fs = minimal_filter_values(sigmas, _weights(n, 0.0))
    for k, th in enumerate(fs.theta):
        np.testing.assert_array_equal(th, np.ones(2))
    # interior filters are identically one
    for f in fs.filters[1:-1]:
        np.testing.assert_array_equal(f, np.ones_like(f))


def test_theta_d2_two_sided():
    n = (6, 10)
    sigmas = [np.array([2.0, 0.5])]
    fs = minimal_filter_values(sigmas, _weights(n, 1.0))
    zx = 6.0 / 16.0
    zy = 10.0 / 16.0
    for i, s in enumerate(sigmas[0]):
        expect = max(1.0 / (1.0 + zx / s**2), 1.0 / (1.0 + zy / s**2))
        assert fs.theta[0][i] == pytest.approx(expect, rel=1e-14)


def test_theta_matches_scalar_recompute(rng):
    n = (5, 6, 7, 8)
    omega = 0.8
    sigmas = [np.sort(rng.random(3))[::-1] + 0.1 for _ in range(3)]
    weights = _weights(n, omega)
    fs = minimal_filter_values(sigmas, weights)
    ones = np.ones(1)
    for k in range(3):
        for i, s in enumerate(sigmas[k]):
            cands = []
            if k != 0:  # mode k+1 (0-based k) filter unless boundary-zeroed
                sl = sigmas[k - 1] if k > 0 else ones
                f = filter_matrix(sl, sigmas[k], weights[k])
                cands.append(f[0, i])
            if k + 1 != 3:
                sr = sigmas[k + 1] if k + 1 < 3 else ones
                f = filter_matrix(sigmas[k], sr, weights[k + 1])
                cands.append(f[i, 0])
            assert fs.theta[k][i] == pytest.approx(max(cands), rel=1e-13)


def test_classify_thresholds():
    fs_like = type("FS", (), {})()
    fs_like.theta = (np.array([0.995, 0.5, 0.2]),)
    labels = classify_spectrum(fs_like, 0.33, 0.99)
    assert list(labels[0]) == ["stabilized", "intermediate", "virtual"]
    assert stabilized_ranks(fs_like, 0.99) == [1]


def test_update_omega_residual_increase():
    cfg = SolverConfig()
    tr = ProgressTracker()
    tr.record(1.0, 1.0)
    tr.record(1.1, 1.1)
    fs = type("FS", (), {"theta": (np.array([0.999]),)})()
    sched = OmegaSchedule(0.5, 0.5, 1.1, np.array([1e-3]))
    new, dec = update_omega(sched, tr, fs, cfg, norm=1.0, sigma_change=1.0,
                            stab_ranks=[1], unblocked_empty=False)
    assert dec
    assert new.omega_tilde == pytest.approx(0.5 / 1.1)
    assert new.omega == pytest.approx(new.omega_tilde)


def test_update_omega_progress_keeps():
    cfg = SolverConfig()
    tr = ProgressTracker()
    for r in (1.0, 0.5, 0.25):
        tr.record(r, r)
    fs = type("FS", (), {"theta": (np.array([0.999]),)})()
    sched = OmegaSchedule(0.5, 0.5, 1.1, np.array([1e-3]))
    new, dec = update_omega(sched, tr, fs, cfg, norm=2.0, sigma_change=0.5,
                            stab_ranks=[1], unblocked_empty=False)
    assert not dec
    assert new.omega_tilde == 0.5
    assert new.omega == pytest.approx(1.0)


def test_update_omega_minimal_freezes():
    cfg = SolverConfig(r_lim=3)
    tr = ProgressTracker()
    tr.record(1.0, 1.0)
    tr.record(1.2, 1.2)
    fs = type("FS", (), {"theta": (np.array([0.9999, 0.9999, 0.9999]),)})()
    sched = OmegaSchedule(0.5, 0.5, 1.1, np.array([1e-3]))
    new, dec = update_omega(sched, tr, fs, cfg, norm=1.0, sigma_change=0.0,
                            stab_ranks=[3], unblocked_empty=False)
    assert new.minimal and not dec
    assert new.omega_tilde == 0.5


def test_sigma_min_nearly_constant_map():
    n = (4, 4, 4)
    sigmas = [np.array([1.0]), np.array([1.0])]
    weights = _weights(n, 50.0)  # huge omega -> theta_min ~ 0
    sched = OmegaSchedule(1.0, 50.0, 1.1, np.array([1e-6, 1e-6]))
    out = sigma_min_fixpoint(sched, sigmas, weights, n, res_p=1.0, res_p2=1.0,
                             p_count=32, p2_count=8, norm=1.0, steps=200)
    total = float(np.prod([4.0] * 3))
    res_est = (np.sqrt(total / 8)) ** 1.5 * (np.sqrt(total / 32)) ** (-0.5)
    np.testing.assert_allclose(out, res_est / 12, rtol=1e-6)


def test_sigma_min_omega_zero_floor():
    n = (4, 4, 4)
    sigmas = [np.array([1.0]), np.array([1.0])]
    sched = OmegaSchedule(0.0, 0.0, 1.1, np.array([1e-3, 1e-3]))
    out = sigma_min_fixpoint(sched, sigmas, weights_all_modes(n, 0.0), n,
                             res_p=1.0, res_p2=1.0, p_count=32, p2_count=8,
                             norm=2.0, steps=200)
    np.testing.assert_allclose(out, 1e-14 * 2.0)


def test_sigma_min_fixpoint_vs_bisection():
    n = (6, 6, 6)
    sigmas = [np.array([3.0, 1.0]), np.array([2.5, 0.8])]
    weights = _weights(n, 0.4)
    sched = OmegaSchedule(0.4, 0.4, 1.1, np.array([1e-2, 1e-2]))
    out = sigma_min_fixpoint(sched, sigmas, weights, n, res_p=0.5, res_p2=0.2,
                             p_count=100, p2_count=10, norm=3.2, steps=400)
    total = float(np.prod([6.0] * 3))
    res_est = (np.sqrt(total / 10) * 0.2) ** 1.5 * (np.sqrt(total / 100) * 0.5) ** (-0.5)
    for k in range(2):
        f = lambda s: sigma_min_map(s, k, sigmas, weights, res_est, 18.0, 3) - s
        lo, hi = 1e-16, res_est
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) > 0:
                lo = mid
            else:
                hi = mid
        root = 0.5 * (lo + hi)
        assert out[k] == pytest.approx(root, rel=1e-8)
        assert abs(out[k] - sigma_min_map(out[k], k, sigmas, weights, res_est, 18.0, 3)) \
            < 1e-10 * out[k]


def test_tt_dof():
    assert tt_dof([2, 2], (3, 3, 3)) == (6 + 12 + 6) - 8


def test_blocking_dof_clause():
    cfg = SolverConfig(r_lim=10, beta_min=0.02)
    tr = ProgressTracker()
    tr.record(1.0, 1.0)
    ranks = [3, 3, 3]
    n = (4, 4, 4, 4)
    dof = tt_dof(ranks, n)
    assert unblocked_ranks(tr, ranks, n, dof * 1.2 - 1, cfg) == set()
    assert unblocked_ranks(tr, ranks, n, dof * 1.2 + 1, cfg) != set()
    # structural variant ignores beta but keeps dof
    assert unblocked_ranks(tr, ranks, n, dof * 1.2 - 1, cfg, beta_clauses=False) == set()


def test_blocking_guard_fresh_run():
    cfg = SolverConfig(r_lim=10)
    tr = ProgressTracker()
    tr.record(1.0, 1.0)
    # sum(r) < 2(d-1): no blocking even with terrible betas
    tr.milestones["P"][1] = 1.0
    tr.milestones["P2"][1] = 1.0
    out = unblocked_ranks(tr, [1, 1, 1], (4, 4, 4, 4), 1000, cfg)
    assert out == {1, 2, 3}


def test_blocking_rank_cap():
    cfg = SolverConfig(r_lim=3)
    tr = ProgressTracker()
    tr.record(1.0, 1.0)
    out = unblocked_ranks(tr, [3, 2], (4, 4, 4), 10000, cfg)
    assert out == {2}
    # feasibility cap: rank cannot exceed adjacent unfolding sizes
    out = unblocked_ranks(tr, [2, 2], (2, 2, 4), 10000, SolverConfig(r_lim=9))
    assert 1 not in out  # bond 1 capped at n_1 = 2


def test_beta_milestone_lag():
    tr = ProgressTracker()
    d = 3
    tr.record(1.0, 1.0)
    tr.record_milestone(4, d)  # increase to sum(r)=4: key 4-2+1 = 3
    tr.record(0.5, 0.5)
    tr.record_milestone(5, d)  # key 4
    tr.record(0.4, 0.4)
    # lookup at sum(r)=5 -> key 3: compares against res before the previous increase
    assert tr.beta("P", 5, d) == pytest.approx(abs(1 - 0.4 / 1.0))


def test_increase_rank_constant():
    t = constant_tensor((3, 3, 3), 2.0)
    t2 = increase_rank(t, 2, 1e-3, seed=0)
    _, g = standard_representation(t2)
    norm = frobenius_norm(t)
    assert len(g.sigma[1]) == 2
    assert g.sigma[1][0] == pytest.approx(norm, rel=1e-10)
    assert g.sigma[1][1] == pytest.approx(1e-3, rel=1e-10)


def test_increase_rank_norm_change(rng):
    t = random_tt((4, 4, 4), (2, 2), rng)
    sig = 1e-4
    t2 = increase_rank(t, 1, sig, seed=3)
    delta = np.linalg.norm(full_contract(t2) - full_contract(t))
    assert delta == pytest.approx(sig, rel=1e-8)


def test_increase_rank_preserves_spectrum(rng):
    t = random_tt((4, 4, 4), (2, 2), rng)
    _, g0 = standard_representation(t)
    t2 = increase_rank(t, 2, 1e-6, seed=1)
    _, g2 = standard_representation(t2)
    np.testing.assert_allclose(g2.sigma[1][:2], g0.sigma[1],
                               rtol=1e-10, atol=1e-10 * g0.sigma[1][0])
    assert g2.sigma[1][2] == pytest.approx(1e-6, rel=1e-10)


def test_increase_rank_deterministic(rng):
    t = random_tt((4, 4, 4), (2, 2), rng)
    a = increase_rank(t, 2, 1e-3, seed=11)
    b = increase_rank(t, 2, 1e-3, seed=11)
    for ca, cb in zip(a.cores, b.cores):
        np.testing.assert_array_equal(ca, cb)


def test_increase_rank_infeasible():
    t = constant_tensor((2, 2), 1.0)
    t = increase_rank(t, 1, 0.1, seed=0)
    with pytest.raises(ValueError):
        increase_rank(t, 1, 0.1, seed=0)  # rank 3 > n = 2


def test_decrease_rank(rng):
    t = random_tt((4, 4, 4), (3, 2), rng)
    t2 = decrease_rank(t, 1)
    assert t2.bond_ranks == (2, 2)
    _, g = standard_representation(t)
    err = np.linalg.norm(full_contract(t2) - full_contract(t))
    assert err <= g.sigma[0][-1] * (1 + 1e-10)


def test_decrease_rank_floor_warns():
    t = constant_tensor((3, 3), 4.0)
    with pytest.warns(UserWarning):
        t2 = decrease_rank(t, 1)
    assert t2.bond_ranks == (1,)


def test_termination_table():
    cfg = SolverConfig()
    sched = OmegaSchedule(0.1, 0.1, 1.1, np.array([1e-3]), minimal=True)
    tr = ProgressTracker()
    tr.record(1.0, 1.0)
    assert check_termination(tr, sched, cfg) == "converged"
    sched.minimal = False
    tr = ProgressTracker(control_norm=1.0)
    for _ in range(5):
        tr.record(1.0, 0.1)
    tr.record(1.0, 1.0)  # 10x worse but iter <= 10
    assert check_termination(tr, sched, cfg) == "continue"
    tr = ProgressTracker(control_norm=1.0)
    for _ in range(11):
        tr.record(1.0, 0.1)
    tr.record(1.0, 0.3)  # 3x worse, iter 12 > 10
    assert check_termination(tr, sched, cfg) == "diverged"


def test_filter_fixpoints_values():
    stab, rep = filter_fixpoints(2.0, 1.0)
    assert stab == pytest.approx(1.0, abs=1e-15)
    assert rep == pytest.approx(1.0, abs=1e-15)
    # filter value at the turning point is exactly 1/2
    assert 1.0 / (1.0 + 1.0 / stab**2) == pytest.approx(0.5, abs=1e-12)
    stab, rep = filter_fixpoints(2.5, 1.0)
    assert stab == pytest.approx(2.0, abs=1e-13)
    assert rep == pytest.approx(0.5, abs=1e-13)
    assert filter_fixpoints(1.0, 1.0) == (None, None)


def test_fixpoint_attractivity():
    sigma_z, c = 3.0, 1.0
    stab, rep = filter_fixpoints(sigma_z, c)
    s = rep * 1.05
    for _ in range(500):
        s = sigma_z / (1.0 + c / s**2)
    assert s == pytest.approx(stab, rel=1e-10)
    s = rep * 0.95
    for _ in range(500):
        s = sigma_z / (1.0 + c / s**2)
        if s < rep * 1e-6:
            break
    assert s < rep * 1e-3


def test_theta_monotone_in_sigma():
    n = (5, 5, 5, 5)
    weights = _weights(n, 1.0)
    vals = []
    for s in (0.1, 0.3, 1.0, 3.0):
        sigmas = [np.array([3.0, s]), np.array([2.0, 1.0]), np.array([2.0, 1.0])]
        fs = minimal_filter_values(sigmas, weights)
        vals.append(fs.theta[0][1])
    assert np.all(np.diff(vals) > 0)


def test_spectrum_change():
    a = [np.array([2.0, 1.0])]
    b = [np.array([2.0, 1.0, 0.1])]  # new entry ignored
    assert spectrum_change(a, b) == 0.0
    c = [np.array([2.2, 1.0])]
    assert spectrum_change(a, c) == pytest.approx(0.2 / np.sqrt(5.0))


def test_theta_nonincreasing_in_index():
    n = (5, 5, 5, 5)
    weights = _weights(n, 1.0)
    sigmas = [np.array([3.0, 1.0, 0.3]), np.array([2.5, 0.9, 0.2]),
              np.array([2.0, 0.7, 0.1])]
    fs = minimal_filter_values(sigmas, weights)
    for th in fs.theta:
        assert np.all(np.diff(th) <= 1e-15)
