import numpy as np
import pytest

from salsa_tt.testbed import (
    ExperimentSpec,
    TrialRecord,
    _geo_stats,
    aggregate,
    domino_target,
    domino_value,
    force_spectra,
    generic_value,
    random_tt_uniform_spectrum,
    rank_adaption_tensor,
    report_csv,
    run_experiment,
    REPORT_COLUMNS,
)
from salsa_tt.tt import full_contract, standard_representation

from conftest import full_grid, random_tt


def test_domino_values():
    assert domino_value((1, 1, 1)) == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert domino_value((2, 1)) == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert domino_value((1,) * 6) == pytest.approx(1.0 / 6.0, abs=1e-15)


def test_generic_values():
    assert generic_value(1, (1,) * 8) == pytest.approx(
        0.25 * np.cos(0.0) + 1.0 / 3.0 + np.sin(2.0), abs=1e-14
    )
    assert generic_value(2, (1,) * 7) == pytest.approx(0.25, abs=1e-15)
    assert generic_value(3, (1,) * 11) == pytest.approx(np.sqrt(2.5), abs=1e-14)


def test_generic_arity_errors():
    with pytest.raises(ValueError):
        generic_value(1, (1,) * 7)
    with pytest.raises(ValueError):
        generic_value(4, (1,) * 8)


def test_domino_spectrum_decays():
    # every bond of the dense d=6, n=12 domino tensor decays exponentially;
    # the first bond falls below 1e-3 within five values (the middle bonds
    # sit just under 2e-3 there)
    pts = full_grid((12,) * 6)
    vals = domino_target(pts)
    for mu in (1, 2, 3):
        sv = np.linalg.svd(vals.reshape(12**mu, 12 ** (6 - mu)), compute_uv=False)
        assert sv[4] / sv[0] < 5e-3
    sv1 = np.linalg.svd(vals.reshape(12, 12**5), compute_uv=False)
    assert sv1[4] / sv1[0] < 1e-3


def test_random_tt_rank_one():
    t = random_tt_uniform_spectrum(3, (5, 5, 5), 1, seed=0)
    assert t.bond_ranks == (1, 1)
    _, g = standard_representation(t)
    for s in g.sigma:
        assert len(s) == 1


def test_force_spectra_prescribed(rng):
    t = random_tt((5, 4, 5), (2, 2), rng)
    targets = [np.array([1.0, 0.5]), np.array([1.0, 0.5])]
    t2 = force_spectra(t, targets)
    _, g = standard_representation(t2)
    for s in g.sigma:
        np.testing.assert_allclose(s / s[0], [1.0, 0.5], atol=1e-10)


def test_random_tt_spectrum_properties():
    t = random_tt_uniform_spectrum(4, (6, 6, 6, 6), 4, seed=3)
    ranks = t.bond_ranks
    assert max(ranks) <= 4
    assert np.mean(ranks) >= 2.0 * 4 / 3.0
    _, g = standard_representation(t)
    norms = [np.linalg.norm(s) for s in g.sigma]
    np.testing.assert_allclose(norms, norms[0], rtol=1e-10)
    # spectra descending and positive
    for s in g.sigma:
        assert np.all(np.diff(s) <= 0) and s[-1] > 0


def test_random_tt_validates():
    with pytest.raises(ValueError):
        random_tt_uniform_spectrum(3, (4, 4, 4), 5, seed=0)


def test_rank_adaption_tensor_structure():
    t = rank_adaption_tensor((6, 4, 4, 5, 6, 7), k=2, beta=2.0, seed=1)
    assert t.bond_ranks == (2, 2, 2, 1, 4)
    _, g = standard_representation(t)
    assert len(g.sigma[3]) == 1
    np.testing.assert_allclose(g.sigma[0], g.sigma[0][0], rtol=1e-10)
    ratios = g.sigma[4][1:] / g.sigma[4][:-1]
    np.testing.assert_allclose(ratios, 0.5, rtol=1e-10)


def test_rank_adaption_tensor_alpha_scale():
    t = rank_adaption_tensor((6, 4, 4, 5, 6, 7), k=2, beta=2.0, seed=1, alpha=3.0)
    _, g = standard_representation(t)
    np.testing.assert_allclose(g.sigma[0], 3.0, rtol=1e-10)


def test_rank_adaption_tensor_factorizes():
    n = (4, 3, 3, 4, 5, 5)
    t = rank_adaption_tensor(n, k=2, beta=1.5, seed=2)
    dense = full_contract(t)
    # separable across the rank-1 bond: A(i) = Q(i1..i4) * B(i5, i6)
    q = dense[:, :, :, :, 0, 0]
    b = dense[0, 0, 0, 0, :, :]
    scale = dense[0, 0, 0, 0, 0, 0]
    recon = np.einsum("abcd,ef->abcdef", q, b) / scale
    np.testing.assert_allclose(recon, dense, atol=1e-10 * np.abs(dense).max())


def test_rank_adaption_tensor_validates():
    with pytest.raises(ValueError):
        rank_adaption_tensor((2, 4, 4, 4, 6, 6), k=3, beta=2.0, seed=0)
    with pytest.raises(ValueError):
        rank_adaption_tensor((4, 4, 4, 4), k=2, beta=2.0, seed=0)


def test_geo_stats():
    gm, gd = _geo_stats([1e-4, 1e-6])
    assert gm == pytest.approx(1e-5, rel=1e-12)
    assert gd == pytest.approx(10.0, rel=1e-12)


def test_aggregate_single_record():
    spec = ExperimentSpec(target="domino", d=3, n=4, c_sf=1, r_p=1, r_lim=2,
                          trials=1, algorithms=("salsa",))
    rec = TrialRecord("domino", "salsa", 0, 1e-3, 2e-3, (1, 1), (1, 1),
                      "converged", 5, 0.1)
    rows = aggregate(spec, [rec])
    assert len(rows) == 1
    row = rows[0]
    assert row["geo_mean_relC"] == pytest.approx(2e-3)
    assert row["geo_mean_relP"] == pytest.approx(1e-3)
    assert row["successes"] == 0
    assert row["trials"] == 1


def test_success_counting():
    spec = ExperimentSpec(target="domino", d=3, n=4, c_sf=1, r_p=1, r_lim=2,
                          trials=3, algorithms=("salsa",))
    recs = [
        TrialRecord("domino", "salsa", i, 1e-6, rc, (1,), (1,), "converged", 1, 0.0)
        for i, rc in enumerate([1e-6, 1e-4, 9.9e-6])
    ]
    rows = aggregate(spec, recs)
    assert rows[0]["successes"] == 2


def test_report_csv_columns():
    spec = ExperimentSpec(target="domino", d=3, n=4, c_sf=1, r_p=1, r_lim=2,
                          trials=1, algorithms=("salsa",))
    rec = TrialRecord("domino", "salsa", 0, 1e-3, 2e-3, (1, 1), (1, 1),
                      "converged", 5, 0.1)
    csv = report_csv(aggregate(spec, [rec]))
    header = csv.split("\n")[0]
    assert header == ",".join(REPORT_COLUMNS)
    assert header == ("target,d,n,C_sf,algorithm,trials,geo_mean_relC,geo_dev_relC,"
                      "geo_mean_relP,geo_dev_relP,mean_time_s,successes")


def test_run_experiment_smoke():
    spec = ExperimentSpec(target="random_tt", d=3, n=5, c_sf=3, r_p=2, r_lim=3,
                          k=2, trials=2, seed=5, algorithms=("salsa",),
                          max_iters=150)
    seen = []
    records, rows = run_experiment(spec, on_trial=seen.append)
    assert len(records) == 2 and len(seen) == 2
    assert rows[0]["trials"] == 2
    assert all(r.rel_c < 0.9 for r in records)


def test_trial_seeds():
    spec = ExperimentSpec(target="domino", d=3, n=4, c_sf=1, r_p=1, r_lim=2,
                          trials=3, seed=10)
    assert spec.trial_seeds() == [10, 1010, 2010]
    spec2 = ExperimentSpec(target="domino", d=3, n=4, c_sf=1, r_p=1, r_lim=2,
                           trials=2, seeds=[3, 4, 5])
    assert spec2.trial_seeds() == [3, 4]


def test_run_experiment_records_failures(monkeypatch):
    import salsa_tt.testbed as tb

    spec = ExperimentSpec(target="random_tt", d=3, n=5, c_sf=3, r_p=2, r_lim=3,
                          k=2, trials=2, seed=5, algorithms=("salsa",),
                          max_iters=60)
    calls = {"n": 0}
    real = tb.run_trial

    def flaky(s, alg, seed):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("boom")
        return real(s, alg, seed)

    monkeypatch.setattr(tb, "run_trial", flaky)
    records, rows = tb.run_experiment(spec)
    assert len(records) == 2
    assert records[0].error == "boom" and records[1].error == ""
    assert rows[0]["trials"] == 1  # the failed trial is excluded
