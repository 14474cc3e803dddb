"""Target tensors and the benchmark harness.

Closed-form targets are evaluated on demand from (m, d) arrays of 1-based
indices; structured low-rank targets are built as TT tensors with
prescribed bond spectra.  run_experiment drives repeated seeded trials and
aggregates relative residuals geometrically, matching the report layout
``target,d,n,C_sf,algorithm,trials,geo_mean_relC,geo_dev_relC,
geo_mean_relP,geo_dev_relP,mean_time_s,successes``.
"""

import time
from dataclasses import dataclass

import numpy as np

from .sampling import attach_values, generate_quasi_random, residual_on_set
from .solvers import SolverConfig, als_solve, greedy_als_solve, salsa_solve
from .tt import TTTensor, _canonicalize, evaluate_at, refold_left, unfold_left

__all__ = [
    "domino_value",
    "domino_target",
    "generic_value",
    "generic_target",
    "force_spectra",
    "random_tt_uniform_spectrum",
    "rank_adaption_tensor",
    "ExperimentSpec",
    "TrialRecord",
    "run_experiment",
    "report_csv",
    "REPORT_COLUMNS",
    "SUCCESS_THRESHOLD",
]

SUCCESS_THRESHOLD = 1e-5

REPORT_COLUMNS = (
    "target",
    "d",
    "n",
    "C_sf",
    "algorithm",
    "trials",
    "geo_mean_relC",
    "geo_dev_relC",
    "geo_mean_relP",
    "geo_dev_relP",
    "mean_time_s",
    "successes",
)

GENERIC_ARITY = {1: 8, 2: 7, 3: 11}


def domino_target(points):
    """(1 + sum_mu i_mu / i_{mu+1})^(-1), any order d >= 2."""
    idx = np.asarray(points, dtype=float)
    return 1.0 / (1.0 + np.sum(idx[:, :-1] / idx[:, 1:], axis=1))


def domino_value(idx):
    """Scalar domino value at one 1-based multi-index."""
    return float(domino_target(np.asarray(idx, dtype=float)[None, :])[0])


def generic_target(which, points):
    """The three benchmark functions with fixed arities 8, 7 and 11."""
    idx = np.asarray(points, dtype=float)
    if which not in GENERIC_ARITY:
        raise ValueError("unknown generic target %r" % (which,))
    if idx.shape[1] != GENERIC_ARITY[which]:
        raise ValueError(
            "generic target %d expects %d modes, got %d"
            % (which, GENERIC_ARITY[which], idx.shape[1])
        )
    i = [idx[:, k] for k in range(idx.shape[1])]
    if which == 1:
        return (
            i[0] / 4.0 * np.cos(i[2] - i[7])
            + i[1] ** 2 / (i[0] + i[5] + i[6])
            + i[4] ** 3 * np.sin(i[5] + i[2])
        )
    if which == 2:
        return (i[3] / (i[1] + i[5]) + i[0] + i[2] - i[4] - i[6]) ** 2
    return np.sqrt(
        i[2]
        + i[1]
        + 0.1 * (i[7] + i[6] + i[3] + i[4] + i[8])
        + 0.05 * (i[10] + i[0] - i[9] - i[5]) ** 2
    )


def generic_value(which, idx):
    return float(generic_target(which, np.asarray(idx, dtype=float)[None, :])[0])


def _draw_ranks(d, n, k, rng):
    """Uniform ranks on {1..k}, rejected until their mean reaches 2k/3."""
    left = np.cumprod(np.asarray(n, dtype=float))[:-1]
    right = np.cumprod(np.asarray(n[::-1], dtype=float))[:-1][::-1]
    cap = np.minimum(np.minimum(left, right), float(k))
    for _ in range(10000):
        r = np.minimum(rng.integers(1, k + 1, size=d - 1), cap).astype(int)
        if np.mean(r) >= 2.0 * k / 3.0:
            return [int(x) for x in r]
    raise RuntimeError("could not draw a rank vector with the required mean")


def random_tt_uniform_spectrum(d, n, k, seed):
    """Random TT tensor with prescribed uniform-random bond spectra.

    Core entries are uniform in [-0.5, 0.5]; every bond spectrum is then
    forced, by successive replacement sweeps, to sorted uniform [0, 1]
    values (normalized per bond, global scale free).  Raises when the rank
    constraints are infeasible.
    """
    if np.isscalar(n):
        n = (int(n),) * d
    n = tuple(int(m) for m in n)
    if len(n) != d:
        raise ValueError("mode sizes do not match the order")
    if k < 1:
        raise ValueError("rank bound must be at least 1")
    if k > min(n):
        raise ValueError("rank bound exceeds a mode size")
    rng = np.random.default_rng(seed)
    ranks = _draw_ranks(d, n, k, rng)
    full = [1] + ranks + [1]
    cores = [rng.random((full[m], n[m], full[m + 1])) - 0.5 for m in range(d)]
    targets = []
    for r in ranks:
        v = np.sort(rng.random(r))[::-1]
        targets.append(v / np.linalg.norm(v))
    return force_spectra(TTTensor(cores), targets)


def force_spectra(t, targets, passes=50, tol=1e-10):
    """Force the bond spectra to the prescribed shapes (up to global scale).

    ``targets`` holds one descending vector per bond whose length matches
    the bond rank; replacement sweeps run until the largest relative
    deviation drops below ``tol`` or ``passes`` sweeps are exhausted.
    """
    cores = [np.array(c) for c in t.cores]
    norm_targets = [np.asarray(v, dtype=float) / np.linalg.norm(v) for v in targets]
    for _ in range(passes):
        cores, dev = _replace_spectra(cores, norm_targets)
        if dev < tol:
            break
    return TTTensor(cores)


def _replace_spectra(cores, targets):
    """One forward sweep replacing each bond spectrum by its target."""
    d = len(cores)
    cores, _ = _canonicalize(cores, 0)
    dev = 0.0
    for m in range(d - 1):
        nm = cores[m].shape[1]
        u, s, vt = np.linalg.svd(unfold_left(cores[m]), full_matrices=False)
        tgt = targets[m]
        if len(s) != len(tgt):
            raise ValueError("bond rank changed during spectrum replacement")
        scale = np.linalg.norm(s)
        dev = max(dev, float(np.max(np.abs(s / scale - tgt))))
        new_s = scale * tgt
        cores[m] = refold_left(u, nm)
        cores[m + 1] = np.tensordot(new_s[:, None] * vt, cores[m + 1], axes=(1, 0))
    return cores, dev


def _random_orthogonal_cols(rows, cols, rng):
    if rows < cols:
        raise ValueError("cannot build %d orthonormal columns of height %d" % (cols, rows))
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def rank_adaption_tensor(n, k, alpha=1.0, beta=2.0, seed=0):
    """Order-6 separable product of a uniform-spectrum part and a matrix
    with exponentially decaying spectrum.

    Cores 2 and 3 are identity slices, the remaining factors are random
    orthogonal; the bond ranks come out as (k, k, k, 1, 2k), bonds 1-3
    carry the uniform value alpha and bond 5 decays like beta^-i.
    """
    n = tuple(int(m) for m in n)
    if len(n) != 6:
        raise ValueError("the construction is six-dimensional")
    if k < 1 or beta <= 1:
        raise ValueError("need k >= 1 and beta > 1")
    if n[0] < k or n[3] < k or n[4] < 2 * k or n[5] < 2 * k:
        raise ValueError("mode sizes too small for ranks (k, k, k, 1, 2k)")
    rng = np.random.default_rng(seed)
    q1 = _random_orthogonal_cols(n[0], k, rng)
    q4 = _random_orthogonal_cols(n[3], k, rng)
    q5 = _random_orthogonal_cols(n[4], 2 * k, rng)
    q6 = _random_orthogonal_cols(n[5], 2 * k, rng)
    sigma5 = beta ** -np.arange(1.0, 2 * k + 1.0)
    # scale so the uniform bonds sit exactly at alpha
    sigma5 *= alpha / (np.sqrt(n[1] * n[2]) * np.linalg.norm(sigma5))
    eye = np.eye(k)
    cores = [
        q1.reshape(1, n[0], k),
        np.broadcast_to(eye[:, None, :], (k, n[1], k)).copy(),
        np.broadcast_to(eye[:, None, :], (k, n[2], k)).copy(),
        q4.T.reshape(k, n[3], 1),
        q5.reshape(1, n[4], 2 * k),
        (sigma5[:, None] * q6.T).reshape(2 * k, n[5], 1),
    ]
    return TTTensor(cores)


@dataclass
class ExperimentSpec:
    """One benchmark family: a target kind plus sampling and solver knobs."""

    target: str
    d: int
    n: int
    c_sf: int
    r_p: int
    r_lim: int
    k: int = 6
    beta: float = 2.0
    trials: int = 5
    seed: int = 0
    seeds: list = None
    algorithms: tuple = ("salsa", "greedy_als")
    max_iters: int = 500
    success_threshold: float = SUCCESS_THRESHOLD

    def trial_seeds(self):
        if self.seeds:
            return list(self.seeds)[: self.trials]
        return [self.seed + 1000 * i for i in range(self.trials)]


@dataclass
class TrialRecord:
    target: str
    algorithm: str
    seed: int
    rel_p: float
    rel_c: float
    ranks: tuple
    stabilized_ranks: tuple
    verdict: str
    iterations: int
    wall_time_s: float
    error: str = ""


_SOLVERS = {
    "salsa": salsa_solve,
    "als": als_solve,
    "greedy_als": greedy_als_solve,
    "greedy-als": greedy_als_solve,
}


def _build_target(spec, seed):
    """Returns (vectorized value function, descriptive params)."""
    kind = spec.target
    if kind == "domino":
        return domino_target, {}
    if kind in ("generic1", "generic2", "generic3"):
        which = int(kind[-1])
        if spec.d != GENERIC_ARITY[which]:
            raise ValueError("target %s requires d = %d" % (kind, GENERIC_ARITY[which]))
        return (lambda pts: generic_target(which, pts)), {}
    if kind == "random_tt":
        t = random_tt_uniform_spectrum(spec.d, (spec.n,) * spec.d, spec.k, seed)
        return (lambda pts: evaluate_at(t, pts)), {"ranks": t.bond_ranks}
    if kind == "rank_adaption":
        if spec.d != 6:
            raise ValueError("the rank adaption target is six-dimensional")
        t = rank_adaption_tensor((spec.n,) * 6, spec.k, beta=spec.beta, seed=seed)
        return (lambda pts: evaluate_at(t, pts)), {"ranks": t.bond_ranks}
    raise ValueError("unknown target kind %r" % (kind,))


def run_trial(spec, algorithm, seed):
    """One seeded trial: sample, solve, measure on a fresh verification set."""
    n = (spec.n,) * spec.d
    value_fn, info = _build_target(spec, seed)
    p = attach_values(generate_quasi_random(n, spec.c_sf, spec.r_p, seed), value_fn)
    c = attach_values(generate_quasi_random(n, spec.c_sf, spec.r_p, seed + 104729), value_fn)
    config = SolverConfig(
        algorithm=algorithm.replace("-", "_"),
        r_lim=spec.r_lim,
        seed=seed,
        max_iters=spec.max_iters,
    )
    if spec.target in ("random_tt", "rank_adaption"):
        config.beta_min = 0.0
    solver = _SOLVERS[algorithm]
    t0 = time.perf_counter()
    result = solver(p, config)
    elapsed = time.perf_counter() - t0
    _, rel_c = residual_on_set(result.tensor, c)
    _, rel_p = residual_on_set(result.tensor, p)
    result.verification_rel = rel_c
    return TrialRecord(
        target=spec.target,
        algorithm=algorithm,
        seed=seed,
        rel_p=rel_p,
        rel_c=rel_c,
        ranks=result.ranks,
        stabilized_ranks=result.stabilized_ranks,
        verdict=result.verdict,
        iterations=result.iterations,
        wall_time_s=elapsed,
    ), result


def _geo_stats(values):
    arr = np.maximum(np.asarray(values, dtype=float), 1e-300)
    logs = np.log(arr)
    return float(np.exp(np.mean(logs))), float(np.exp(np.std(logs)))


def aggregate(spec, records):
    """Per-algorithm aggregate rows in the report column order.

    Failed trials (nonempty ``error``) count toward neither the geometric
    statistics nor the successes.
    """
    rows = []
    for algorithm in spec.algorithms:
        recs = [r for r in records if r.algorithm == algorithm and not r.error]
        if not recs:
            continue
        gm_c, gd_c = _geo_stats([r.rel_c for r in recs])
        gm_p, gd_p = _geo_stats([r.rel_p for r in recs])
        rows.append(
            {
                "target": spec.target,
                "d": spec.d,
                "n": spec.n,
                "C_sf": spec.c_sf,
                "algorithm": algorithm,
                "trials": len(recs),
                "geo_mean_relC": gm_c,
                "geo_dev_relC": gd_c,
                "geo_mean_relP": gm_p,
                "geo_dev_relP": gd_p,
                "mean_time_s": float(np.mean([r.wall_time_s for r in recs])),
                "successes": int(
                    sum(1 for r in recs if r.rel_c < spec.success_threshold)
                ),
            }
        )
    return rows


def run_experiment(spec, on_trial=None):
    """All trials of a spec; returns (records, aggregate rows).

    ``on_trial`` is called with each TrialRecord as it completes, so a
    partial run still leaves every finished record with the caller.  A
    failing trial is recorded (with its error message) and does not abort
    the experiment.
    """
    records = []
    for seed in spec.trial_seeds():
        for algorithm in spec.algorithms:
            try:
                rec, _ = run_trial(spec, algorithm, seed)
            except Exception as exc:  # noqa: BLE001 - trial failures are data
                rec = TrialRecord(spec.target, algorithm, seed, np.inf, np.inf,
                                  (), (), "error", 0, 0.0, error=str(exc))
            records.append(rec)
            if on_trial is not None:
                on_trial(rec)
    return records, aggregate(spec, records)


def report_csv(rows):
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in REPORT_COLUMNS))
    return "\n".join(lines) + "\n"
