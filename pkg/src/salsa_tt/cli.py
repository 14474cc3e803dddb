"""Command-line front end: target generation, sampling, solving, benchmarks.

Every solve writes exactly one JSON manifest with the command echo, the
config snapshot, all seeds and the involved file paths, sufficient to
re-run bit-identically.  Exit codes: 0 success/converged, 2 usage or input
error, 3 diverged verdict, 4 internal numeric failure.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__
from .sampling import (
    attach_values,
    generate_quasi_random,
    load_samples,
    residual_on_set,
    save_samples,
    split_control,
)
from .solvers import SolverConfig, als_solve, greedy_als_solve, salsa_solve
from .testbed import (
    ExperimentSpec,
    _build_target,
    aggregate,
    report_csv,
    run_trial,
)
from .tt import load_tt, save_tt

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_NUMERIC = 4

_SOLVERS = {"salsa": salsa_solve, "als": als_solve, "greedy-als": greedy_als_solve}


class UsageError(Exception):
    pass


def _manifest(command, extra):
    out = {
        "command": command,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": __version__,
    }
    out.update(extra)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def parse_config_file(path):
    """Flat ``key = value`` lines with ``#`` comments; keys mirror SolverConfig."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError("%s:%d: expected 'key = value'" % (path, lineno))
            key, val = (x.strip() for x in line.split("=", 1))
            out[key] = val
    return out


def _coerce(value, typ):
    if typ is bool:
        return value.lower() in ("1", "true", "yes", "on")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    return value


def build_config(overrides):
    cfg = SolverConfig()
    known = {f.name: f.type for f in fields(SolverConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    for key, val in overrides.items():
        if key not in known:
            raise UsageError("unknown config key %r" % key)
        typ = types.get(known[key], str) if isinstance(known[key], str) else known[key]
        setattr(cfg, key, _coerce(val, typ) if isinstance(val, str) else val)
    cfg.__post_init__()
    return cfg


def _target_callable(manifest_path):
    """Rebuild a target value function from a gen-target manifest."""
    with open(manifest_path) as fh:
        man = json.load(fh)
    kind = man["kind"]
    if kind in ("domino", "generic1", "generic2", "generic3"):
        spec = ExperimentSpec(
            target=kind, d=man["d"], n=man["n"], c_sf=1, r_p=1, r_lim=2
        )
        fn, _ = _build_target(spec, man.get("seed", 0))
        return fn, man
    tt_file = man.get("tt_file")
    if not tt_file or not os.path.exists(tt_file):
        raise UsageError("manifest does not reference a readable TT file")
    from .tt import evaluate_at

    t = load_tt(tt_file)
    return (lambda pts: evaluate_at(t, pts)), man


def cmd_gen_target(args):
    spec = ExperimentSpec(
        target=args.kind,
        d=args.d,
        n=args.n,
        c_sf=1,
        r_p=1,
        r_lim=2,
        k=args.k,
        beta=args.beta,
    )
    try:
        fn, info = _build_target(spec, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    extra = {
        "kind": args.kind,
        "d": args.d,
        "n": args.n,
        "k": args.k,
        "beta": args.beta,
        "seed": args.seed,
    }
    if args.kind in ("random_tt", "rank_adaption"):
        from .testbed import random_tt_uniform_spectrum, rank_adaption_tensor

        if args.kind == "random_tt":
            t = random_tt_uniform_spectrum(args.d, (args.n,) * args.d, args.k, args.seed)
        else:
            t = rank_adaption_tensor((args.n,) * 6, args.k, beta=args.beta, seed=args.seed)
        tt_file = args.out + ".tt"
        save_tt(t, tt_file)
        extra["tt_file"] = tt_file
        extra["ranks"] = list(t.bond_ranks)
    _write_json(args.out, _manifest("gen-target", extra))
    print("wrote %s" % args.out)
    return EXIT_OK


def cmd_sample(args):
    n = (args.n,) * args.d
    p = generate_quasi_random(n, args.csf, args.rp, args.seed)
    extra = {
        "d": args.d,
        "n": args.n,
        "csf": args.csf,
        "rp": args.rp,
        "seed": args.seed,
        "control_frac": args.control_frac,
        "samples": len(p),
    }
    if args.target:
        fn, man = _target_callable(args.target)
        p = attach_values(p, fn)
        extra["target_manifest"] = args.target
    train, ctrl = split_control(p, args.control_frac, seed=args.seed)
    save_samples(train, args.out)
    control_path = args.control or args.out + ".control"
    save_samples(ctrl, control_path)
    extra["train_file"] = args.out
    extra["control_file"] = control_path
    _write_json(args.out + ".manifest", _manifest("sample", extra))
    print("wrote %s (%d points) and %s (%d points)" % (args.out, len(train), control_path, len(ctrl)))
    return EXIT_OK


def cmd_solve(args):
    if not os.path.exists(args.samples):
        raise UsageError("missing sample file %s" % args.samples)
    samples = load_samples(args.samples)
    control = None
    if args.control:
        if not os.path.exists(args.control):
            raise UsageError("missing control file %s" % args.control)
        control = load_samples(args.control)
    overrides = parse_config_file(args.config) if args.config else {}
    overrides.setdefault("algorithm", args.algorithm.replace("-", "_"))
    if args.rlim is not None:
        overrides["r_lim"] = args.rlim
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = build_config(overrides)
    solver = _SOLVERS[args.algorithm]
    result = solver(samples, config, control=control)
    if args.verify:
        verify = load_samples(args.verify)
        _, rel = residual_on_set(result.tensor, verify)
        result.verification_rel = rel
    summary = result.summary(config)
    summary["sample_file"] = args.samples
    out_path = args.out or args.samples + ".summary.json"
    _write_json(out_path, _manifest("solve", summary))
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(result.trace_csv())
    if args.tensor_out:
        save_tt(result.tensor, args.tensor_out)
    print(
        "verdict=%s iters=%d ranks=%s res_P=%.3e res_P2=%.3e"
        % (result.verdict, result.iterations, "x".join(map(str, result.ranks)),
           result.res_p_rel, result.res_p2_rel)
    )
    return EXIT_DIVERGED if result.verdict == "diverged" else EXIT_OK


def _spec_from_file(path):
    raw = parse_config_file(path)
    def need(key):
        if key not in raw:
            raise UsageError("benchmark spec misses %r" % key)
        return raw[key]

    return ExperimentSpec(
        target=need("target"),
        d=int(need("d")),
        n=int(need("n")),
        c_sf=int(need("c_sf")),
        r_p=int(need("r_p")),
        r_lim=int(need("r_lim")),
        k=int(raw.get("k", 6)),
        beta=float(raw.get("beta", 2.0)),
        trials=int(raw.get("trials", 5)),
        seed=int(raw.get("seed", 0)),
        algorithms=tuple(raw.get("algorithms", "salsa,greedy_als").split(",")),
        max_iters=int(raw.get("max_iters", 500)),
    )


def cmd_benchmark(args):
    spec = _spec_from_file(args.spec)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.csv")
    records = []

    def finish_trial(seed, alg, rec, result):
        # the report and the trial manifest are rewritten after every
        # completed trial, so an interrupted run keeps its finished rows
        records.append(rec)
        trial_dir = os.path.join(args.out, "trial_%s_%d" % (alg, seed))
        os.makedirs(trial_dir, exist_ok=True)
        _write_json(
            os.path.join(trial_dir, "manifest.json"),
            _manifest("benchmark-trial", result.summary()),
        )
        with open(report_path, "w") as fh:
            fh.write(report_csv(aggregate(spec, records)))

    jobs = args.jobs or int(os.environ.get("SALSA_TT_JOBS", "1"))
    work = [(seed, alg) for seed in spec.trial_seeds() for alg in spec.algorithms]
    if jobs > 1:
        from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(run_trial, spec, alg, seed): (seed, alg)
                for seed, alg in work
            }
            pending = set(futures)
            while pending:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    seed, alg = futures[fut]
                    rec, result = fut.result()
                    finish_trial(seed, alg, rec, result)
    else:
        for seed, alg in work:
            rec, result = run_trial(spec, alg, seed)
            finish_trial(seed, alg, rec, result)
    print("wrote %s (%d trials)" % (report_path, len(records)))
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(
        prog="salsa-tt",
        description="tensor-train completion toolkit (stabilized rank-adaptive ALS)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-target", help="write a target manifest (and TT file)")
    g.add_argument("--kind", required=True,
                   choices=["domino", "generic1", "generic2", "generic3",
                            "random_tt", "rank_adaption"])
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, default=6)
    g.add_argument("--beta", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_target)

    s = sub.add_parser("sample", help="generate a quasi-random sampling set")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--csf", type=int, required=True)
    s.add_argument("--rp", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--control-frac", type=float, default=1.0 / 20.0)
    s.add_argument("--target", help="gen-target manifest used to attach values")
    s.add_argument("--control", help="control-set output path")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    v = sub.add_parser("solve", help="run a completion solver on a sample file")
    v.add_argument("--samples", required=True)
    v.add_argument("--control")
    v.add_argument("--verify")
    v.add_argument("--algorithm", default="salsa", choices=sorted(_SOLVERS))
    v.add_argument("--rlim", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--config", help="key = value overrides for SolverConfig")
    v.add_argument("--trace", help="iteration trace CSV output")
    v.add_argument("--out", help="run summary JSON output")
    v.add_argument("--tensor-out", help="write the result tensor (TT text format)")
    v.set_defaults(func=cmd_solve)

    b = sub.add_parser("benchmark", help="run an experiment spec across trials")
    b.add_argument("--spec", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=None)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
