"""Command-line surface.

Commands: score, fit-beta, select, rankcorr, rmse, oracle-check, simulate.
Exit codes: 0 ok, 1 usage error, 2 data error, 3 check failure. All
commands honor --seed and write outputs atomically, so reruns with the
same inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import oracle, tensorio
from .acquisition import (
    BalEntOptions,
    DegenerateDenominatorError,
    Measure,
    score_pool,
)
from .betamodel import ClampFlag, ClampPolicy, DataError, fit_pool
from .loop import (
    BudgetError,
    HistoryEntry,
    LoopConfig,
    PoolState,
    loop_step,
    select_topk,
)
from .rngstreams import derive_seed
from .specfun import ConvergenceError, DomainError
from .tensorio import ConfigError, TensorFormatError, atomic_writer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_balent_args(p):
    p.add_argument("--priority", choices=["P1", "P2", "P3"], default="P2")
    p.add_argument(
        "--precision-case", type=int, choices=[-1, 0, 1, 2, 3], default=1
    )


def _add_clamp_args(p):
    p.add_argument("--mean-eps", type=float, default=1e-6)
    p.add_argument("--var-eps", type=float, default=1e-12)
    p.add_argument("--var-rel-margin", type=float, default=1e-6)
    p.add_argument("--alpha-min", type=float, default=1e-4)
    p.add_argument("--alpha-max", type=float, default=1e6)


def _clamp_policy(args):
    return ClampPolicy(
        mean_eps=args.mean_eps,
        var_eps=args.var_eps,
        var_rel_margin=args.var_rel_margin,
        alpha_min=args.alpha_min,
        alpha_max=args.alpha_max,
    )


def _read_tensor_any(path):
    if path.endswith(".csv"):
        return tensorio.read_tensor_csv(path)
    return tensorio.read_tensor(path)


def cmd_score(args):
    samples = _read_tensor_any(args.input)
    scores = score_pool(
        samples,
        Measure(args.measure),
        BalEntOptions(args.priority, args.precision_case),
        seed=args.seed,
        power_bald_estimator=args.power_estimator,
        clamp_policy=_clamp_policy(args),
    )
    tensorio.write_scores_csv(args.output, scores.scores)
    return EXIT_OK


def cmd_fit_beta(args):
    samples = _read_tensor_any(args.input)
    marg = fit_pool(samples, _clamp_policy(args))
    with atomic_writer(args.output) as fh:
        fh.write("point,class,alpha,beta,mean,variance,clamp_flag\n")
        for n in range(marg.n_points):
            for c in range(marg.n_classes):
                fh.write(
                    f"{n},{c},{marg.alpha[n, c]:.17g},{marg.beta[n, c]:.17g},"
                    f"{marg.mean[n, c]:.17g},{marg.variance[n, c]:.17g},"
                    f"{ClampFlag(marg.clamp_flags[n, c]).name.lower()}\n"
                )
    print(f"clamp rate: {marg.clamp_rate:.6f}")
    return EXIT_OK


def _load_state(path, n_total):
    if os.path.exists(path):
        with open(path) as fh:
            raw = json.load(fh)
        return PoolState(
            raw["n_total"],
            tuple(raw["labeled"]),
            tuple(raw["unlabeled"]),
            tuple(
                HistoryEntry(
                    e["iteration"],
                    tuple(e["selected"]),
                    tuple(e["scores"]),
                    e["measure"],
                    e["seed"],
                )
                for e in raw["history"]
            ),
        )
    return PoolState.fresh(n_total)


def _save_state(path, state):
    payload = {
        "n_total": state.n_total,
        "labeled": list(state.labeled),
        "unlabeled": list(state.unlabeled),
        "history": [
            {
                "iteration": e.iteration,
                "selected": list(e.selected),
                "scores": list(e.scores),
                "measure": e.measure,
                "seed": e.seed,
            }
            for e in state.history
        ],
    }
    with atomic_writer(path) as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def cmd_select(args):
    if (args.scores is None) == (args.tensor is None):
        raise ConfigError("provide exactly one of --scores or --tensor")
    if args.scores is not None:
        values = tensorio.read_scores_csv(args.scores)
        state = _load_state(args.state, len(values))
        if state.n_labeled >= args.k_total or not state.unlabeled:
            _save_state(args.state, state)
            with atomic_writer(args.output) as fh:
                fh.write("iteration,rank,index,score\n")
            print("budget exhausted; empty selection")
            return EXIT_OK
        pool_scores = np.full(state.n_total, -np.inf)
        pool_scores[list(state.unlabeled)] = values[list(state.unlabeled)]
        # clip only against the remaining budget; a k beyond the pool is an error
        k_eff = min(args.k, args.k_total - state.n_labeled)
        selected = select_topk(pool_scores, state, k_eff)
        iteration = len(state.history)
        state = replace(
            state,
            labeled=state.labeled + tuple(selected),
            unlabeled=tuple(i for i in state.unlabeled if i not in set(selected)),
            history=state.history
            + (
                HistoryEntry(
                    iteration,
                    tuple(selected),
                    tuple(float(values[i]) for i in selected),
                    "precomputed",
                    None,
                ),
            ),
        )
    else:
        samples = _read_tensor_any(args.tensor)
        state = _load_state(args.state, samples.n_points)
        config = LoopConfig(
            k_per_iter=args.k,
            k_total=args.k_total,
            measure=Measure(args.measure),
            options=BalEntOptions(args.priority, args.precision_case),
            seed=args.seed or 0,
        )
        if len(state.unlabeled) != samples.n_points:
            raise DataError(
                f"tensor covers {samples.n_points} points but unlabeled pool "
                f"has {len(state.unlabeled)}"
            )
        state, done = loop_step(state, samples, config)
        if done and not state.history:
            print("budget exhausted; empty selection")
    _save_state(args.state, state)
    with atomic_writer(args.output) as fh:
        fh.write("iteration,rank,index,score\n")
        if state.history:
            last = state.history[-1]
            for rank, (idx, sc) in enumerate(zip(last.selected, last.scores)):
                fh.write(f"{last.iteration},{rank},{idx},{sc:.17g}\n")
    return EXIT_OK


def cmd_rankcorr(args):
    classes = [int(c) for c in args.classes.split(",")]
    measures = [Measure(m) for m in args.measures.split(",")]
    with atomic_writer(args.output) as fh:
        fh.write("n_classes,measure_a,measure_b,rho_mean,rho_sd\n")
        for c in classes:
            spec = oracle.SyntheticPoolSpec(
                args.kind, args.n_points, args.m_draws, c, seed=args.seed or 0
            )
            report = oracle.rank_correlation_study(spec, measures, args.repeats)
            for pair in report.pairs:
                sd = "" if pair.rho_sd is None else f"{pair.rho_sd:.6f}"
                fh.write(
                    f"{c},{pair.measure_a},{pair.measure_b},"
                    f"{pair.rho_mean:.6f},{sd}\n"
                )
    return EXIT_OK


def cmd_rmse(args):
    classes = [int(c) for c in args.classes.split(",")]
    with atomic_writer(args.output) as fh:
        fh.write("kind,n_classes,m_draws,repeats,rmse_mean,rho_mean\n")
        for c in classes:
            spec = oracle.SyntheticPoolSpec(
                args.kind, args.n_points, args.m_draws, c, seed=args.seed or 0
            )
            rmse, rho = oracle.rmse_study(spec, args.repeats)
            fh.write(
                f"{args.kind},{c},{args.m_draws},{args.repeats},"
                f"{rmse:.8f},{rho:.6f}\n"
            )
    return EXIT_OK


def cmd_oracle_check(args):
    if args.perturb_digamma:
        # self-test control: a perturbed kernel must trip the battery
        from . import specfun

        original = specfun.digamma
        eps = args.perturb_digamma

        def perturbed(x):
            return original(x) + eps * np.sin(np.asarray(x, dtype=np.float64))

        specfun.digamma = perturbed
        try:
            results = oracle.run_battery(full=args.full, seed=args.seed or 1234)
        finally:
            specfun.digamma = original
    else:
        results = oracle.run_battery(full=args.full, seed=args.seed or 1234)

    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = f"  [{r.detail}]" if r.detail else ""
        print(
            f"[{status}] {r.name}: measured {r.measured:.6g} "
            f"(tolerance {r.tolerance:.6g}){detail}"
        )
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} check(s) failed")
        return EXIT_CHECK
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_simulate(args):
    from . import moons

    cfg = tensorio.parse_run_config(args.config)
    outdir = args.outdir
    os.makedirs(outdir, exist_ok=True)
    with atomic_writer(os.path.join(outdir, "resolved-config.txt")) as fh:
        for key in sorted(cfg):
            fh.write(f"{key}={cfg[key]}\n")

    seed = int(cfg["seed"]) if args.seed is None else args.seed
    train_cfg = moons.TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        seed=seed,
    )
    dataset = moons.make_moons3(cfg["n_per_class"], cfg["noise_sd"], seed)
    options = BalEntOptions(cfg["priority"], cfg["precision_case"])

    if cfg["mode"] == "grid":
        test_model = moons.train(
            moons.MlpModel.init(derive_seed(seed, 5, 0)), dataset, train_cfg
        )
        tensorio.save_model(os.path.join(outdir, "model.npz"), test_model)
        bounds = tensorio.parse_grid_bounds(cfg["grid_bounds"])
        gs = moons.grid_scores(
            test_model,
            bounds,
            cfg["grid_resolution"],
            Measure(cfg["measures"].split(",")[0]),
            options,
            seed=seed,
            m_draws=cfg["m_draws"],
        )
        with atomic_writer(os.path.join(outdir, "grid.csv")) as fh:
            fh.write("x,y,score,balent_sign\n")
            for x, y, s, sn in zip(gs.xs, gs.ys, gs.scores, gs.balent_sign):
                fh.write(f"{x:.17g},{y:.17g},{s:.17g},{sn}\n")
        print(f"grid written to {outdir}/grid.csv")
        return EXIT_OK

    if cfg["mode"] != "curve":
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    test_set = moons.make_moons3(
        cfg["n_test_per_class"], cfg["noise_sd"], derive_seed(seed, 8, 77)
    )
    n_iterations = max(0, (cfg["k_total"] - cfg["n_initial"]) // cfg["k_per_iter"])
    rows = moons.run_experiment(
        dataset,
        test_set,
        [Measure(m) for m in cfg["measures"].split(",")],
        cfg["k_per_iter"],
        n_iterations,
        train_cfg,
        m_draws=cfg["m_draws"],
        n_initial=cfg["n_initial"],
        repeats=cfg["repeats"],
        seed=seed,
        options=options,
    )
    with atomic_writer(os.path.join(outdir, "curves.csv")) as fh:
        fh.write("measure,iteration,n_labeled,accuracy\n")
        for row in rows:
            fh.write(
                f"{row.measure},{row.iteration},{row.n_labeled},"
                f"{row.accuracy:.6f}\n"
            )
    print(f"curves written to {outdir}/curves.csv")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="betaacq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a sample tensor with one measure")
    p.add_argument("input")
    p.add_argument("--measure", required=True, choices=[m.value for m in Measure])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", required=True)
    p.add_argument("--power-estimator", choices=["mc", "beta"], default="mc")
    _add_balent_args(p)
    _add_clamp_args(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit-beta", help="dump fitted Beta marginals as CSV")
    p.add_argument("input")
    p.add_argument("--output", required=True)
    _add_clamp_args(p)
    p.set_defaults(func=cmd_fit_beta)

    p = sub.add_parser("select", help="top-K selection and pool-state update")
    p.add_argument("--scores")
    p.add_argument("--tensor")
    p.add_argument("--measure", default="balentacq",
                   choices=[m.value for m in Measure])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--k-total", type=int, default=2**31 - 1)
    p.add_argument("--state", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=None)
    _add_balent_args(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("rankcorr", help="pairwise Spearman rank-correlation study")
    p.add_argument("--kind", choices=["dirichlet", "softmax_gaussian"],
                   default="softmax_gaussian")
    p.add_argument("--n-points", type=int, default=100)
    p.add_argument("--m-draws", type=int, default=1000)
    p.add_argument("--classes", default="10,100,1000")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument(
        "--measures",
        default="beta_marginal_bald,expected_effective_loss,mc_bald",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_rankcorr)

    p = sub.add_parser("rmse", help="MC-vs-marginal BALD RMSE study")
    p.add_argument("--kind", choices=["dirichlet", "softmax_gaussian"],
                   default="dirichlet")
    p.add_argument("--n-points", type=int, default=100)
    p.add_argument("--m-draws", type=int, default=10000)
    p.add_argument("--classes", default="10,100")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_rmse)

    p = sub.add_parser("oracle-check", help="run the oracle invariant battery")
    p.add_argument("--full", action="store_true",
                   help="acceptance-scale set sizes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--perturb-digamma", type=float, default=0.0,
                   help="self-test control: perturb the kernel and expect failures")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("simulate", help="moons end-to-end runs or grid maps")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TensorFormatError, DataError, ConfigError, DomainError,
            BudgetError, ConvergenceError, DegenerateDenominatorError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining ValueErrors are bad argument combinations
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
