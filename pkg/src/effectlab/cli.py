"""Command-line entry point for reproducible batch workflows.

Subcommands: estimate, optimize, pci, plan, simulate, ablate. Every run
writes its artifacts plus one manifest recording the resolved configuration,
input digests, seed, and tool version; re-running with an identical manifest
reproduces byte-identical data files. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .effects import ShrinkageSpec, bootstrap_cis, estimate_effects_cm
from .objective import CostModel, ObjectiveSpec, objective_grid
from .optimize import SearchSpec, diag_dominance_check, multistart
from .pci import write_pci_csv
from .planning import bernstein_halfwidth, hoeffding_cell_n, uniform_cells_n
from .shapley import ValueOracle, mc_sample_size, mc_shapley, write_shapley_csv
from .sim import SuiteConfig, ablation_suite, comparison_suite, _sf_eval_set
from .space import (
    ReferenceDistribution,
    enumerate_grid,
    ingest_log,
    load_space,
    support_counts,
)


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, data: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, header_note: str, columns: list[str], rows: list[list]) -> None:
    import io

    buf = io.StringIO()
    buf.write(f"# {header_note}\n")
    writer = csv.writer(buf)
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue())


def _write_json(path: Path, payload) -> None:
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(value: float) -> str:
    return repr(float(value))


def _manifest(out: Path, subcommand: str, args: argparse.Namespace,
              inputs: list[str], outputs: list[str]) -> None:
    config = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func",) and not k.startswith("_")
    }
    payload = {
        "subcommand": subcommand,
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": sorted(outputs),
    }
    _write_json(out / "manifest.json", payload)


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(args):
    space = load_space(args.space)
    log = ingest_log(args.log, space)
    return space, log


def _reference_for(args, space, log):
    if args.background == "uniform":
        return ReferenceDistribution.uniform(space)
    if args.background == "empirical":
        return ReferenceDistribution.empirical(log)
    raise CommandError(f"unknown background {args.background!r}")


def _shrinkage_for(args) -> ShrinkageSpec:
    return ShrinkageSpec(tau_main=args.tau, tau_pair=args.tau)


def _objective_for(args, space) -> tuple[ObjectiveSpec, CostModel]:
    data = {}
    if getattr(args, "objective", None):
        with open(args.objective, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    spec = ObjectiveSpec.from_dict(space, data)
    cost = CostModel.from_dict(space, data)
    overrides = {}
    if args.lambda_risk is not None:
        overrides["lambda_risk"] = args.lambda_risk
    if args.lambda_cost is not None:
        overrides["lambda_cost"] = args.lambda_cost
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    return spec, cost


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _estimate_table(args, space, log, reference, collect_estimates=False):
    shrinkage = _shrinkage_for(args)
    if args.path == "cm":
        if args.bootstrap:
            table = bootstrap_cis(log, reference, shrinkage, B=args.bootstrap,
                                  level=args.ci_level, seed=args.seed)
        else:
            table = estimate_effects_cm(log, reference, shrinkage)
        return (table, None) if collect_estimates else table
    if args.path != "sf":
        raise CommandError(f"unknown estimation path {args.path!r}")
    ref = reference.product_marginals()
    oracle = ValueOracle.from_log(log, ref, warn=False)
    eval_set = _sf_eval_set(log, 4096)
    method = "exact" if space.num_factors <= 10 else "permutation"
    estimates = [mc_shapley(oracle, x, M=args.mc_samples, seed=args.seed + i,
                            method=method)
                 for i, x in enumerate(eval_set)]
    from .shapley import fit_effects_sf

    table = fit_effects_sf(estimates, space, ref, shrinkage,
                           support=support_counts(log), mu=oracle.v_empty)
    return (table, estimates) if collect_estimates else table


def cmd_estimate(args) -> list[str]:
    out = _prepare_out(args)
    space, log = _load_inputs(args)
    reference = _reference_for(args, space, log)
    table, estimates = _estimate_table(args, space, log, reference,
                                       collect_estimates=True)

    outputs = []
    _write_json(out / "effects.json", table.to_dict())
    outputs.append("effects.json")

    note = f"units: response; estimator: {args.path}"
    rows = []
    for j, f in enumerate(space.factors):
        means = table.level_means[j] if table.level_means is not None else None
        for l, label in enumerate(f.levels):
            if means is not None and not math.isnan(means[l]):
                mean = float(means[l])
            else:
                # attribution path has no raw cell means; report the aligned
                # per-level score instead
                mean = float(table.mu + table.mains[j][l])
            if table.level_means_ci is not None:
                lo, hi = (float(v) for v in table.level_means_ci[j][l])
            else:
                lo = hi = mean
            rows.append([f.name, label, _fmt(mean), _fmt(lo), _fmt(hi)])
    _write_csv(out / "main_effects.csv", note,
               ["factor", "level", "mean", "ci_lo", "ci_hi"], rows)
    outputs.append("main_effects.csv")

    rows = []
    for (j, k), mat in sorted(table.pairs.items()):
        fj, fk = space.factors[j], space.factors[k]
        ci = table.pairs_ci.get((j, k)) if table.pairs_ci else None
        for a, la in enumerate(fj.levels):
            for b, lb in enumerate(fk.levels):
                lo, hi = (ci[a, b] if ci is not None else (mat[a, b], mat[a, b]))
                rows.append([fj.name, fk.name, la, lb,
                             _fmt(mat[a, b]), _fmt(lo), _fmt(hi)])
    _write_csv(out / "interactions.csv", note,
               ["factor_j", "factor_k", "level_j", "level_k", "effect", "ci_lo", "ci_hi"],
               rows)
    outputs.append("interactions.csv")

    if args.path == "sf":
        if table.diagnostics:
            _write_json(out / "diagnostics.json", table.diagnostics)
            outputs.append("diagnostics.json")
        write_shapley_csv(estimates, space, out / "shapley.csv", header_note=note)
        outputs.append("shapley.csv")
    return outputs


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------

def cmd_optimize(args) -> list[str]:
    out = _prepare_out(args)
    space, log = _load_inputs(args)
    reference = _reference_for(args, space, log)
    table = _estimate_table(args, space, log, reference)
    spec, cost = _objective_for(args, space)
    support = support_counts(log)
    search = SearchSpec(restarts=args.restarts, beam=args.beam,
                        max_sweeps=args.max_sweeps, seed=args.seed)

    best, traces = multistart(table, support, spec, cost, search)
    J, feasible = objective_grid(table, support, spec, cost)
    report = diag_dominance_check(table, support, spec, cost)

    outputs = []
    chosen = {
        "config": dict(zip(space.names, space.labels_for(best))),
        "objective": float(J[best]),
        "one_swap_optimal": all(t.verified_1swap for t in traces if t.verified_1swap is not None),
        "restarts": len(traces),
    }
    _write_json(out / "chosen.json", chosen)
    outputs.append("chosen.json")

    note = "units: objective (response units); estimator: " + args.path
    rows = []
    for t_idx, trace in enumerate(traces):
        for sweep, config, value in trace.steps:
            rows.append([t_idx, sweep, *space.labels_for(config), _fmt(value)])
    _write_csv(out / "trace.csv", note,
               ["restart", "sweep", *space.names, "objective"], rows)
    outputs.append("trace.csv")

    _write_json(out / "dominance.json", report.to_dict(space))
    outputs.append("dominance.json")

    if space.grid_size <= 100_000:
        flat = [(float(J[x]), x) for x in enumerate_grid(space) if feasible[x]]
        flat.sort(key=lambda item: (-item[0], item[1]))
        top = flat[: args.topk]
        ci_by_config = {}
        if args.bootstrap and args.path == "cm":
            ci_by_config = _topk_bootstrap_cis(
                args, log, reference, spec, cost, [x for _, x in top]
            )
        rows = []
        for rank, (value, x) in enumerate(top, start=1):
            lo, hi = ci_by_config.get(x, (value, value))
            rows.append([rank, *space.labels_for(x), _fmt(value), _fmt(lo), _fmt(hi)])
        _write_csv(out / "topk.csv", note,
                   ["rank", *space.names, "objective", "ci_lo", "ci_hi"], rows)
        outputs.append("topk.csv")
    return outputs


def _topk_bootstrap_cis(args, log, reference, spec, cost, configs):
    from .effects import _estimate_arrays

    shrinkage = _shrinkage_for(args)
    space = log.space
    support = support_counts(log)
    n = len(log)
    values = {x: [] for x in configs}
    children = np.random.SeedSequence(args.seed).spawn(args.bootstrap)
    risk = {}
    for x in configs:
        risk[x] = sum(
            spec.gamma_for(space, j, k)
            / (support.pair_counts[(j, k)][x[j], x[k]] + spec.gamma_for(space, j, k))
            for j, k in space.pairs()
        )
    for b in range(args.bootstrap):
        rng = np.random.default_rng(children[b])
        idx = rng.integers(0, n, size=n)
        mu, mains, pairs, *_ = _estimate_arrays(
            log.configs_array[idx], log.responses[idx], log.weights[idx],
            space, reference, shrinkage,
        )
        for x in configs:
            val = mu + sum(mains[j][x[j]] for j in range(space.num_factors))
            val += sum(pairs[jk][x[jk[0]], x[jk[1]]] for jk in pairs)
            val -= spec.lambda_risk * risk[x]
            val -= spec.lambda_cost * cost.total(x)
            values[x].append(val)
    lo_q = 100.0 * (1.0 - args.ci_level) / 2.0
    return {
        x: (float(np.percentile(v, lo_q)), float(np.percentile(v, 100.0 - lo_q)))
        for x, v in values.items()
    }


# ---------------------------------------------------------------------------
# pci / plan / simulate / ablate
# ---------------------------------------------------------------------------

def cmd_pci(args) -> list[str]:
    out = _prepare_out(args)
    space, log = _load_inputs(args)
    reference = _reference_for(args, space, log)
    table = _estimate_table(args, space, log, reference)
    note = f"dimensionless; estimator: {args.path}; mode: {args.mode}"
    write_pci_csv(table, out / "pci.csv", mode=args.mode, header_note=note)
    return ["pci.csv"]


def cmd_plan(args) -> list[str]:
    if args.mc:
        union = None
        if args.union:
            if not args.eval_points:
                raise CommandError("--union needs --eval-points for the item count")
            union = args.factors * args.eval_points
        n = mc_sample_size(args.B, args.eps, args.delta, union_items=union)
        formula = (
            f"ceil(8 * B^2 / eps^2 * log(2{'*' + str(union) if union else ''}/delta)) "
            f"with B={args.B}, eps={args.eps}, delta={args.delta}"
        )
        label = "attribution samples"
    elif args.levels:
        Lj, Lk = (int(v) for v in args.levels.split(","))
        n = uniform_cells_n(args.B, args.eps, args.delta, Lj, Lk)
        formula = (
            f"ceil(2 * B^2 / eps^2 * log(2*{Lj}*{Lk}/delta)) "
            f"with B={args.B}, eps={args.eps}, delta={args.delta}"
        )
        label = "records per cell (uniform over cells)"
    else:
        n = hoeffding_cell_n(args.B, args.eps, args.delta)
        formula = (
            f"ceil(2 * B^2 / eps^2 * log(2/delta)) "
            f"with B={args.B}, eps={args.eps}, delta={args.delta}"
        )
        label = "records per cell"
    print(n)
    print(f"{label}: {formula}")
    payload = {"n": n, "kind": label, "formula": formula}
    if args.sigma is not None:
        hw = bernstein_halfwidth(args.sigma, args.B, max(n, 1), args.delta)
        payload["bernstein_halfwidth_at_n"] = hw
        print(f"variance-adaptive half-width at n={n}: {hw}")
    if args.out:
        out = _prepare_out(args)
        _write_json(out / "plan.json", payload)
        return ["plan.json"]
    return []


def cmd_simulate(args) -> list[str]:
    out = _prepare_out(args)
    if args.suite not in ("cm-vs-sf", "table2"):
        raise CommandError(f"unknown suite {args.suite!r}")
    cfg = SuiteConfig(trials=args.trials, seed=args.seed,
                      design_n=args.design_n, seeds_per_point=args.seeds_per_point)
    rows = comparison_suite(cfg)
    _write_result_rows(out / "results.csv", rows)
    _write_json(out / "suite_config.json", cfg.describe())
    return ["results.csv", "suite_config.json"]


def cmd_ablate(args) -> list[str]:
    out = _prepare_out(args)
    cfg = SuiteConfig(trials=args.trials, seed=args.seed)
    rows = ablation_suite(args.axis, cfg)
    _write_result_rows(out / "ablation.csv", rows)
    _write_json(out / "suite_config.json", cfg.describe())
    return ["ablation.csv", "suite_config.json"]


def _write_result_rows(path: Path, rows: list[dict]) -> None:
    cols = ["axis", "cell", "estimator", "metric", "mean", "ci_lo", "ci_hi",
            "n_trials", "config_hash"]
    data = [[_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols] for r in rows]
    _write_csv(path, "units: metric-dependent (response units for gap/recon)", cols, data)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effectlab",
        description="Factor-effect estimation, attribution, and configuration search",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p, needs_log=True):
        p.add_argument("--space", required=True, help="factor-space JSON document")
        if needs_log:
            p.add_argument("--log", required=True, help="run-log CSV")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--path", choices=["cm", "sf"], default="cm",
                       help="estimation path")
        p.add_argument("--background", choices=["uniform", "empirical"],
                       default="uniform")
        p.add_argument("--tau", type=float, default=1.0, help="shrinkage strength")
        p.add_argument("--bootstrap", type=int, default=0,
                       help="bootstrap replicates for intervals (cm path)")
        p.add_argument("--ci-level", type=float, default=0.95)
        p.add_argument("--mc-samples", type=int, default=2000,
                       help="attribution samples per evaluation point")

    p = sub.add_parser("estimate", help="effect tables and plot data from a log")
    add_io(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("optimize", help="search for the best configuration")
    add_io(p)
    p.add_argument("--lambda-risk", type=float, default=None)
    p.add_argument("--lambda-cost", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--objective", help="objective/cost JSON document")
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--beam", type=int, default=2)
    p.add_argument("--max-sweeps", type=int, default=100)
    p.add_argument("--topk", type=int, default=10)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("pci", help="standardized interaction heatmap data")
    add_io(p)
    p.add_argument("--mode", choices=["uniform", "weighted"], default="uniform")
    p.set_defaults(func=cmd_pci)

    p = sub.add_parser("plan", help="sample-size planning from concentration bounds")
    p.add_argument("--B", type=float, required=True, help="bound on |response|")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--levels", help="pair level counts as 'Lj,Lk' for the uniform bound")
    p.add_argument("--union", action="store_true",
                   help="union bound over factors x evaluation points (with --mc)")
    p.add_argument("--mc", action="store_true", help="plan attribution samples instead")
    p.add_argument("--factors", type=int, default=1)
    p.add_argument("--eval-points", type=int, default=0)
    p.add_argument("--sigma", type=float, default=None,
                   help="also report the variance-adaptive half-width")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="synthetic-teacher comparison suite")
    p.add_argument("--suite", default="cm-vs-sf")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--design-n", type=int, default=432)
    p.add_argument("--seeds-per-point", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ablate", help="one ablation axis of the simulation study")
    p.add_argument("--axis", required=True,
                   choices=["effects-order", "design-robustness",
                            "shap-background", "seed-budget"])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = Path(args.out) if getattr(args, "out", None) else None
    try:
        outputs = args.func(args)
        if out_dir is not None and outputs:
            inputs = [p for p in (getattr(args, "space", None), getattr(args, "log", None),
                                  getattr(args, "objective", None)) if p]
            _manifest(out_dir, args.command, args, inputs, outputs)
        return 0
    except Exception as exc:  # surfaced as machine-readable error JSON
        error = {"error": type(exc).__name__, "message": str(exc)}
        if out_dir is not None:
            try:
                out_dir.mkdir(parents=True, exist_ok=True)
                _write_json(out_dir / "error.json", error)
            except OSError:
                pass
        print(json.dumps(error), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
