"""Command-line surface: simulate, estimate, cluster, scenario-gen, report.

Thin orchestration over the library modules. All heavy lifting stays in
those modules; this layer parses flags, resolves scenario names/files,
writes tables + charts + a manifest per output directory, and maps
failures to exit codes (0 success, 1 user error, 2 internal error).
"""

import argparse
import math
import os
import sys
import time
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

from . import charts, storage
from .clustering import cluster_params, elbow_curve
from .engine import SimulationConfig, capacity_sweep, summarize
from .estimation import EstimationConfig, EstimationFailedError, estimate_patient
from .model import NoiseModel
from .policy import POLICY_KINDS, PolicySpec
from .scenarios import SamplingError, sample_cohort

OUT_DIR_ENV = "CHWPLAN_OUT"
DEFAULT_OUT_DIR = "chwplan-out"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; our contract reserves 2 for bugs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_out_dir(flag_value: Optional[str]) -> str:
    return flag_value or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR


def _parse_capacities(text: str) -> Tuple[float, ...]:
    """Percent list: either lo:hi:step or comma-separated values."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad capacity range {text!r}; expected lo:hi:step")
        try:
            lo, hi, step = (float(p) for p in parts)
        except ValueError:
            raise ValueError(f"bad capacity range {text!r}; expected numbers")
        if step <= 0 or lo > hi:
            raise ValueError(f"bad capacity range {text!r}; need lo <= hi, step > 0")
        pcts = []
        v = lo
        while v <= hi + 1e-9:
            pcts.append(round(v, 10))
            v += step
    else:
        try:
            pcts = [float(p) for p in text.split(",") if p.strip()]
        except ValueError:
            raise ValueError(f"bad capacity list {text!r}")
    if not pcts:
        raise ValueError("no capacity values given")
    for pct in pcts:
        if not (0.0 < pct <= 100.0):
            raise ValueError(f"capacity {pct}% outside (0, 100]")
    fractions = tuple(round(pct / 100.0, 12) for pct in pcts)
    if len(set(fractions)) != len(fractions):
        raise ValueError("duplicate capacity values")
    return tuple(sorted(fractions))


def _parse_float_list(text: str, flag: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ValueError(f"{flag}: bad number in {text!r}")
    if not values:
        raise ValueError(f"{flag}: empty list")
    return values


def _parse_policies(text: str) -> List[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    if not kinds:
        raise ValueError("no policies given")
    unknown = [k for k in kinds if k not in POLICY_KINDS]
    if unknown:
        raise ValueError(
            f"unknown policy {', '.join(map(repr, unknown))};"
            f" expected some of {', '.join(POLICY_KINDS)}"
        )
    if len(set(kinds)) != len(kinds):
        raise ValueError("duplicate policy names")
    return kinds


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    start = time.perf_counter()
    spec, spec_path = storage.load_scenario(args.scenario)
    if args.population is not None:
        spec = replace(spec, population=args.population)
    kinds = _parse_policies(args.policies)
    delta = math.log(args.delta_mgdl)
    policies = [PolicySpec(kind=k, delta=delta) for k in kinds]
    fractions = _parse_capacities(args.capacities)
    config = SimulationConfig(
        horizon=args.horizon,
        capacity_fractions=fractions,
        replications=args.reps,
        base_seed=args.seed,
        noise=NoiseModel(sigma_xi=args.sigma_xi),
        delta=delta,
    )

    def generator(seed: int):
        return sample_cohort(spec, seed).cohort

    results = capacity_sweep(generator, policies, config)
    out_dir = _resolve_out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    storage.write_results_csv(os.path.join(out_dir, "results.csv"), results)
    storage.write_summary_csv(os.path.join(out_dir, "summary.csv"),
                              summarize(results))
    manifest_config = {
        "scenario": storage.scenario_to_dict(spec),
        "policies": kinds,
        "capacity_pct": [round(f * 100.0, 10) for f in fractions],
        "replications": args.reps,
        "horizon": args.horizon,
        "sigma_xi": args.sigma_xi,
        "delta_mgdl": args.delta_mgdl,
        "population": spec.population,
    }
    storage.write_manifest(out_dir, storage.make_manifest(
        "simulate", manifest_config, args.seed,
        [spec_path] if spec_path else [],
        ["results.csv", "summary.csv"],
        time.perf_counter() - start,
    ))
    print(f"simulate: {len(results)} result cells"
          f" ({len(kinds)} policies x {len(fractions)} capacities x"
          f" {args.reps} replications) -> {out_dir}")
    return 0


def _cmd_estimate(args) -> int:
    start = time.perf_counter()
    histories = storage.ingest_histories(args.histories)
    if not histories:
        raise ValueError(f"{args.histories}: no visit records")
    config = EstimationConfig(
        grid_s_base=_parse_float_list(args.grid_s_base, "--grid-s-base"),
        grid_beta=_parse_float_list(args.grid_beta, "--grid-beta"),
        grid_gamma=_parse_float_list(args.grid_gamma, "--grid-gamma"),
        grid_rho=_parse_float_list(args.grid_rho, "--grid-rho"),
        sigma_eps=args.sigma_eps,
        sigma_xi=args.sigma_xi,
    )
    estimates = []
    for i, history in enumerate(histories):
        pid = history.patient_id or f"patient{i}"
        estimates.append((pid, estimate_patient(history, config)))
    out_dir = _resolve_out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    storage.write_estimates_csv(os.path.join(out_dir, "estimates.csv"),
                                estimates)
    manifest_config = {
        "histories": args.histories,
        "grid_s_base": list(config.grid_s_base),
        "grid_beta": list(config.grid_beta),
        "grid_gamma": list(config.grid_gamma),
        "grid_rho": list(config.grid_rho),
        "sigma_eps": config.sigma_eps,
        "sigma_xi": config.sigma_xi,
    }
    storage.write_manifest(out_dir, storage.make_manifest(
        "estimate", manifest_config, 0, [args.histories],
        ["estimates.csv"], time.perf_counter() - start,
    ))
    print(f"estimate: {len(estimates)} patients -> {out_dir}")
    return 0


def _cmd_cluster(args) -> int:
    start = time.perf_counter()
    ids, rows = storage.read_feature_table(args.params)
    result = cluster_params(rows, args.k, seed=args.seed)
    out_dir = _resolve_out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    outputs = ["centroids.csv", "assignments.csv"]
    storage.write_table(
        os.path.join(out_dir, "centroids.csv"),
        ("cluster",) + storage.FEATURE_COLUMNS,
        [(i,) + c for i, c in enumerate(result.centroids)],
    )
    storage.write_table(
        os.path.join(out_dir, "assignments.csv"),
        ("patient_id", "cluster"),
        list(zip(ids, result.assignments)),
    )
    elbow_config = None
    if args.elbow:
        parts = args.elbow.split(":")
        if len(parts) != 2:
            raise ValueError(f"bad --elbow {args.elbow!r}; expected kmin:kmax")
        try:
            k_min, k_max = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"bad --elbow {args.elbow!r}; expected integers")
        if not (1 <= k_min <= k_max):
            raise ValueError(f"bad --elbow {args.elbow!r}; need 1 <= kmin <= kmax")
        ks = list(range(k_min, k_max + 1))
        inertias = elbow_curve(rows, ks, seed=args.seed)
        storage.write_table(os.path.join(out_dir, "elbow.csv"),
                           ("k", "inertia"), list(zip(ks, inertias)))
        outputs.append("elbow.csv")
        elbow_config = [k_min, k_max]
    storage.write_manifest(out_dir, storage.make_manifest(
        "cluster",
        {"params": args.params, "k": args.k, "elbow": elbow_config},
        args.seed, [args.params], outputs, time.perf_counter() - start,
    ))
    print(f"cluster: k={args.k} inertia={result.inertia!r} -> {out_dir}")
    return 0


def _cmd_scenario_gen(args) -> int:
    start = time.perf_counter()
    spec, spec_path = storage.load_scenario(args.scenario)
    if args.population is not None:
        spec = replace(spec, population=args.population)
    sampled = sample_cohort(spec, args.seed)
    out_file = args.out or os.path.join(_resolve_out_dir(None), "cohort.csv")
    out_dir = os.path.dirname(out_file) or "."
    os.makedirs(out_dir, exist_ok=True)
    storage.write_cohort_csv(out_file, sampled)
    storage.write_manifest(out_dir, storage.make_manifest(
        "scenario-gen",
        {"scenario": storage.scenario_to_dict(spec),
         "population": spec.population},
        args.seed, [spec_path] if spec_path else [],
        [os.path.basename(out_file)], time.perf_counter() - start,
    ))
    print(f"scenario-gen: {len(sampled)} patients -> {out_file}")
    return 0


def _representative_pct(pcts: Sequence[float], target: float = 20.0) -> float:
    return min(sorted(set(pcts)), key=lambda p: (abs(p - target), p))


def _per_period_series(rows: List[dict], policy: str, pct: float,
                       numer: str, denom_key: Optional[str],
                       population: int) -> List[Tuple[float, float]]:
    by_period: Dict[int, List[dict]] = {}
    for r in rows:
        if r["policy"] == policy and r["capacity_pct"] == pct:
            by_period.setdefault(r["period"], []).append(r)
    series = []
    for period in sorted(by_period):
        cell = by_period[period]
        if denom_key is None:
            val = sum(r[numer] / population for r in cell) / len(cell)
        else:
            shares = [r[numer] / r[denom_key] for r in cell if r[denom_key] > 0]
            val = sum(shares) / len(shares) if shares else math.nan
        series.append((float(period), val))
    return series


def _cmd_report(args) -> int:
    start = time.perf_counter()
    res_dir = args.results
    manifest = storage.read_manifest(res_dir)
    results_path = os.path.join(res_dir, "results.csv")
    summary_path = os.path.join(res_dir, "summary.csv")
    for p in (results_path, summary_path):
        if not os.path.exists(p):
            raise ValueError(f"{res_dir}: missing {os.path.basename(p)}")
    rows = storage.read_results_csv(results_path)
    summary = storage.read_summary_csv(summary_path)
    if not rows or not summary:
        raise ValueError(f"{res_dir}: results are empty")
    config = manifest.get("config", {})
    population = config.get("population")
    if not isinstance(population, int) or population < 1:
        raise ValueError(f"{res_dir}: manifest lacks a usable population")
    delta_mgdl = config.get("delta_mgdl", 125.0)

    policies = sorted({r["policy"] for r in rows})
    pcts = sorted({r["capacity_pct"] for r in rows})
    detail_pct = _representative_pct(pcts)

    out_dir = args.out or os.path.join(res_dir, "charts")
    os.makedirs(out_dir, exist_ok=True)

    ppc_series = {
        p: [(s["capacity_pct"], s["ppc_mean"]) for s in summary
            if s["policy"] == p]
        for p in policies
    }
    ppc_bands = {
        p: [(s["capacity_pct"], s["ppc_mean"] - s["ppc_ci_halfwidth"],
             s["ppc_mean"] + s["ppc_ci_halfwidth"]) for s in summary
            if s["policy"] == p]
        for p in policies
    }
    charts.line_chart(
        os.path.join(out_dir, "ppc_vs_capacity.svg"),
        "Patient-periods in control vs capacity (95% CI)",
        "capacity (% of cohort)", "PPC fraction", ppc_series, ppc_bands,
    )
    charts.line_chart(
        os.path.join(out_dir, "screening_share.svg"),
        f"Screening share of visits per period at {_fmt_pct(detail_pct)}% capacity",
        "period", "screening visits / all visits",
        {p: _per_period_series(rows, p, detail_pct, "screening_visits",
                               "visits", population) for p in policies},
    )
    charts.line_chart(
        os.path.join(out_dir, "enrollment_share.svg"),
        f"Enrollment share per period at {_fmt_pct(detail_pct)}% capacity",
        "period", "enrolled fraction of cohort",
        {p: _per_period_series(rows, p, detail_pct, "enrolled", None,
                               population) for p in policies},
    )
    box_stats = {
        s["policy"]: (s["final_fbg_p25"], s["final_fbg_p50"],
                      s["final_fbg_p75"], s["final_fbg_p90"])
        for s in summary if s["capacity_pct"] == detail_pct
    }
    charts.box_chart(
        os.path.join(out_dir, "final_fbg.svg"),
        f"Final log-FBG quartiles (p90 whisker) at {_fmt_pct(detail_pct)}% capacity",
        "log-FBG", box_stats,
        reference=(f"in-control threshold ln({_fmt_pct(delta_mgdl)})",
                   math.log(delta_mgdl)),
    )
    outputs = ["ppc_vs_capacity.svg", "screening_share.svg",
               "enrollment_share.svg", "final_fbg.svg"]
    storage.write_manifest(out_dir, storage.make_manifest(
        "report",
        {"results_dir": res_dir, "detail_capacity_pct": detail_pct},
        0, [results_path, summary_path], outputs,
        time.perf_counter() - start,
    ))
    print(f"report: {len(outputs)} charts -> {out_dir}")
    return 0


def _fmt_pct(v: float) -> str:
    return f"{v:g}"


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chwplan",
                     description="Simulate and plan community-health-worker"
                                 " visit schedules.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a policy x capacity sweep")
    sim.add_argument("--scenario", required=True,
                     help="builtin scenario name or JSON file")
    sim.add_argument("--policies", required=True,
                     help=f"comma list from: {', '.join(POLICY_KINDS)}")
    sim.add_argument("--capacities", default="5:100:5",
                     help="percent range lo:hi:step or comma list"
                          " (default 5:100:5)")
    sim.add_argument("--reps", type=int, default=10)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--horizon", type=int, default=60)
    sim.add_argument("--population", type=int, default=None,
                     help="override the scenario's population")
    sim.add_argument("--sigma-xi", type=float, default=NoiseModel().sigma_xi)
    sim.add_argument("--delta-mgdl", type=float, default=125.0,
                     help="in-control FBG threshold in mg/dL")
    sim.add_argument("--out", default=None,
                     help=f"output directory (default ${OUT_DIR_ENV}"
                          f" or {DEFAULT_OUT_DIR})")
    sim.set_defaults(func=_cmd_simulate)

    est = sub.add_parser("estimate", help="fit patient parameters from"
                                          " visit histories")
    est.add_argument("--histories", required=True,
                     help="CSV: patient_id,period,visited,enrolled,fbg_mgdl")
    est.add_argument("--out", default=None)
    est.add_argument("--sigma-eps", type=float, default=0.1)
    est.add_argument("--sigma-xi", type=float, default=0.1)
    est.add_argument("--grid-s-base", default="0,1,2,3")
    est.add_argument("--grid-beta", default="0,1,2,3")
    est.add_argument("--grid-gamma", default="0.2,0.5,0.8,0.9,0.99")
    est.add_argument("--grid-rho", default="0.2,0.5,0.8,0.9,0.99")
    est.set_defaults(func=_cmd_estimate)

    clu = sub.add_parser("cluster", help="k-means over fitted parameters")
    clu.add_argument("--params", required=True,
                     help="CSV with columns " + ",".join(storage.FEATURE_COLUMNS))
    clu.add_argument("--k", type=int, required=True)
    clu.add_argument("--elbow", default=None, help="kmin:kmax inertia sweep")
    clu.add_argument("--seed", type=int, default=0)
    clu.add_argument("--out", default=None)
    clu.set_defaults(func=_cmd_cluster)

    gen = sub.add_parser("scenario-gen", help="sample a cohort parameter table")
    gen.add_argument("--scenario", required=True)
    gen.add_argument("--population", type=int, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default=None, help="output CSV file")
    gen.set_defaults(func=_cmd_scenario_gen)

    rep = sub.add_parser("report", help="render SVG charts from a results"
                                        " directory")
    rep.add_argument("--results", required=True,
                     help="directory written by simulate")
    rep.add_argument("--out", default=None,
                     help="chart directory (default <results>/charts)")
    rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, EstimationFailedError, SamplingError) as exc:
        print(f"chwplan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # noqa: BLE001 - contract: bugs exit 2
        print(f"chwplan {args.command}: internal error:"
              f" {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
