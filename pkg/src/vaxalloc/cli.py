"""Command line entry points.

Subcommands: build-net (network files from inputs or a synthetic world),
simulate (one run), replicate (seeded batch), gains (compare two run dirs).
Exit codes: 0 success, 1 validation error, 2 epidemic instability.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, net
from .epi import EpidemicInstabilityError
from .policy import POLICIES
from .scenario import ScenarioConfig


def _cmd_build_net(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        nodes, airports, table = net.synth_world(
            args.n_nodes, args.n_agents, grid_spacing_km=args.grid_spacing_km,
            airport_density=args.airport_density, seed=args.seed)
        planar = True
        net.write_nodes(nodes, out / "nodes.csv")
        net.write_airports(airports, out / "airports.csv")
        net.write_air_flows(table, out / "airflows.csv")
    else:
        if not (args.nodes and args.airports and args.flights):
            raise ValueError("--nodes, --airports and --flights are required "
                             "unless --synthetic is given")
        nodes = net.read_nodes(args.nodes)
        airports = net.read_airports(args.airports)
        table = net.read_air_flows(args.flights)
        planar = args.planar
    network = net.build_network(nodes, airports, table, D=args.ground_range_km,
                                alpha=args.commute_fraction, planar=planar)
    net.export_network(network, out / "edges.csv", out / "rho.txt")
    print(f"network: {network.n} nodes, {network.flows.nnz} edges, "
          f"rho={network.rho:.6g}")
    return 0


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if getattr(args, "policy", None):
        overrides["policy"] = args.policy
    if getattr(args, "sharing", None):
        overrides["sharing"] = args.sharing == "on"
    if getattr(args, "budget_multiplier", None) is not None:
        overrides["budget_multiplier"] = args.budget_multiplier
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    result = harness.run(cfg)
    harness.export(result, args.out, overwrite=args.overwrite)
    s, i, r, d = result.global_totals[-1]
    print(f"policy={cfg.policy} sharing={'on' if cfg.sharing else 'off'} "
          f"seed={cfg.seed} final S={s:.1f} I={i:.1f} R={r:.1f} D={d:.1f}")
    return 0


def _cmd_replicate(args) -> int:
    cfg = _load_config(args)
    if args.seed_base is not None:
        cfg = cfg.replace(seed=args.seed_base)
    summary = harness.replicate(cfg, args.n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    mean = summary["final_totals_mean"]
    print(f"{args.n} runs, policy={cfg.policy}: mean final "
          f"S={mean[0]:.1f} I={mean[1]:.1f} R={mean[2]:.1f} D={mean[3]:.1f}")
    if "world_cumulative_gain_pct_mean" in summary:
        print(f"mean world cumulative gain vs PB: "
              f"{summary['world_cumulative_gain_pct_mean']:.3f}%")
    return 0


def _cmd_gains(args) -> int:
    result = harness.import_result(args.run)
    baseline = harness.import_result(args.baseline)
    report = harness.gains(result, baseline)
    if args.out:
        harness.export_gains(report, args.out)
    print(f"world cumulative gain: {report.world_cumulative_pct:.4f}%")
    print(f"world last-period gain: {report.world_last_period_pct:.4f}%")
    for a in range(report.cumulative_pct.shape[0]):
        print(f"agent {a}: cumulative {report.cumulative_pct[a]:.4f}% "
              f"last-period {report.last_period_pct[a]:.4f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vaxalloc")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-net", help="build and export a mobility network")
    b.add_argument("--nodes")
    b.add_argument("--airports")
    b.add_argument("--flights")
    b.add_argument("--synthetic", action="store_true")
    b.add_argument("--n-nodes", type=int, default=200)
    b.add_argument("--n-agents", type=int, default=5)
    b.add_argument("--grid-spacing-km", type=float, default=50.0)
    b.add_argument("--airport-density", type=float, default=0.05)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--ground-range-km", type=float, default=100.0)
    b.add_argument("--commute-fraction", type=float, default=0.11)
    b.add_argument("--planar", action="store_true",
                   help="treat coordinates as planar km instead of degrees")
    b.add_argument("--out", required=True)
    b.set_defaults(func=_cmd_build_net)

    s = sub.add_parser("simulate", help="run one scenario")
    s.add_argument("--config")
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--sharing", choices=["on", "off"])
    s.add_argument("--budget-multiplier", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=_cmd_simulate)

    r = sub.add_parser("replicate", help="run a seeded batch and aggregate")
    r.add_argument("--config")
    r.add_argument("--policy", choices=POLICIES)
    r.add_argument("--sharing", choices=["on", "off"])
    r.add_argument("--budget-multiplier", type=float)
    r.add_argument("--n", type=int, required=True)
    r.add_argument("--seed-base", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_replicate)

    g = sub.add_parser("gains", help="gain report of a run vs. a baseline run")
    g.add_argument("--run", required=True)
    g.add_argument("--baseline", required=True)
    g.add_argument("--out")
    g.set_defaults(func=_cmd_gains)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EpidemicInstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileExistsError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
