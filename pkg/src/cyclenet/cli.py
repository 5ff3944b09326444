"""Command-line interface.

Exit codes: 0 success, 1 infeasible, 2 input error, 3 resource limit.
Progress messages go to stderr; results go to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import analysis as an
from .assignment import AssignmentInfeasible, assign, travel_time_report, write_paths_csv, write_waiting_csv
from .greenband import emit_greenband
from .lp import LpNumericalError
from .mip import (
    GAP_LIMIT,
    INFEASIBLE,
    NODE_LIMIT,
    OPTIMAL,
    TIME_LIMIT,
    ModelError,
    branch_and_bound,
    build_mip,
    fix_symmetry,
    write_lp,
    write_mps,
)
from .network import NetworkError, expand_cyclic, validate_network
from .scenario import (
    Scenario,
    ScenarioError,
    default_schedules,
    gen_arterial,
    gen_grid,
    parse_scenario,
    random_schedules,
    write_scenario,
)
from .signals import SignalCompileError, SignalSchedule
from .simulator import (
    CompareRow,
    GridlockError,
    SimulationError,
    initial_plans,
    simulate,
    solve_user_equilibrium,
    write_events_csv,
    write_table_csv,
)

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_LIMIT = 0, 1, 2, 3
log = logging.getLogger("cyclenet")


class _Infeasible(Exception):
    pass


class _Limit(Exception):
    pass


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("CYCLENET_THREADS", "1")))
    except ValueError:
        return 1


def _schedule(sc: Scenario) -> SignalSchedule:
    return sc.schedule if sc.schedule is not None else default_schedules(sc.network)


def _optimize(sc: Scenario, gap=None, time_limit=None, node_limit=None, symmetry=False, method=None):
    exp = expand_cyclic(sc.network)
    model = build_mip(exp, sc.commodities)
    symmetry = symmetry or bool(sc.solver.get("fix_symmetry", False))
    method = method or sc.solver.get("method", "auto")
    if symmetry and model.group_order:
        model = fix_symmetry(model)
    gap = sc.solver.get("gap", 1e-4) if gap is None else gap
    time_limit = sc.solver.get("time_limit") if time_limit is None else time_limit
    node_limit = sc.solver.get("node_limit") if node_limit is None else node_limit
    return model, branch_and_bound(model, gap, time_limit, node_limit, method=method)


# -- subcommands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    sc = parse_scenario(args.scenario)
    rep = validate_network(sc.network)
    for w in sc.warnings:
        print(f"warning: {w}")
    if rep.ok:
        print(f"ok: {len(sc.network.nodes)} nodes, {len(sc.network.arcs)} arcs, "
              f"{len(sc.network.intersections)} intersections, {len(sc.commodities)} commodities")
        return EXIT_OK
    for v in rep:
        print(f"violation: {v}")
    return EXIT_INPUT


def cmd_expand(args) -> int:
    sc = parse_scenario(args.scenario)
    exp = expand_cyclic(sc.network)
    print(f"nodes {exp.n_nodes} transit {exp.n_transit} waiting {exp.n_waiting}")
    if args.output:
        with open(args.output, "wb") as fh:
            fh.write(exp.serialize())
    return EXIT_OK


def cmd_assign(args) -> int:
    sc = parse_scenario(args.scenario)
    exp = expand_cyclic(sc.network)
    try:
        fa = assign(exp, sc.commodities, _schedule(sc))
    except AssignmentInfeasible as exc:
        print(f"infeasible: {exc}")
        if exc.cut:
            print("cut: " + " ".join(exc.cut))
        return EXIT_INFEASIBLE
    rep = travel_time_report(fa)
    print(f"total_travel_time {fa.total_travel_time:.6f} s")
    for c in rep.commodities:
        print(f"commodity {c.commodity}: transit {c.transit_seconds:.6f} s waiting {c.waiting_seconds:.6f} s")
    for s, w in rep.signal_waiting.items():
        print(f"signal {s}: waiting {w:.6f} s")
    if args.paths_csv:
        write_paths_csv(fa, args.paths_csv)
    if args.waiting_csv:
        write_waiting_csv(fa, args.waiting_csv)
    return EXIT_OK


def cmd_optimize(args) -> int:
    sc = parse_scenario(args.scenario)
    model, sol = _optimize(sc, args.gap, args.time_limit, args.node_limit, args.fix_symmetry, args.method)
    if args.mps:
        write_mps(model, args.mps)
    if args.lp:
        write_lp(model, args.lp)
    print(f"status {sol.status}")
    if sol.status == INFEASIBLE:
        return EXIT_INFEASIBLE
    print(f"objective {sol.objective:.6f} s")
    print(f"dual_bound {sol.dual_bound:.6f} s")
    print(f"gap {sol.gap:.6g}")
    print(f"nodes {sol.node_count}")
    if sol.schedule is not None:
        for g, ivs in sol.schedule.intervals().items():
            print(f"group {g}: " + " ".join(f"[{a},{b})" for a, b in ivs))
        if args.output:
            write_scenario(replace(sc, schedule=sol.schedule), args.output)
    if sol.status in (TIME_LIMIT, NODE_LIMIT):
        return EXIT_LIMIT
    return EXIT_OK


def _link(args) -> an.LinkScenario:
    return an.LinkScenario.from_seconds(args.cycle, args.steps, args.free, (args.red_start, args.red_end),
                                        args.in_rate, args.out_rate)


def cmd_analyze(args) -> int:
    sc = _link(args)
    if args.kind == "uniform-curve":
        rates = np.linspace(0.0, args.max_rate, args.points) * sc.step_length
        curve = an.uniform_curve(sc, rates)
        curve = [(r / sc.step_length, t) for r, t in curve]
        for r, t in curve:
            print(f"{r:.6g} {t:.6f}")
        if args.csv:
            an.write_curve_csv(curve, args.csv, ("rate_veh_per_s", "average_travel_time_s"))
    elif args.kind == "platoon":
        lengths = np.arange(0.0, args.max_length + 1e-9, sc.step_length)
        curve = [(float(L), an.platoon_travel_time(sc, L, args.offset)) for L in lengths]
        for L, t in curve:
            print(f"{L:.6g} {t:.6f}")
        if args.csv:
            an.write_curve_csv(curve, args.csv, ("length_s", "average_travel_time_s"))
    else:
        lengths = np.arange(0.0, args.max_length + 1e-9, sc.step_length)
        offsets = np.arange(0.0, sc.cycle_time, sc.step_length)
        mat = an.platoon_surface(sc, lengths, offsets)
        print(f"surface {mat.shape[0]}x{mat.shape[1]} min {mat.min():.6f} max {mat.max():.6f}")
        if args.csv:
            an.write_surface_csv(lengths, offsets, mat, args.csv)
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = parse_scenario(args.scenario)
    sched = _schedule(sc)
    plans = initial_plans(sc.network, sched, sc.commodities)
    res = simulate(sc.network, sched, plans, sc.simulator.warmup, sc.simulator.measure, log_events=bool(args.events))
    print(f"agents {len(plans)}")
    print(f"total_travel_time {res.total:.6f} s")
    if args.events:
        write_events_csv(res, args.events)
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    sc = parse_scenario(args.scenario)
    params = sc.simulator if args.seed is None else replace(sc.simulator, seed=args.seed)
    if args.max_iter is not None:
        params = replace(params, max_iter=args.max_iter)
    res, rep = solve_user_equilibrium(sc.network, _schedule(sc), sc.commodities, params)
    print(f"status {rep.status}")
    print(f"iterations {rep.iterations}")
    print(f"total_travel_time {res.total:.6f} s")
    return EXIT_OK if rep.converged else EXIT_LIMIT


def _compare_one(payload):
    sc, name, sched = payload
    from .simulator import compare_so_ue

    return compare_so_ue(sc.network, sc.commodities, {name: sched}, sc.simulator)[0]


def cmd_compare(args) -> int:
    sc = parse_scenario(args.scenario)
    if args.seed is not None:
        sc = replace(sc, simulator=replace(sc.simulator, seed=args.seed))
    seed = sc.simulator.seed
    _model, sol = _optimize(sc, args.gap, args.time_limit, None, False)
    if sol.status == INFEASIBLE or sol.schedule is None:
        print("infeasible: no feasible schedule")
        return EXIT_INFEASIBLE
    schedules = {"opt": sol.schedule}
    for i, s in enumerate(random_schedules(sc.network, args.random, seed)):
        schedules[f"random{i + 1}"] = s
    payloads = [(sc, n, s) for n, s in schedules.items()]
    threads = args.threads or default_threads()
    rows: list[CompareRow] = []
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            rows = list(pool.map(_compare_one, payloads))
    else:
        for p in payloads:
            log.info("evaluating schedule %s", p[1])
            rows.append(_compare_one(p))
    print(f"{'schedule':<10} {'model_s':>14} {'simulated_s':>14} {'gap_%':>8}")
    for r in rows:
        print(f"{r.schedule:<10} {r.model_total:>14.3f} {r.simulated_total:>14.3f} {r.gap_percent:>8.3f}")
    if args.csv:
        write_table_csv(rows, args.csv)
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.kind == "arterial":
        sc = gen_arterial(args.n, args.spacing, args.steps, (args.through, args.opposing, args.cross),
                          cycle_time=args.cycle, cross_street=args.cross_street, pedestrian=args.pedestrian)
    else:
        sc = gen_grid(args.rows, args.cols, args.steps, args.pattern, ring=not args.no_ring, seed=args.seed,
                      n_commodities=args.commodities, cycle_time=args.cycle)
    write_scenario(sc, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_band(args) -> int:
    sc = parse_scenario(args.scenario)
    sched = _schedule(sc)
    if args.optimize:
        _m, sol = _optimize(sc, None, args.time_limit, None, False)
        if sol.schedule is None:
            print("infeasible: no feasible schedule")
            return EXIT_INFEASIBLE
        sched = sol.schedule
    fa = None
    if sc.commodities:
        try:
            fa = assign(expand_cyclic(sc.network), sc.commodities, sched)
        except AssignmentInfeasible as exc:
            print(f"infeasible: {exc}")
            return EXIT_INFEASIBLE
    svg, csv_path = emit_greenband(sc.network, sched, fa, args.output)
    print(f"wrote {svg} and {csv_path}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclenet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a scenario file")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("expand", help="build the cyclic time expansion")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", help="write the expansion as JSON")
    s.set_defaults(func=cmd_expand)

    s = sub.add_parser("assign", help="traffic assignment under the scenario's fixed schedule")
    s.add_argument("scenario")
    s.add_argument("--paths-csv")
    s.add_argument("--waiting-csv")
    s.set_defaults(func=cmd_assign)

    s = sub.add_parser("optimize", help="optimize signals and assignment together")
    s.add_argument("scenario")
    s.add_argument("--gap", type=float)
    s.add_argument("--time-limit", type=float)
    s.add_argument("--node-limit", type=int)
    s.add_argument("--fix-symmetry", action="store_true")
    s.add_argument("--method", choices=["auto", "simplex", "highs"], help="LP method (default auto)")
    s.add_argument("--mps", help="export the model in MPS format")
    s.add_argument("--lp", help="export the model in LP format")
    s.add_argument("-o", "--output", help="write the scenario with the optimized schedule")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("analyze", help="single-link travel-time analysis")
    s.add_argument("kind", choices=["uniform-curve", "platoon", "surface"])
    s.add_argument("--cycle", type=float, default=60.0)
    s.add_argument("--steps", type=int, default=60)
    s.add_argument("--free", type=float, default=10.0, help="free transit seconds")
    s.add_argument("--red-start", type=float, default=40.0)
    s.add_argument("--red-end", type=float, default=60.0)
    s.add_argument("--in-rate", type=float, default=1.0, help="incoming capacity, veh/s")
    s.add_argument("--out-rate", type=float, default=0.5, help="outgoing capacity, veh/s")
    s.add_argument("--max-rate", type=float, default=0.3, help="largest uniform rate, veh/s")
    s.add_argument("--points", type=int, default=31)
    s.add_argument("--max-length", type=float, default=30.0, help="longest platoon, s")
    s.add_argument("--offset", type=float, default=50.0, help="platoon head arrival, s")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="simulate shortest-route agents under the schedule")
    s.add_argument("scenario")
    s.add_argument("--events", help="write the event log CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("equilibrium", help="best-response user equilibrium in the simulator")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--max-iter", type=int)
    s.set_defaults(func=cmd_equilibrium)

    s = sub.add_parser("compare", help="model optimum vs simulated equilibrium for several schedules")
    s.add_argument("scenario")
    s.add_argument("--random", type=int, default=10)
    s.add_argument("--seed", type=int)
    s.add_argument("--gap", type=float)
    s.add_argument("--time-limit", type=float)
    s.add_argument("--threads", type=int)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("gen", help="generate a synthetic scenario")
    s.add_argument("kind", choices=["arterial", "grid"])
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--steps", type=int, default=60)
    s.add_argument("--cycle", type=float, default=60.0)
    s.add_argument("--n", type=int, default=2, help="arterial: number of signals")
    s.add_argument("--spacing", type=float, default=20.0, help="arterial: seconds between signals")
    s.add_argument("--through", type=float, default=30.0)
    s.add_argument("--opposing", type=float, default=0.0)
    s.add_argument("--cross", type=float, default=0.0)
    s.add_argument("--cross-street", action="store_true")
    s.add_argument("--pedestrian", type=int, default=0)
    s.add_argument("--rows", type=int, default=4)
    s.add_argument("--cols", type=int, default=4)
    s.add_argument("--pattern", default="random", choices=["random", "opposite"])
    s.add_argument("--no-ring", action="store_true")
    s.add_argument("--commodities", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("band", help="draw a green-band diagram")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--optimize", action="store_true")
    s.add_argument("--time-limit", type=float)
    s.set_defaults(func=cmd_band)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    try:
        return args.func(args)
    except an.OversaturatedError as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    except (ScenarioError, NetworkError, ModelError, SignalCompileError, OSError, ValueError) as exc:
        # ValueError covers out-of-range generator and analysis parameters
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GridlockError as exc:
        print(f"gridlock: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SimulationError, LpNumericalError) as exc:
        print(f"limit: {exc}", file=sys.stderr)
        return EXIT_LIMIT


if __name__ == "__main__":
    sys.exit(main())
