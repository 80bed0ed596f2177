"""Command-line interface: simulate / partition / calibrate / assign / export / report."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from collections import defaultdict

from . import demand as demand_mod
from .engine import Simulation, SimulationConfig
from .errors import EXIT_IO, EXIT_OK, InputError, MesoMacroError
from .network import (calibrate_underwood, load_mfds, load_network,
                      load_regions, write_mfds, write_regions)
from .output import export_geojson, make_recorders, write_outputs
from .partition import partition_network


def _load_net(nodes, links):
    return load_network(nodes, links)


def _network_dir_files(net_dir):
    nodes = os.path.join(net_dir, "nodes.csv")
    links = os.path.join(net_dir, "links.csv")
    for p in (nodes, links):
        if not os.path.exists(p):
            raise InputError(f"network dir misses {os.path.basename(p)}: {p}")
    return nodes, links


def cmd_simulate(args) -> int:
    config = SimulationConfig.from_json(args.config) if args.config else SimulationConfig()
    nodes, links = _network_dir_files(args.network)
    net = _load_net(nodes, links)
    regions_path = os.path.join(args.network, "regions.csv")
    if not os.path.exists(regions_path):
        raise InputError(f"missing {regions_path}; run `mesomacro partition` first")
    assignment = load_regions(regions_path, net)
    mfd_path = os.path.join(args.network, "mfd.csv")
    mfds = load_mfds(mfd_path) if os.path.exists(mfd_path) else {}

    if args.paths:
        packets = demand_mod.load_paths(args.paths, net)
    else:
        if not args.demand:
            raise InputError("either --demand or --paths is required")
        records = demand_mod.load_demand(args.demand, net, horizon=config.horizon_s)
        if config.assignment_type == "incremental":
            packets = demand_mod.assign_incremental(
                net, records, n_slices=config.n_slices,
                analysis_period_h=config.horizon_s / 3600.0)
        else:
            packets = demand_mod.assign_aon(net, records)

    sim = Simulation(config, net, assignment, mfds, packets)
    recorders = make_recorders(config)
    summary = sim.run(recorders)
    write_outputs(sim, recorders, args.out)
    print(f"steps={summary.steps}")
    print(f"wall_time_s={summary.wall_time_s:.3f}")
    print(f"departed_veh={summary.departed:.3f}")
    print(f"completed_trips={summary.completed_trips}")
    print(f"completed_veh={summary.completed_mass:.3f}")
    print(f"in_network_veh={summary.in_network:.3f}")
    print(f"pending_veh={summary.pending:.3f}")
    print(f"max_accumulation_veh={summary.max_accumulation:.3f}")
    print(f"gridlock_cycles={len(summary.gridlock_events)}")
    return EXIT_OK


def cmd_partition(args) -> int:
    net = _load_net(args.nodes, args.links)
    assignment = partition_network(net, min_region_size=args.min_region_size,
                                   resolution=args.resolution, seed=args.seed)
    write_regions(assignment, args.out)
    print(f"regions={len(set(assignment.values()))}")
    print(f"nodes={len(assignment)}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    samples = defaultdict(list)
    try:
        fh = open(args.samples, newline="")
    except OSError as exc:
        raise InputError(f"cannot open samples file: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            rid = (row.get("region_id") or "").strip()
            if not rid:
                raise InputError("missing region_id", row=row_no)
            try:
                n = float(row.get("accumulation_veh"))
                v = float(row.get("speed_mps"))
            except (TypeError, ValueError):
                raise InputError("bad accumulation_veh or speed_mps", row=row_no)
            samples[rid].append((n, v))
    mfds = {rid: calibrate_underwood(pairs) for rid, pairs in sorted(samples.items())}
    write_mfds(mfds, args.out)
    print(f"calibrated_regions={len(mfds)}")
    return EXIT_OK


def cmd_assign(args) -> int:
    net = _load_net(args.nodes, args.links)
    records = demand_mod.load_demand(args.demand, net, horizon=args.horizon)
    if args.method == "incremental":
        packets = demand_mod.assign_incremental(net, records, n_slices=args.n_slices,
                                                analysis_period_h=args.horizon / 3600.0)
    else:
        packets = demand_mod.assign_aon(net, records)
    demand_mod.write_paths(packets, args.out)
    print(f"packets={len(packets)}")
    print(f"assigned_veh={sum(p.size for p in packets):.3f}")
    return EXIT_OK


def cmd_export(args) -> int:
    net = _load_net(args.nodes, args.links)
    volume_rows = None
    if args.volumes:
        volume_rows = []
        with open(args.volumes, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                volume_rows.append((row["t_s"], row["link_id"], row["occupancy_veh"],
                                    row["density_veh_lane_km"], row["outflow_veh"]))
    t_range = None
    if args.t_start is not None and args.t_end is not None:
        t_range = (args.t_start, args.t_end)
    collection = export_geojson(net, volume_rows, t_range=t_range, bin_s=args.bin)
    with open(args.out, "w") as fh:
        json.dump(collection, fh, separators=(",", ":"))
    print(f"features={len(collection['features'])}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .figures import render_run_figures

    written = render_run_figures(args.run, args.out)
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mesomacro",
        description="Hybrid mesoscopic-macroscopic traffic simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulation and write outputs")
    p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
    p.add_argument("--network", required=True,
                   help="directory with nodes.csv, links.csv, regions.csv[, mfd.csv]")
    p.add_argument("--demand", help="demand CSV (origin_node,destination_node,depart_time_s,count)")
    p.add_argument("--paths", help="pre-assigned paths CSV (replays an assignment)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("partition", help="partition a network into regions")
    p.add_argument("--nodes", required=True)
    p.add_argument("--links", required=True)
    p.add_argument("--min-region-size", type=int, default=1, dest="min_region_size")
    p.add_argument("--resolution", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="regions.csv to write")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("calibrate", help="fit per-region speed laws from samples")
    p.add_argument("--samples", required=True,
                   help="CSV: region_id,accumulation_veh,speed_mps")
    p.add_argument("--out", required=True, help="mfd.csv to write")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("assign", help="assign demand to paths")
    p.add_argument("--nodes", required=True)
    p.add_argument("--links", required=True)
    p.add_argument("--demand", required=True)
    p.add_argument("--method", choices=("aon", "incremental"), default="aon")
    p.add_argument("--n-slices", type=int, default=4, dest="n_slices")
    p.add_argument("--horizon", type=float, default=86400.0)
    p.add_argument("--out", required=True, help="paths.csv to write")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("export", help="export the network (+volumes) as GeoJSON")
    p.add_argument("--nodes", required=True)
    p.add_argument("--links", required=True)
    p.add_argument("--volumes", help="link_volumes.csv from a run")
    p.add_argument("--t-start", type=int, default=None, dest="t_start")
    p.add_argument("--t-end", type=int, default=None, dest="t_end")
    p.add_argument("--bin", type=int, default=3600)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="render figures from a run's CSV outputs")
    p.add_argument("--run", required=True, help="directory with the run's CSV files")
    p.add_argument("--out", help="figure directory (defaults to the run dir)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MesoMacroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
