"""Simulation output: sampled CSV series, completion log, GeoJSON export.

All numeric fields use fixed 6-decimal formatting and integer-second
timestamps so repeated runs produce byte-identical files. Recorders buffer
rows during the run and flush once at the end. Volume and trajectory rows
cover only entities active at the sample instant to bound file sizes.
"""

from __future__ import annotations

import csv
import json
import os

from .engine import Simulation
from .errors import InputError, OutputError
from .network import RoadNetwork


def _f(x) -> str:
    return f"{x:.6f}"


class RegionRecorder:
    """Samples per-region accumulation and speed at a fixed step stride."""

    header = ("t_s", "region_id", "accumulation_veh", "speed_mps")
    filename = "region_accumulation.csv"

    def __init__(self, stride_steps=60):
        self.stride = max(1, int(stride_steps))
        self.rows = []

    def sample(self, sim: Simulation, metrics):
        if metrics.step % self.stride:
            return
        acc = sim.region_accumulation()
        speeds = sim.region_speeds()
        t = int(round(metrics.t_s))
        for rid in acc:
            self.rows.append((t, rid, _f(acc[rid]), _f(speeds[rid])))

    def write(self, path):
        _write_csv(path, self.header, self.rows)


class VolumeRecorder:
    """Samples occupancy/density/outflow of occupied links at a stride."""

    header = ("t_s", "link_id", "occupancy_veh", "density_veh_lane_km", "outflow_veh")
    filename = "link_volumes.csv"

    def __init__(self, stride_steps=60):
        self.stride = max(1, int(stride_steps))
        self.rows = []

    def sample(self, sim: Simulation, metrics):
        if metrics.step % self.stride:
            return
        t = int(round(metrics.t_s))
        step = metrics.step
        for lid in sorted(el.link.id for el in sim._active_links):
            el = sim.link_elements[lid]
            outflow = el.last_out if el.last_out_step == step else 0.0
            if el.mass <= 1e-9 and outflow <= 0.0:
                continue
            link = el.link
            density = el.mass / (link.lanes * link.length_m / 1000.0)
            self.rows.append((t, lid, _f(el.mass), _f(density), _f(outflow)))

    def write(self, path):
        _write_csv(path, self.header, self.rows)


class TrajectoryRecorder:
    """Samples per-packet locations at a stride.

    Link-model packets carry a longitudinal fraction in [0, 1]; reservoir
    packets carry their remaining intra-region distance (the model has no
    spatial position). Speeds are per-element estimates: vehicle-meters
    advanced this step divided by vehicle-steps for links, the region speed
    for reservoirs.
    """

    header = ("packet_id", "parent_id", "t_s", "element_type", "element_id",
              "position", "speed_mps")
    filename = "trajectories.csv"

    def __init__(self, stride_steps=60):
        self.stride = max(1, int(stride_steps))
        self.rows = []

    def sample(self, sim: Simulation, metrics):
        if metrics.step % self.stride:
            return
        t = int(round(metrics.t_s))
        step = metrics.step
        dt = sim.config.dt_s
        for lid in sorted(el.link.id for el in sim._active_links):
            el = sim.link_elements[lid]
            link = el.link
            speed = el.advanced_m / (el.mass * dt) if el.mass > 1e-12 else 0.0
            if hasattr(el, "queues"):  # cell-based link
                for p, cell in el.resident_packets():
                    self.rows.append((p.id, p.root_id, t, "link", lid,
                                      _f(el.position_fraction(cell)), _f(speed)))
            else:
                ahead = 0.0
                for p in el.resident_packets():
                    free = (step - p.entry_step) * dt * link.vf_mps / link.length_m
                    cap = 1.0 - ahead / el.jam_storage
                    frac = max(0.0, min(free, cap, 1.0))
                    self.rows.append((p.id, p.root_id, t, "link", lid,
                                      _f(frac), _f(speed)))
                    ahead += p.size
        for rs in sim._bathtub_list:
            rows = [(p.id, p.root_id, t, "region", rs.region_id,
                     _f(remaining), _f(rs.current_speed if remaining > 0 else 0.0))
                    for p, remaining in rs.resident_packets()]
            rows.sort()
            self.rows.extend(rows)

    def write(self, path):
        _write_csv(path, self.header, self.rows)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}")


def make_recorders(config) -> list:
    """Recorders matching the enabled outputs of a SimulationConfig."""
    out = config.outputs
    dt = config.dt_s
    recorders = []
    if out.region_accumulation:
        recorders.append(RegionRecorder(round(out.accumulation_stride_s / dt)))
    if out.link_volumes:
        recorders.append(VolumeRecorder(round(out.volume_stride_s / dt)))
    if out.trajectories:
        recorders.append(TrajectoryRecorder(round(out.trajectory_stride_s / dt)))
    return recorders


def write_gridlock(events, path):
    rows = [(int(round(e.t_detected)), ";".join(e.cycle), _f(e.blocked_vehicles))
            for e in events]
    _write_csv(path, ("t_detected", "cycle_links", "blocked_vehicles"), rows)


def write_completions(completions, path):
    rows = [(c.packet_id, c.root_id, _f(c.depart_time), _f(c.completion_time), _f(c.size))
            for c in completions]
    _write_csv(path, ("packet_id", "parent_id", "depart_time_s", "completion_time_s", "size"),
               rows)


def write_outputs(sim: Simulation, recorders, out_dir, net: RoadNetwork | None = None):
    """Flush all enabled outputs into ``out_dir``; returns the written paths."""
    cfg = sim.config
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output dir {out_dir}: {exc}")
    written = []
    volume_rows = None
    for rec in recorders:
        path = os.path.join(out_dir, rec.filename)
        rec.write(path)
        written.append(path)
        if isinstance(rec, VolumeRecorder):
            volume_rows = rec.rows
    if cfg.outputs.gridlock_report:
        path = os.path.join(out_dir, "gridlock.csv")
        write_gridlock(sim.gridlock_events, path)
        written.append(path)
    path = os.path.join(out_dir, "completions.csv")
    write_completions(sim.completions, path)
    written.append(path)
    if cfg.outputs.geojson:
        if net is None:
            net = sim.net
        path = os.path.join(out_dir, "network.geojson")
        feature_collection = export_geojson(net, volume_rows)
        try:
            with open(path, "w") as fh:
                json.dump(feature_collection, fh, separators=(",", ":"))
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}")
        written.append(path)
    if cfg.outputs.figures:
        from .figures import render_run_figures

        written.extend(render_run_figures(out_dir))
    return written


def export_geojson(net: RoadNetwork, volume_rows=None, t_range=None, bin_s=3600):
    """Build an RFC 7946 FeatureCollection: one LineString per link.

    With volume rows (as written by VolumeRecorder), each feature gains
    time-binned mean density and speed arrays over ``t_range``.
    """
    binned = {}
    bins = []
    if volume_rows is not None:
        times = [int(r[0]) for r in volume_rows]
        if t_range is None:
            t_range = (min(times), max(times) + 1) if times else (0, 0)
        t0, t1 = t_range
        n_bins = max(0, int((t1 - t0 + bin_s - 1) // bin_s)) if t1 > t0 else 0
        bins = [int(t0 + i * bin_s) for i in range(n_bins)]
        acc = {}
        for row in volume_rows:
            t = int(row[0])
            if not t0 <= t < t1:
                continue
            b = int((t - t0) // bin_s)
            lid = row[1]
            occupancy, density, outflow = float(row[2]), float(row[3]), float(row[4])
            cell = acc.setdefault(lid, {}).setdefault(b, [0.0, 0.0, 0.0, 0])
            cell[0] += density
            cell[1] += occupancy
            cell[2] += outflow
            cell[3] += 1
        for lid, per_bin in acc.items():
            dens, spd = [], []
            link = net.links.get(lid)
            for b in range(len(bins)):
                cell = per_bin.get(b)
                if not cell or cell[3] == 0:
                    dens.append(0.0)
                    spd.append(round(link.vf_mps, 6) if link else 0.0)
                    continue
                mean_density = cell[0] / cell[3]
                mean_occ = cell[1] / cell[3]
                flow_per_s = cell[2] / cell[3]  # vehicles per step at dt=1 sampling
                dens.append(round(mean_density, 6))
                if link is not None and mean_occ > 1e-9:
                    spd.append(round(min(link.vf_mps,
                                         flow_per_s * link.length_m / mean_occ), 6))
                else:
                    spd.append(round(link.vf_mps, 6) if link else 0.0)
            binned[lid] = (dens, spd)

    features = []
    for lid in sorted(net.links):
        link = net.links[lid]
        a = net.nodes.get(link.from_node)
        b = net.nodes.get(link.to_node)
        if a is None or b is None or a.x is None or a.y is None:
            raise InputError(f"link {lid!r} misses node coordinates")
        props = {
            "link_id": lid,
            "length_m": round(link.length_m, 6),
            "lanes": link.lanes,
            "vf_mps": round(link.vf_mps, 6),
        }
        if volume_rows is not None:
            props["t_bins"] = bins
            if lid in binned:
                props["density"] = binned[lid][0]
                props["speed"] = binned[lid][1]
            else:
                props["density"] = [0.0] * len(bins)
                props["speed"] = [round(link.vf_mps, 6)] * len(bins)
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[a.x, a.y], [b.x, b.y]],
            },
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}
