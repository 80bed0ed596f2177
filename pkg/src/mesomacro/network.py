"""Static road network: nodes, links, regions and the speed-accumulation law.

Networks are ingested from plain CSV files (``nodes.csv`` / ``links.csv``).
Missing link attributes are imputed from a road-type table and standard
triangular fundamental-diagram defaults.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

# Imputed free-flow speed (m/s) by road type; fallback for unknown types.
DEFAULT_SPEED_MPS = 13.9  # 50 km/h
SPEED_BY_ROAD_TYPE = {
    "motorway": 33.3,
    "motorway_link": 22.2,
    "trunk": 27.8,
    "trunk_link": 16.7,
    "primary": 22.2,
    "primary_link": 13.9,
    "secondary": 16.7,
    "secondary_link": 13.9,
    "tertiary": 13.9,
    "residential": 8.3,
    "living_street": 5.6,
    "unclassified": 13.9,
    "service": 5.6,
}

# Triangular-FD defaults used when a links.csv column is blank.
DEFAULT_JAM_DENSITY = 150.0      # veh/lane/km
DEFAULT_WAVE_RATIO = 0.35        # v_b = ratio * v_f
DEFAULT_LANE_CAPACITY = 1800.0   # veh/lane/h


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Link:
    """Directed road link with triangular-FD flow parameters.

    length_m: link length (m); vf_mps / vb_mps: free-flow and backward wave
    speeds (m/s); kjam: jam density (veh/lane/km); qmax: capacity (veh/s).
    """

    id: str
    from_node: str
    to_node: str
    length_m: float
    lanes: int
    vf_mps: float
    vb_mps: float
    kjam: float
    qmax: float
    road_type: str = ""

    def __post_init__(self):
        if self.length_m <= 0:
            raise InputError(f"link {self.id!r}: length must be positive")
        if self.lanes < 1:
            raise InputError(f"link {self.id!r}: lanes must be >= 1")
        if not 0 < self.vb_mps <= self.vf_mps:
            raise InputError(f"link {self.id!r}: need 0 < vb <= vf")
        if self.kjam <= 0 or self.qmax <= 0:
            raise InputError(f"link {self.id!r}: kjam and qmax must be positive")

    @property
    def jam_storage(self) -> float:
        """Maximum vehicles the link can hold (all lanes)."""
        return self.kjam * self.lanes * self.length_m / 1000.0

    @property
    def free_flow_time(self) -> float:
        return self.length_m / self.vf_mps

    @property
    def effective_capacity(self) -> float:
        """Capacity actually sustainable under the triangular FD (veh/s).

        qmax is an independent cap; when it exceeds the FD apex
        K * v_f * v_b / (v_f + v_b) the apex is what the link can flow, and
        the dynamic models use this clamped value so both discretize the
        same fundamental diagram.
        """
        apex = (self.kjam / 1000.0) * self.lanes * self.vf_mps * self.vb_mps \
            / (self.vf_mps + self.vb_mps)
        return min(self.qmax, apex)


@dataclass(frozen=True)
class UnderwoodMfd:
    """Region speed law v(n) = v_f * exp(-n / n_c), n in vehicles.

    The exponential never reaches zero mathematically; a tiny floor keeps
    that true in floating point too (exp underflows past n/n_c ~ 745), so
    overloaded regions still drain instead of freezing.
    """

    v_f: float
    n_c: float

    def __post_init__(self):
        if self.v_f <= 0 or self.n_c <= 0:
            raise InputError("speed law needs v_f > 0 and n_c > 0")

    def speed(self, accumulation: float) -> float:
        return max(self.v_f * math.exp(-accumulation / self.n_c),
                   self.v_f * 1e-12)


@dataclass
class Region:
    id: str
    node_ids: set = field(default_factory=set)
    mfd: UnderwoodMfd | None = None
    longest_path_m: float = 0.0


class RoadNetwork:
    """Immutable-after-construction directed graph of nodes and links."""

    def __init__(self, nodes, links):
        self.nodes: dict[str, Node] = {}
        self.links: dict[str, Link] = {}
        self.out_links: dict[str, list[str]] = {}
        self.in_links: dict[str, list[str]] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise InputError(f"duplicate node id {node.id!r}")
            self.nodes[node.id] = node
            self.out_links[node.id] = []
            self.in_links[node.id] = []
        for link in links:
            self._add_link(link)

    def _add_link(self, link: Link):
        if link.id in self.links:
            raise InputError(f"duplicate link id {link.id!r}")
        if link.from_node not in self.nodes:
            raise InputError(f"link {link.id!r} references unknown node {link.from_node!r}")
        if link.to_node not in self.nodes:
            raise InputError(f"link {link.id!r} references unknown node {link.to_node!r}")
        self.links[link.id] = link
        self.out_links[link.from_node].append(link.id)
        self.in_links[link.to_node].append(link.id)

    def __repr__(self):
        return f"<RoadNetwork {len(self.nodes)} nodes, {len(self.links)} links>"

    def undirected_components(self) -> list[set]:
        """Weakly connected components as sets of node ids."""
        seen = set()
        components = []
        for start in self.nodes:
            if start in seen:
                continue
            comp = {start}
            stack = [start]
            while stack:
                n = stack.pop()
                for lid in self.out_links[n]:
                    m = self.links[lid].to_node
                    if m not in comp:
                        comp.add(m)
                        stack.append(m)
                for lid in self.in_links[n]:
                    m = self.links[lid].from_node
                    if m not in comp:
                        comp.add(m)
                        stack.append(m)
            seen |= comp
            components.append(comp)
        return components


def _parse_float(value, name, row, positive=True):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise InputError(f"bad {name} value {value!r}", row=row)
    if positive and x <= 0:
        raise InputError(f"{name} must be positive, got {x}", row=row)
    return x


def _blank(value) -> bool:
    return value is None or str(value).strip() == ""


def load_network(nodes_file, links_file) -> RoadNetwork:
    """Load and validate a network from nodes.csv and links.csv.

    nodes.csv: ``node_id,x,y``.
    links.csv: ``link_id,from_node,to_node,length_m,lanes,vf_mps,vb_mps,
    kjam_veh_per_lane_km,qmax_veh_per_s,road_type`` where the last five
    columns may be blank and are then imputed.
    """
    nodes = []
    try:
        fh = open(nodes_file, newline="")
    except OSError as exc:
        raise InputError(f"cannot open nodes file: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            nid = (row.get("node_id") or "").strip()
            if not nid:
                raise InputError("missing node_id", row=row_no)
            x = _parse_float(row.get("x"), "x", row_no, positive=False)
            y = _parse_float(row.get("y"), "y", row_no, positive=False)
            nodes.append(Node(nid, x, y))

    links = []
    try:
        fh = open(links_file, newline="")
    except OSError as exc:
        raise InputError(f"cannot open links file: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            links.append(_parse_link_row(row, row_no))

    return RoadNetwork(nodes, links)


def _parse_link_row(row, row_no) -> Link:
    lid = (row.get("link_id") or "").strip()
    if not lid:
        raise InputError("missing link_id", row=row_no)
    frm = (row.get("from_node") or "").strip()
    to = (row.get("to_node") or "").strip()
    if not frm or not to:
        raise InputError(f"link {lid!r} missing endpoint", row=row_no)
    length = _parse_float(row.get("length_m"), "length_m", row_no)

    lanes_raw = row.get("lanes")
    if _blank(lanes_raw):
        lanes = 1
    else:
        try:
            lanes = int(float(lanes_raw))
        except ValueError:
            raise InputError(f"bad lanes value {lanes_raw!r}", row=row_no)
        if lanes < 1:
            raise InputError(f"lanes must be >= 1, got {lanes}", row=row_no)

    road_type = (row.get("road_type") or "").strip()
    vf_raw = row.get("vf_mps")
    if _blank(vf_raw):
        vf = SPEED_BY_ROAD_TYPE.get(road_type, DEFAULT_SPEED_MPS)
    else:
        vf = _parse_float(vf_raw, "vf_mps", row_no)

    vb_raw = row.get("vb_mps")
    vb = DEFAULT_WAVE_RATIO * vf if _blank(vb_raw) else _parse_float(vb_raw, "vb_mps", row_no)
    if vb > vf:
        raise InputError(f"vb_mps {vb} exceeds vf_mps {vf}", row=row_no)

    kjam_raw = row.get("kjam_veh_per_lane_km")
    kjam = DEFAULT_JAM_DENSITY if _blank(kjam_raw) else _parse_float(kjam_raw, "kjam", row_no)

    qmax_raw = row.get("qmax_veh_per_s")
    if _blank(qmax_raw):
        qmax = lanes * DEFAULT_LANE_CAPACITY / 3600.0
    else:
        qmax = _parse_float(qmax_raw, "qmax", row_no)

    return Link(lid, frm, to, length, lanes, vf, vb, kjam, qmax, road_type)


def calibrate_underwood(samples) -> UnderwoodMfd:
    """Fit v(n) = v_f * exp(-n/n_c) by OLS on ln v = ln v_f - n/n_c.

    ``samples`` is a sequence of (accumulation, speed) pairs. Exact on
    noiseless exponential data. Raises InputError for non-positive speeds
    or when all accumulations coincide (singular fit).
    """
    n = np.asarray([s[0] for s in samples], dtype=float)
    v = np.asarray([s[1] for s in samples], dtype=float)
    if n.size < 2:
        raise InputError("need at least 2 calibration samples")
    if np.any(v <= 0):
        raise InputError("calibration speeds must be positive")
    if np.ptp(n) == 0:
        raise InputError("singular fit: all samples at the same accumulation")
    y = np.log(v)
    nbar = n.mean()
    ybar = y.mean()
    sxx = float(np.sum((n - nbar) ** 2))
    sxy = float(np.sum((n - nbar) * (y - ybar)))
    slope = sxy / sxx                      # = -1/n_c
    intercept = ybar - slope * nbar        # = ln v_f
    if slope >= 0:
        raise InputError("calibration data is not speed-decreasing in accumulation")
    return UnderwoodMfd(v_f=math.exp(intercept), n_c=-1.0 / slope)


def load_regions(path, net: RoadNetwork | None = None) -> dict[str, str]:
    """Read a node -> region assignment from regions.csv (``node_id,region_id``)."""
    assignment = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open regions file: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            nid = (row.get("node_id") or "").strip()
            rid = (row.get("region_id") or "").strip()
            if not nid or not rid:
                raise InputError("missing node_id or region_id", row=row_no)
            if nid in assignment:
                raise InputError(f"node {nid!r} assigned twice", row=row_no)
            assignment[nid] = rid
    if net is not None:
        missing = set(net.nodes) - set(assignment)
        if missing:
            raise InputError(f"regions file misses {len(missing)} nodes, e.g. {sorted(missing)[:3]}")
        unknown = set(assignment) - set(net.nodes)
        if unknown:
            raise InputError(f"regions file names unknown nodes, e.g. {sorted(unknown)[:3]}")
    return assignment


def write_regions(assignment: dict, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "region_id"])
        for nid in sorted(assignment):
            writer.writerow([nid, assignment[nid]])


def load_mfds(path) -> dict[str, UnderwoodMfd]:
    """Read per-region speed laws from mfd.csv (``region_id,vf_mps,n_critical``)."""
    mfds = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open mfd file: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            rid = (row.get("region_id") or "").strip()
            if not rid:
                raise InputError("missing region_id", row=row_no)
            vf = _parse_float(row.get("vf_mps"), "vf_mps", row_no)
            nc = _parse_float(row.get("n_critical"), "n_critical", row_no)
            mfds[rid] = UnderwoodMfd(vf, nc)
    return mfds


def write_mfds(mfds: dict, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id", "vf_mps", "n_critical"])
        for rid in sorted(mfds):
            writer.writerow([rid, f"{mfds[rid].v_f:.6f}", f"{mfds[rid].n_c:.6f}"])


def build_regions(assignment: dict, mfds: dict | None = None) -> dict[str, Region]:
    """Group a node -> region assignment into Region objects."""
    regions: dict[str, Region] = {}
    for nid, rid in assignment.items():
        regions.setdefault(rid, Region(id=rid)).node_ids.add(nid)
    if mfds:
        for rid, mfd in mfds.items():
            if rid in regions:
                regions[rid].mfd = mfd
    return regions
