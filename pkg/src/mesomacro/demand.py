"""Time-of-day OD demand, shortest paths and vehicle packet assignment.

A packet is the atomic moving unit: a (possibly fractional) vehicle count
sharing one origin, destination, path and departure time. All-or-nothing
assignment puts each OD record on the free-flow shortest path; incremental
assignment routes equal demand slices on paths re-costed (BPR by default)
after each slice.
"""

from __future__ import annotations

import csv
import heapq
import logging
from dataclasses import dataclass

from .errors import InputError, NoPathError
from .network import RoadNetwork

log = logging.getLogger(__name__)

# Smallest packet fragment a split may create; movable amounts below this
# are deferred to the next step so fragments cannot proliferate unboundedly.
MIN_FRAGMENT = 1e-6


@dataclass(frozen=True)
class OdRecord:
    origin: str
    destination: str
    depart_time: float
    count: float

    def __post_init__(self):
        if self.origin == self.destination:
            raise InputError(f"origin equals destination ({self.origin!r})")
        if self.count <= 0:
            raise InputError(f"count must be positive, got {self.count}")
        if self.depart_time < 0:
            raise InputError(f"depart_time must be >= 0, got {self.depart_time}")


@dataclass
class Path:
    """Ordered link walk plus (once projected) its region run-length segments."""

    links: tuple
    region_segments: tuple | None = None


class VehiclePacket:
    """A quantity of vehicles sharing origin, destination, path and departure.

    Fragments created by splitting share ``root_id`` and a lineage counter so
    fragment ids stay unique and deterministic.
    """

    __slots__ = ("id", "root_id", "origin", "destination", "depart_time",
                 "size", "path", "hop_index", "plan", "entry_step", "_lineage")

    def __init__(self, pid, origin, destination, depart_time, size, path,
                 root_id=None, lineage=None, hop_index=0, plan=None):
        self.id = pid
        self.root_id = root_id if root_id is not None else pid
        self.origin = origin
        self.destination = destination
        self.depart_time = depart_time
        self.size = size
        self.path = path
        self.hop_index = hop_index
        self.plan = plan        # engine-attached element hop sequence
        self.entry_step = 0     # step the packet entered its current element
        self._lineage = lineage if lineage is not None else [0]

    def __repr__(self):
        return f"<Packet {self.id} size={self.size:.6g} hop={self.hop_index}>"


def split_packet(packet: VehiclePacket, amount: float) -> VehiclePacket:
    """Split ``amount`` vehicles off ``packet`` and return the moved fragment.

    The remainder keeps the original packet object (and id); the moved piece
    gets a fresh lineage-derived id. Fragment sizes sum to the parent size
    exactly (the larger part is recomputed so the float identity holds).
    """
    size = packet.size
    if not 0.0 < amount < size:
        raise ValueError(f"split amount {amount} outside (0, {size})")
    rem = size - amount
    moved_size = size - rem
    if moved_size + rem != size:
        rem = size - moved_size
    packet._lineage[0] += 1
    moved = VehiclePacket(
        pid=f"{packet.root_id}.{packet._lineage[0]}",
        origin=packet.origin,
        destination=packet.destination,
        depart_time=packet.depart_time,
        size=moved_size,
        path=packet.path,
        root_id=packet.root_id,
        lineage=packet._lineage,
        hop_index=packet.hop_index,
        plan=packet.plan,
    )
    moved.entry_step = packet.entry_step
    packet.size = rem
    return moved


def append_coalesced(queue, packet):
    """Append a packet to a FIFO deque, merging with an adjacent sibling.

    Fragments of the same root packet at the same hop are indistinguishable
    going forward, so merging them keeps fragment counts bounded.
    """
    if queue:
        tail = queue[-1]
        if tail.root_id == packet.root_id and tail.hop_index == packet.hop_index:
            tail.size += packet.size
            return
    queue.append(packet)


def pop_mass(queue, amount):
    """Pop up to ``amount`` vehicles from the head of a FIFO deque.

    Whole packets are popped while they fit; a final residual of at least
    MIN_FRAGMENT splits the head. Returns (packets, total popped).
    """
    moved = []
    got = 0.0
    while queue and amount - got >= queue[0].size - 1e-15:
        p = queue.popleft()
        moved.append(p)
        got += p.size
    if queue and not (amount - got < MIN_FRAGMENT):
        frag = split_packet(queue[0], amount - got)
        moved.append(frag)
        got += frag.size
    return moved, got


def load_demand(demand_file, net: RoadNetwork, horizon=86400.0):
    """Read demand.csv (``origin_node,destination_node,depart_time_s,count``).

    Returns records sorted by departure time (stable in file order).
    """
    records = []
    try:
        fh = open(demand_file, newline="")
    except OSError as exc:
        raise InputError(f"cannot open demand file: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            o = (row.get("origin_node") or "").strip()
            d = (row.get("destination_node") or "").strip()
            if o not in net.nodes:
                raise InputError(f"unknown origin node {o!r}", row=row_no)
            if d not in net.nodes:
                raise InputError(f"unknown destination node {d!r}", row=row_no)
            if o == d:
                raise InputError(f"origin equals destination ({o!r})", row=row_no)
            try:
                t = float(row.get("depart_time_s"))
                count = float(row.get("count"))
            except (TypeError, ValueError):
                raise InputError("bad depart_time_s or count", row=row_no)
            if count <= 0:
                raise InputError(f"count must be positive, got {count}", row=row_no)
            if not 0 <= t < horizon:
                raise InputError(f"depart_time_s {t} outside [0, {horizon})", row=row_no)
            records.append(OdRecord(o, d, t, count))
    records.sort(key=lambda r: r.depart_time)
    return records


class _LexChain:
    """Link-id sequence compared lazily; used only when path costs tie."""

    __slots__ = ("chain", "_tuple")

    def __init__(self, chain):
        self.chain = chain
        self._tuple = None

    def unroll(self):
        if self._tuple is None:
            out = []
            c = self.chain
            while c:
                c, lid = c
                out.append(lid)
            out.reverse()
            self._tuple = tuple(out)
        return self._tuple

    def __lt__(self, other):
        return self.unroll() < other.unroll()

    def __eq__(self, other):
        return self.unroll() == other.unroll()


def _dijkstra(net: RoadNetwork, origin, link_cost, targets=None):
    """One-to-all (or one-to-targets) shortest walks under positive link costs.

    Ties on cost are broken toward the lexicographically smallest link-id
    sequence. Returns {node: link-id tuple} for every settled target.
    """
    remaining = set(targets) if targets is not None else None
    dist = {origin: 0.0}
    settled = {}
    heap = [(0.0, _LexChain(()), origin)]
    while heap:
        cost, lex, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled[u] = lex
        if remaining is not None:
            remaining.discard(u)
            if not remaining:
                break
        for lid in net.out_links[u]:
            v = net.links[lid].to_node
            if v in settled:
                continue
            w = link_cost(lid)
            if w <= 0:
                raise InputError(f"link cost for {lid!r} must be positive, got {w}")
            c2 = cost + w
            old = dist.get(v)
            if old is None or c2 <= old:
                dist[v] = c2
                heapq.heappush(heap, (c2, _LexChain((lex.chain, lid)), v))
    result = {}
    wanted = targets if targets is not None else settled.keys()
    for node in wanted:
        if node in settled:
            result[node] = settled[node].unroll()
    return result


def free_flow_cost(net: RoadNetwork):
    """Link cost function: free-flow travel time in seconds."""
    links = net.links

    def cost(lid):
        link = links[lid]
        return link.length_m / link.vf_mps

    return cost


def bpr_cost(net: RoadNetwork, volumes, analysis_period_h=24.0, alpha=0.15, beta=4.0):
    """Volume-aware BPR link cost: t0 * (1 + alpha * (V/C)^beta).

    C is the link capacity over the analysis period (qmax * 3600 * hours);
    V is the volume assigned so far, in vehicles.
    """
    links = net.links

    def cost(lid):
        link = links[lid]
        t0 = link.length_m / link.vf_mps
        cap = link.qmax * 3600.0 * analysis_period_h
        return t0 * (1.0 + alpha * (volumes.get(lid, 0.0) / cap) ** beta)

    return cost


def shortest_path(net: RoadNetwork, origin, destination, link_cost=None) -> Path:
    """Minimum-cost walk between two nodes; lexicographic link-id tie-break."""
    if origin == destination:
        raise InputError("origin equals destination")
    if link_cost is None:
        link_cost = free_flow_cost(net)
    found = _dijkstra(net, origin, link_cost, targets={destination})
    if destination not in found:
        raise NoPathError(f"no path from {origin!r} to {destination!r}")
    return Path(links=found[destination])


def assign_aon(net: RoadNetwork, demand) -> list:
    """All-or-nothing assignment under free-flow costs.

    One packet per OD record; records sharing an (origin, destination) pair
    share one Path object regardless of departure time. Unreachable records
    are dropped with a logged warning.
    """
    return assign_incremental(net, demand, n_slices=1)


def assign_incremental(net: RoadNetwork, demand, n_slices=1, cost_model=None,
                       analysis_period_h=24.0) -> list:
    """Incremental assignment: route ``n_slices`` equal demand fractions,
    re-costing links after each slice from the volumes assigned so far.

    ``cost_model(net, volumes)`` must return a link-cost function; defaults
    to BPR. With n_slices=1 the result is identical to assign_aon.
    """
    if n_slices < 1:
        raise InputError("n_slices must be >= 1")
    if cost_model is None:
        cost_model = lambda n, v: bpr_cost(n, v, analysis_period_h=analysis_period_h)

    volumes = {}
    packets = []
    dropped_count = 0
    dropped_size = 0.0
    unreachable = set()
    for k in range(n_slices):
        link_cost = cost_model(net, volumes)
        by_origin = {}
        for idx, rec in enumerate(demand):
            by_origin.setdefault(rec.origin, []).append(idx)
        paths = {}
        for origin in sorted(by_origin):
            targets = {demand[i].destination for i in by_origin[origin]}
            found = _dijkstra(net, origin, link_cost, targets=targets)
            for dest in targets:
                if dest in found:
                    paths[origin, dest] = Path(links=found[dest])
        slice_packets = []
        for idx, rec in enumerate(demand):
            path = paths.get((rec.origin, rec.destination))
            if path is None:
                if (rec.origin, rec.destination) not in unreachable:
                    unreachable.add((rec.origin, rec.destination))
                dropped_count += 1
                dropped_size += rec.count / n_slices
                continue
            pid = str(idx) if n_slices == 1 else f"{idx}s{k}"
            slice_packets.append(VehiclePacket(
                pid=pid,
                origin=rec.origin,
                destination=rec.destination,
                depart_time=rec.depart_time,
                size=rec.count / n_slices,
                path=path,
            ))
        for p in slice_packets:
            for lid in p.path.links:
                volumes[lid] = volumes.get(lid, 0.0) + p.size
        packets.extend(slice_packets)
    if dropped_count:
        log.warning("assignment dropped %d unreachable record-slices (%.3f vehicles, %d OD pairs)",
                    dropped_count, dropped_size, len(unreachable))
    return packets


def project_to_regions(path_links, net: RoadNetwork, assignment) -> tuple:
    """Run-length encode the regions visited along a link path.

    A link counts toward the region of its from_node. Returns a tuple of
    (region_id, meters) whose distances sum to the total path length.
    """
    segments = []
    for lid in path_links:
        link = net.links[lid]
        rid = assignment[link.from_node]
        if segments and segments[-1][0] == rid:
            segments[-1][1] += link.length_m
        else:
            segments.append([rid, link.length_m])
    return tuple((rid, length) for rid, length in segments)


def write_paths(packets, path):
    """Persist assigned packets for replay:
    ``packet_id,depart_time_s,size,link_ids`` (;-separated)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["packet_id", "depart_time_s", "size", "link_ids"])
        for p in packets:
            writer.writerow([p.id, f"{p.depart_time:.6f}", f"{p.size:.6f}",
                             ";".join(p.path.links)])


def load_paths(path, net: RoadNetwork) -> list:
    """Load packets from a paths CSV written by write_paths."""
    packets = []
    path_cache = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open paths file: {exc}")
    with fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            pid = (row.get("packet_id") or "").strip()
            raw = (row.get("link_ids") or "").strip()
            if not pid or not raw:
                raise InputError("missing packet_id or link_ids", row=row_no)
            links = tuple(raw.split(";"))
            prev_to = None
            for lid in links:
                if lid not in net.links:
                    raise InputError(f"unknown link {lid!r}", row=row_no)
                if prev_to is not None and net.links[lid].from_node != prev_to:
                    raise InputError(f"links {raw!r} do not form a connected walk", row=row_no)
                prev_to = net.links[lid].to_node
            try:
                t = float(row.get("depart_time_s"))
                size = float(row.get("size"))
            except (TypeError, ValueError):
                raise InputError("bad depart_time_s or size", row=row_no)
            if size <= 0:
                raise InputError(f"size must be positive, got {size}", row=row_no)
            p = path_cache.get(links)
            if p is None:
                p = path_cache[links] = Path(links=links)
            packets.append(VehiclePacket(
                pid=pid,
                origin=net.links[links[0]].from_node,
                destination=net.links[links[-1]].to_node,
                depart_time=t,
                size=size,
                path=p,
            ))
    return packets
