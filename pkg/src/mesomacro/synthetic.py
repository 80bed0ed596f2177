"""Synthetic scenario builders for tests, benchmarks and demos."""

from __future__ import annotations

import numpy as np

from .demand import OdRecord
from .network import Link, Node, RoadNetwork, UnderwoodMfd


def grid_network(n_cols, n_rows, spacing_m=250.0, vf_mps=13.9, vb_mps=None,
                 lanes=1, kjam=150.0, qmax=None, length_jitter=0.1, seed=0):
    """Bidirectional lattice network of n_cols x n_rows nodes.

    Link lengths get a deterministic multiplicative jitter so shortest-path
    costs rarely tie, as on real road networks.
    """
    rng = np.random.default_rng(seed)
    vb = vb_mps if vb_mps is not None else 0.35 * vf_mps
    qm = qmax if qmax is not None else lanes * 0.5
    nodes = [Node(f"n{i}_{j}", i * spacing_m, j * spacing_m)
             for j in range(n_rows) for i in range(n_cols)]
    links = []

    def add(a, b):
        length = spacing_m * (1.0 + length_jitter * float(rng.uniform(-1.0, 1.0)))
        links.append(Link(f"l_{a}_{b}", a, b, length, lanes, vf_mps, vb, kjam, qm))

    for j in range(n_rows):
        for i in range(n_cols):
            here = f"n{i}_{j}"
            if i + 1 < n_cols:
                right = f"n{i + 1}_{j}"
                add(here, right)
                add(right, here)
            if j + 1 < n_rows:
                up = f"n{i}_{j + 1}"
                add(here, up)
                add(up, here)
    return RoadNetwork(nodes, links)


def grid_regions(n_cols, n_rows, tiles_x, tiles_y):
    """Tile a lattice into tiles_x * tiles_y rectangular regions."""
    assignment = {}
    for j in range(n_rows):
        for i in range(n_cols):
            tx = min(i * tiles_x // n_cols, tiles_x - 1)
            ty = min(j * tiles_y // n_rows, tiles_y - 1)
            assignment[f"n{i}_{j}"] = str(ty * tiles_x + tx)
    return assignment


def uniform_mfds(assignment, v_f=13.9, n_c=2000.0):
    """One identical speed law per region id in the assignment."""
    return {rid: UnderwoodMfd(v_f, n_c) for rid in sorted(set(assignment.values()))}


def random_demand(net: RoadNetwork, n_records, horizon_s=3600.0, seed=0,
                  count_low=1.0, count_high=10.0):
    """Uniformly random OD records over the network's nodes."""
    rng = np.random.default_rng(seed)
    node_ids = sorted(net.nodes)
    records = []
    while len(records) < n_records:
        o, d = rng.choice(len(node_ids), size=2, replace=False)
        records.append(OdRecord(
            origin=node_ids[int(o)],
            destination=node_ids[int(d)],
            depart_time=float(rng.uniform(0.0, horizon_s)),
            count=float(rng.uniform(count_low, count_high)),
        ))
    records.sort(key=lambda r: r.depart_time)
    return records


def ring_scenario(length_m=100.0, vf_mps=10.0, vb_mps=3.5, kjam=150.0,
                  qmax=0.5, demand_count=None, mfd_n_c=200.0):
    """Four-node one-way ring loaded with circular demand.

    Each of the four OD records starts at a ring node, traverses three of
    the four links and exceeds the per-link jam storage, so link-based
    models lock into a 4-cycle while the reservoir model drains normally.
    Returns (net, assignment (one region per node), mfds, demand records).
    """
    n = 4
    nodes = [Node(f"N{i}", float(i % 2), float(i // 2)) for i in range(n)]
    links = [Link(f"L{i}", f"N{i}", f"N{(i + 1) % n}", length_m, 1,
                  vf_mps, vb_mps, kjam, qmax) for i in range(n)]
    net = RoadNetwork(nodes, links)
    assignment = {f"N{i}": str(i) for i in range(n)}
    mfds = {str(i): UnderwoodMfd(vf_mps, mfd_n_c) for i in range(n)}
    storage = kjam * length_m / 1000.0
    count = demand_count if demand_count is not None else storage
    demand = [OdRecord(f"N{i}", f"N{(i + 3) % n}", 0.0, count) for i in range(n)]
    return net, assignment, mfds, demand
