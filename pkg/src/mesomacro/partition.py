"""Community partitioning of the road network into regions.

Implements the Leiden scheme (queue-based local moving, refinement within
communities, graph aggregation) on an undirected link-count-weighted
projection of the directed network, followed by a minimum-region-size merge
pass. Deterministic for a fixed seed.
"""

from __future__ import annotations

from collections import defaultdict, deque

import numpy as np

from .network import RoadNetwork


def modularity(adj, comm, resolution=1.0):
    """Modularity of a partition on an undirected weighted adjacency list.

    ``adj`` is a list of dicts node -> {neighbor: weight}; each undirected
    edge appears in both endpoint dicts. Self-loops count once with full
    weight and contribute 2*w to the node degree.
    """
    m = 0.0
    k = [0.0] * len(adj)
    for i, nbrs in enumerate(adj):
        for j, w in nbrs.items():
            if j == i:
                k[i] += 2.0 * w
                m += w
            else:
                k[i] += w
                m += 0.5 * w
    if m == 0:
        return 0.0
    internal = defaultdict(float)
    comm_deg = defaultdict(float)
    for i, nbrs in enumerate(adj):
        comm_deg[comm[i]] += k[i]
        for j, w in nbrs.items():
            if j == i:
                internal[comm[i]] += w
            elif comm[j] == comm[i] and j > i:
                internal[comm[i]] += w
    q = 0.0
    for c, e_c in internal.items():
        q += e_c / m - resolution * (comm_deg[c] / (2.0 * m)) ** 2
    for c, deg in comm_deg.items():
        if c not in internal:
            q -= resolution * (deg / (2.0 * m)) ** 2
    return q


def _local_move(adj, k, m, comm, rng, resolution):
    """Queue-based local moving phase; mutates ``comm``. Returns move count."""
    n = len(adj)
    comm_deg = defaultdict(float)
    for i in range(n):
        comm_deg[comm[i]] += k[i]
    order = rng.permutation(n)
    queue = deque(int(i) for i in order)
    queued = [True] * n
    moves = 0
    two_m2 = 2.0 * m * m
    while queue:
        i = queue.popleft()
        queued[i] = False
        c_old = comm[i]
        comm_deg[c_old] -= k[i]
        w_to = defaultdict(float)
        for j, w in adj[i].items():
            if j != i:
                w_to[comm[j]] += w
        # Baseline: stay in (possibly now empty) current community.
        best_c = c_old
        best_gain = w_to.get(c_old, 0.0) / m - resolution * k[i] * comm_deg[c_old] / two_m2
        for c in sorted(w_to):
            if c == c_old:
                continue
            gain = w_to[c] / m - resolution * k[i] * comm_deg[c] / two_m2
            if gain > best_gain + 1e-12:
                best_gain = gain
                best_c = c
        comm[i] = best_c
        comm_deg[best_c] += k[i]
        if best_c != c_old:
            moves += 1
            for j in adj[i]:
                if j != i and comm[j] != best_c and not queued[j]:
                    queue.append(j)
                    queued[j] = True
    return moves


def _refine(adj, k, m, comm, rng, resolution):
    """Split each community into well-connected subcommunities.

    Starts from singletons and merges each still-singleton node into the
    best positive-gain subcommunity inside its own community.
    """
    n = len(adj)
    sub = list(range(n))
    sub_deg = list(k)
    sub_size = [1] * n
    two_m2 = 2.0 * m * m
    for i in (int(x) for x in rng.permutation(n)):
        if sub_size[sub[i]] > 1:
            continue
        w_to = defaultdict(float)
        for j, w in adj[i].items():
            if j != i and comm[j] == comm[i]:
                w_to[sub[j]] += w
        best_s, best_gain = sub[i], 0.0
        for s in sorted(w_to):
            if s == sub[i]:
                continue
            gain = w_to[s] / m - resolution * k[i] * sub_deg[s] / two_m2
            if gain > best_gain + 1e-12:
                best_gain = gain
                best_s = s
        if best_s != sub[i]:
            sub_deg[sub[i]] -= k[i]
            sub[i] = best_s
            sub_deg[best_s] += k[i]
            sub_size[best_s] += 1
    return sub


def _aggregate(adj, sub, comm):
    """Collapse subcommunities into aggregate nodes.

    Returns (agg_adj, agg_init_comm, groups) where groups[a] lists the fine
    nodes inside aggregate node a and agg_init_comm seeds the next level
    with the coarse partition found by local moving.
    """
    label_of = {}
    groups = []
    for i in range(len(adj)):
        s = sub[i]
        if s not in label_of:
            label_of[s] = len(groups)
            groups.append([])
        groups[label_of[s]].append(i)
    agg_n = len(groups)
    agg_adj = [defaultdict(float) for _ in range(agg_n)]
    for i, nbrs in enumerate(adj):
        a = label_of[sub[i]]
        for j, w in nbrs.items():
            b = label_of[sub[j]]
            if i == j:
                agg_adj[a][a] += w
            elif a == b:
                if i < j:
                    agg_adj[a][a] += w
            else:
                agg_adj[a][b] += w
    agg_adj = [dict(d) for d in agg_adj]
    agg_init = [comm[groups[a][0]] for a in range(agg_n)]
    return agg_adj, agg_init, groups


def leiden_communities(adj, resolution=1.0, seed=0):
    """Partition an undirected weighted graph into communities.

    ``adj``: list of dicts node -> {neighbor: weight}. Returns a membership
    list (community labels are arbitrary ints, compacted).
    """
    n = len(adj)
    if n == 0:
        return []
    m = 0.0
    for i, nbrs in enumerate(adj):
        for j, w in nbrs.items():
            m += w if j == i else 0.5 * w
    if m == 0:
        return list(range(n))
    rng = np.random.default_rng(seed)

    cur_adj = [dict(d) for d in adj]
    comm = list(range(n))
    leaf_groups = [[i] for i in range(n)]
    membership = list(range(n))
    while True:
        k = [0.0] * len(cur_adj)
        for i, nbrs in enumerate(cur_adj):
            for j, w in nbrs.items():
                k[i] += 2.0 * w if j == i else w
        _local_move(cur_adj, k, m, comm, rng, resolution)
        for a, group in enumerate(leaf_groups):
            for leaf in group:
                membership[leaf] = comm[a]
        if len(set(comm)) == len(cur_adj):
            break
        sub = _refine(cur_adj, k, m, comm, rng, resolution)
        prev_size = len(cur_adj)
        cur_adj, comm, groups = _aggregate(cur_adj, sub, comm)
        leaf_groups = [[leaf for g in group for leaf in leaf_groups[g]] for group in groups]
        if len(cur_adj) == prev_size:
            break  # refinement cannot coarsen further; converged

    # Compact labels in first-appearance order.
    relabel = {}
    out = []
    for c in membership:
        if c not in relabel:
            relabel[c] = len(relabel)
        out.append(relabel[c])
    return out


def _merge_small(adj, comm, min_size):
    """Merge communities below ``min_size`` into their most-connected neighbor."""
    while True:
        members = defaultdict(list)
        for i, c in enumerate(comm):
            members[c].append(i)
        if len(members) <= 1:
            return comm
        small = sorted(c for c, nodes in members.items() if len(nodes) < min_size)
        if not small:
            return comm
        target = min(small, key=lambda c: (len(members[c]), c))
        weight_to = defaultdict(float)
        for i in members[target]:
            for j, w in adj[i].items():
                if comm[j] != target:
                    weight_to[comm[j]] += w
        if weight_to:
            dest = max(sorted(weight_to), key=lambda c: weight_to[c])
        else:
            # unreachable on a connected component; merge anywhere stable
            dest = next(c for c in sorted(members, key=str) if c != target)
        for i in members[target]:
            comm[i] = dest


def partition_network(net: RoadNetwork, min_region_size=1, resolution=1.0, seed=0):
    """Assign every node to a region; returns {node_id: region_id}.

    Each weakly connected component is partitioned independently. Regions
    smaller than ``min_region_size`` are merged into their most-connected
    neighboring region. Deterministic for a fixed seed.
    """
    if min_region_size < 1:
        raise ValueError("min_region_size must be >= 1")
    node_ids = sorted(net.nodes)
    index = {nid: i for i, nid in enumerate(node_ids)}
    adj = [defaultdict(float) for _ in node_ids]
    for link in net.links.values():
        a, b = index[link.from_node], index[link.to_node]
        if a == b:
            continue
        adj[a][b] += 1.0
        adj[b][a] += 1.0
    adj = [dict(d) for d in adj]

    assignment = {}
    next_label = 0
    components = sorted(net.undirected_components(), key=lambda c: min(c))
    for comp in components:
        comp_nodes = sorted(comp)
        local = {nid: i for i, nid in enumerate(comp_nodes)}
        sub_adj = [
            {local[node_ids[j]]: w for j, w in adj[index[nid]].items()}
            for nid in comp_nodes
        ]
        comm = leiden_communities(sub_adj, resolution=resolution, seed=seed)
        comm = _merge_small(sub_adj, comm, min_region_size)
        # Stable labels: order communities by their smallest member node id.
        reps = defaultdict(list)
        for i, c in enumerate(comm):
            reps[c].append(comp_nodes[i])
        for c in sorted(reps, key=lambda c: reps[c][0]):
            for nid in reps[c]:
                assignment[nid] = str(next_label)
            next_label += 1
    return assignment
