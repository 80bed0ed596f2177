import pytest

from mesomacro.network import Link, Node, RoadNetwork


def make_net(node_names, link_specs):
    """link_specs: (id, from, to, length[, lanes, vf, vb, kjam, qmax])."""
    nodes = [Node(n, float(i), 0.0) for i, n in enumerate(node_names)]
    links = []
    for spec in link_specs:
        lid, u, v, length = spec[:4]
        lanes = spec[4] if len(spec) > 4 else 1
        vf = spec[5] if len(spec) > 5 else 10.0
        vb = spec[6] if len(spec) > 6 else 3.5
        kjam = spec[7] if len(spec) > 7 else 150.0
        qmax = spec[8] if len(spec) > 8 else 0.5
        links.append(Link(lid, u, v, float(length), lanes, vf, vb, kjam, qmax))
    return RoadNetwork(nodes, links)


@pytest.fixture
def two_node_net():
    return make_net(["A", "B"], [("l1", "A", "B", 100.0)])
