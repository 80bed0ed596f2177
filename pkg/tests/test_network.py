import csv
import math

import numpy as np
import pytest

from mesomacro.errors import InputError
from mesomacro.network import (DEFAULT_SPEED_MPS, Link, Node, RoadNetwork,
                               UnderwoodMfd, build_regions,
                               calibrate_underwood, load_mfds, load_network,
                               load_regions, write_mfds, write_regions)


def write_network(tmp_path, node_rows, link_rows):
    nodes = tmp_path / "nodes.csv"
    links = tmp_path / "links.csv"
    with open(nodes, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y"])
        w.writerows(node_rows)
    with open(links, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", "from_node", "to_node", "length_m", "lanes",
                    "vf_mps", "vb_mps", "kjam_veh_per_lane_km", "qmax_veh_per_s",
                    "road_type"])
        w.writerows(link_rows)
    return nodes, links


def test_load_minimal_network(tmp_path):
    nodes, links = write_network(
        tmp_path,
        [["A", 0, 0], ["B", 100, 0]],
        [["l1", "A", "B", 100, 1, 10, 3.5, 150, 0.5, ""]])
    net = load_network(nodes, links)
    assert len(net.nodes) == 2
    assert len(net.links) == 1
    link = net.links["l1"]
    assert link.length_m == 100
    assert link.vf_mps == 10
    assert net.out_links["A"] == ["l1"]
    assert net.in_links["B"] == ["l1"]


def test_unknown_endpoint_named(tmp_path):
    nodes, links = write_network(
        tmp_path,
        [["A", 0, 0], ["B", 100, 0]],
        [["l1", "A", "Z", 100, 1, 10, 3.5, 150, 0.5, ""]])
    with pytest.raises(InputError, match="Z"):
        load_network(nodes, links)


def test_bad_length_reports_row(tmp_path):
    nodes, links = write_network(
        tmp_path,
        [["A", 0, 0], ["B", 100, 0]],
        [["ok", "A", "B", 100, 1, 10, 3.5, 150, 0.5, ""],
         ["bad", "B", "A", -5, 1, 10, 3.5, 150, 0.5, ""]])
    with pytest.raises(InputError, match="row 3"):
        load_network(nodes, links)


def test_missing_file():
    with pytest.raises(InputError):
        load_network("/nonexistent/nodes.csv", "/nonexistent/links.csv")


def test_imputation(tmp_path):
    nodes, links = write_network(
        tmp_path,
        [["A", 0, 0], ["B", 100, 0]],
        [["r", "A", "B", 100, 2, "", "", "", "", "residential"],
         ["u", "B", "A", 100, 1, "", "", "", "", "weird_type"]])
    net = load_network(nodes, links)
    r = net.links["r"]
    assert r.vf_mps == 8.3
    assert r.vb_mps == pytest.approx(0.35 * 8.3)
    assert r.kjam == 150.0
    assert r.qmax == pytest.approx(2 * 1800 / 3600)
    u = net.links["u"]
    assert u.vf_mps == DEFAULT_SPEED_MPS


def test_vb_exceeding_vf_rejected(tmp_path):
    nodes, links = write_network(
        tmp_path,
        [["A", 0, 0], ["B", 100, 0]],
        [["l", "A", "B", 100, 1, 10, 12, 150, 0.5, ""]])
    with pytest.raises(InputError, match="vb_mps"):
        load_network(nodes, links)


def test_duplicate_node_rejected():
    with pytest.raises(InputError, match="duplicate"):
        RoadNetwork([Node("A", 0, 0), Node("A", 1, 1)], [])


def test_turin_scale_load(tmp_path):
    # Same cardinality as the reference city network: 27,231 nodes and
    # 79,063 links load without error.
    n_nodes, n_links = 27231, 79063
    rng = np.random.default_rng(0)
    nodes = tmp_path / "nodes.csv"
    links = tmp_path / "links.csv"
    with open(nodes, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y"])
        for i in range(n_nodes):
            w.writerow([f"n{i}", i % 200, i // 200])
    with open(links, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", "from_node", "to_node", "length_m", "lanes",
                    "vf_mps", "vb_mps", "kjam_veh_per_lane_km",
                    "qmax_veh_per_s", "road_type"])
        targets = rng.integers(0, n_nodes, size=n_links)
        for i in range(n_links):
            a = i % n_nodes
            b = int(targets[i])
            if b == a:
                b = (a + 1) % n_nodes
            w.writerow([f"l{i}", f"n{a}", f"n{b}", 120.5, 1, 13.9, "", "", "", ""])
    net = load_network(nodes, links)
    assert len(net.nodes) == n_nodes
    assert len(net.links) == n_links


def test_effective_capacity_clamp():
    link = Link("l", "A", "B", 500, 1, 10.0, 3.5, 150.0, 0.5)
    apex = 0.150 * 10 * 3.5 / 13.5
    assert link.effective_capacity == pytest.approx(apex)
    consistent = Link("l2", "A", "B", 500, 1, 10.0, 3.5, 150.0, 0.2)
    assert consistent.effective_capacity == 0.2


# Underwood calibration -------------------------------------------------------

def test_calibrate_exact_exponential():
    samples = [(n, 15.0 * math.exp(-n / 5000.0)) for n in range(0, 10001, 1000)]
    mfd = calibrate_underwood(samples)
    assert abs(mfd.v_f - 15.0) <= 1e-10 * 15.0
    assert abs(mfd.n_c - 5000.0) <= 1e-10 * 5000.0
    # residual of the fit on exact data
    for n, v in samples:
        assert abs(mfd.speed(n) - v) <= 1e-10 * v


def test_calibrate_two_points():
    mfd = calibrate_underwood([(0.0, 10.0), (1.0, 10.0 / math.e)])
    assert mfd.v_f == pytest.approx(10.0, rel=1e-12)
    assert mfd.n_c == pytest.approx(1.0, rel=1e-12)


def test_calibrate_rejects_bad_input():
    with pytest.raises(InputError):
        calibrate_underwood([(0.0, 0.0), (1.0, 5.0)])
    with pytest.raises(InputError, match="singular"):
        calibrate_underwood([(5.0, 1.0), (5.0, 2.0)])
    with pytest.raises(InputError):
        calibrate_underwood([(0.0, 10.0)])


def test_underwood_monotone_decreasing():
    mfd = UnderwoodMfd(12.0, 300.0)
    assert mfd.speed(0.0) == 12.0
    values = [mfd.speed(n) for n in range(0, 5000, 100)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert all(v > 0 for v in values)


# Region / MFD file round trips ----------------------------------------------

def test_regions_roundtrip(tmp_path, two_node_net):
    path = tmp_path / "regions.csv"
    assignment = {"A": "0", "B": "1"}
    write_regions(assignment, path)
    assert load_regions(path, two_node_net) == assignment
    regions = build_regions(assignment)
    assert regions["0"].node_ids == {"A"}


def test_regions_missing_node_rejected(tmp_path, two_node_net):
    path = tmp_path / "regions.csv"
    write_regions({"A": "0"}, path)
    with pytest.raises(InputError, match="misses"):
        load_regions(path, two_node_net)


def test_mfd_roundtrip(tmp_path):
    path = tmp_path / "mfd.csv"
    write_mfds({"0": UnderwoodMfd(13.9, 2500.0)}, path)
    mfds = load_mfds(path)
    assert mfds["0"].v_f == pytest.approx(13.9)
    assert mfds["0"].n_c == pytest.approx(2500.0)
