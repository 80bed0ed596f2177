"""Vehicle transfer between elements: the node model and all connectors.

One junction per network node. Its upstream interfaces are the downstream
boundaries of incoming cell/cumulative-count links plus the exit buffers of
reservoir regions discharging at that node. Each step the junction draws an
upstream interface uniformly at random (seeded per junction), inspects its
head packet, and moves min(head, sending budget, receiving budget) toward
the packet's next element, splitting the head when only part fits. An
interface whose head cannot move leaves the draw set for the step, so a
blocked head blocks everything behind it (strict FIFO). Because every
upstream/downstream element kind pairs freely, this one mechanism covers
the three same-model node models and the six cross-model connectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .demand import MIN_FRAGMENT

_EPS = 1e-12


@dataclass(frozen=True)
class TripCompletion:
    packet_id: str
    root_id: str
    depart_time: float
    completion_time: float
    size: float


def vehicle_arrival(packet, step: int, dt: float) -> TripCompletion:
    """Record a packet (or fragment) reaching its destination during ``step``."""
    return TripCompletion(
        packet_id=packet.id,
        root_id=packet.root_id,
        depart_time=packet.depart_time,
        completion_time=step * dt,
        size=packet.size,
    )


class LinkInterface:
    """Upstream interface at the downstream boundary of a CTM/LTM link."""

    __slots__ = ("element",)
    kind = "link"

    def __init__(self, element):
        self.element = element

    def can_send(self, step) -> bool:
        el = self.element
        return el.mass > 0.0 and el.out_head() is not None and el.send_left(step) > _EPS

    def head(self):
        return self.element.out_head()

    def send_left(self, step) -> float:
        return self.element.send_left(step)

    def pop(self, amount, step):
        return self.element.pop_out(amount, step)

    def sort_key(self):
        return (0, self.element.link.id)


class RegionInterface:
    """Upstream interface for a reservoir region's exits at one junction."""

    __slots__ = ("state", "node")
    kind = "region"

    def __init__(self, state, node):
        self.state = state
        self.node = node

    def can_send(self, step) -> bool:
        buf = self.state.exit_buffers.get(self.node)
        return bool(buf)

    def head(self):
        buf = self.state.exit_buffers.get(self.node)
        return buf[0] if buf else None

    def send_left(self, step) -> float:
        return math.inf

    def pop(self, amount, step):
        return self.state.release(amount, self.node)

    def sort_key(self):
        return (1, self.state.region_id)


class Junction:
    """Transfer point with its upstream interfaces and a private RNG stream."""

    __slots__ = ("node", "interfaces", "rng")

    def __init__(self, node, interfaces, rng):
        self.node = node
        self.interfaces = interfaces
        self.rng = rng


def transfer_step(junction: Junction, step: int, ctx) -> float:
    """Move packets through one junction; returns the total mass moved.

    ``ctx`` is the simulation, providing next_hop/receiving_left/deliver/
    complete. Draws are with replacement; exhausted or blocked interfaces
    leave the draw set until the next step.
    """
    candidates = [ifc for ifc in junction.interfaces if ifc.can_send(step)]
    moved_total = 0.0
    rng = junction.rng
    while candidates:
        idx = 0 if len(candidates) == 1 else int(rng.integers(0, len(candidates)))
        ifc = candidates[idx]
        head = ifc.head()
        if head is None:
            candidates.pop(idx)
            continue
        hop = ctx.next_hop(head)
        recv = math.inf if hop is None else ctx.receiving_left(hop, step)
        movable = min(head.size, ifc.send_left(step), recv)
        if movable + _EPS >= head.size:
            amount = head.size
        elif movable >= MIN_FRAGMENT:
            amount = movable
        else:
            candidates.pop(idx)  # head waits this step
            continue
        packets, got = ifc.pop(amount, step)
        if got <= 0.0:
            candidates.pop(idx)
            continue
        moved_total += got
        if hop is None:
            for p in packets:
                ctx.complete(p, step)
        else:
            for p in packets:
                ctx.deliver(p, hop, step)
        if not ifc.can_send(step):
            candidates.pop(idx)
    return moved_total


def detect_gridlock(ctx, step: int, window: int, jam_rel_tol: float = 1e-3):
    """Find directed cycles of jammed, frozen links.

    A link qualifies when its occupancy is at jam storage (within
    ``jam_rel_tol`` relative) and no mass crossed either boundary for the
    trailing ``window`` steps. Edges follow each head packet's next element;
    returns cycles as link-id lists, rotated to start at the smallest id.
    """
    candidates = {}
    for lid, el in ctx.link_elements.items():
        jam = el.jam_storage
        if jam <= 0:
            continue
        if el.mass >= jam * (1.0 - jam_rel_tol) and step - el.last_flow_step >= window:
            candidates[lid] = el
    if not candidates:
        return []
    nxt = {}
    for lid in sorted(candidates):
        head = candidates[lid].out_head()
        if head is None:
            continue
        hop = ctx.next_hop(head)
        if hop is not None and hop[0] == "link":
            target = hop[1].link.id
            if target in candidates:
                nxt[lid] = target
    cycles = []
    done = set()
    for start in sorted(nxt):
        if start in done:
            continue
        path = []
        position = {}
        cur = start
        while cur is not None and cur not in done:
            if cur in position:
                cycle = path[position[cur]:]
                pivot = cycle.index(min(cycle))
                cycles.append(cycle[pivot:] + cycle[:pivot])
                break
            position[cur] = len(path)
            path.append(cur)
            cur = nxt.get(cur)
        done.update(path)
    return cycles
