"""Regional reservoir dynamics: one shared speed set by accumulation.

All vehicles in a region move at v(t) = V(accumulation), with V the
calibrated Underwood law, so speed stays strictly positive and the region
can never deadlock. Each packet carries an exact remaining distance for its
intra-region path segment; the implementation advances a single cumulative
distance counter and keeps packets in a min-heap of exit thresholds, which
preserves per-path FIFO (same path means same segment length) while
allowing shorter trips on other paths to overtake.
"""

from __future__ import annotations

import heapq
from collections import deque

from .demand import pop_mass
from .errors import SimulationAssertionError

_EPS = 1e-9


class RegionState:
    """Dynamic reservoir state of one region."""

    __slots__ = ("region_id", "mfd", "dt", "longest_path_m", "traveled",
                 "heap", "seq", "mass", "exit_buffers", "exit_mass",
                 "pending", "current_speed")

    def __init__(self, region_id, mfd, dt, longest_path_m=0.0):
        self.region_id = region_id
        self.mfd = mfd
        self.dt = dt
        self.longest_path_m = longest_path_m
        self.traveled = 0.0          # cumulative per-vehicle distance (m)
        self.heap = []               # (exit threshold, insertion seq, packet)
        self.seq = 0
        self.mass = 0.0              # residents, including boundary-held exits
        self.exit_buffers = {}       # exit junction node -> FIFO deque
        self.exit_mass = 0.0
        self.pending = []            # entries staged for the next update
        self.current_speed = mfd.speed(0.0) if mfd is not None else 0.0

    def speed(self) -> float:
        """Region speed from the current accumulation (always positive)."""
        return self.mfd.speed(self.mass)

    def schedule_entry(self, packet, segment_m: float):
        """Stage an entering packet; it becomes resident on the next update
        and starts moving the step after (departure injections)."""
        self._check_segment(segment_m)
        self.pending.append((packet, segment_m))

    def insert(self, packet, segment_m: float):
        """Make a packet resident now at full segment distance (transfer
        arrivals; it starts moving on the next update)."""
        self._check_segment(segment_m)
        heapq.heappush(self.heap, (self.traveled + segment_m, self.seq, packet))
        self.seq += 1
        self.mass += packet.size

    def _check_segment(self, segment_m):
        if self.longest_path_m and segment_m > self.longest_path_m + _EPS:
            raise SimulationAssertionError(
                f"region {self.region_id}: segment {segment_m} m exceeds "
                f"longest path {self.longest_path_m} m")

    def step(self, step: int):
        """Advance one step: move residents, emit exits, absorb staged entries.

        Speed is evaluated from the pre-entry accumulation. Returns
        (exited packets in threshold order, speed used).
        """
        heap = self.heap
        if not heap and not self.pending:
            self.current_speed = self.mfd.speed(self.mass)
            return (), self.current_speed
        v = self.mfd.speed(self.mass)
        self.current_speed = v
        self.traveled += v * self.dt
        exits = []
        horizon = self.traveled + _EPS
        while heap and heap[0][0] <= horizon:
            _, _, packet = heapq.heappop(heap)
            exits.append(packet)
        for packet, segment_m in self.pending:
            heapq.heappush(heap, (self.traveled + segment_m, self.seq, packet))
            self.seq += 1
            self.mass += packet.size
        self.pending.clear()
        return exits, v

    # Boundary surface used by the transfer phase ---------------------------

    def withdraw(self, packet):
        """Remove a just-exited packet whose trip ends inside this region."""
        self.mass -= packet.size

    def hold_exit(self, packet, junction_node):
        """Keep an exited packet at the boundary until transfer moves it."""
        buf = self.exit_buffers.get(junction_node)
        if buf is None:
            buf = self.exit_buffers[junction_node] = deque()
        buf.append(packet)
        self.exit_mass += packet.size

    def exit_eligible(self, junction_node=None) -> float:
        """Zero-remaining-distance vehicles ready to leave, optionally only
        those headed through one junction."""
        if junction_node is None:
            return self.exit_mass
        buf = self.exit_buffers.get(junction_node)
        return sum(p.size for p in buf) if buf else 0.0

    def release(self, amount: float, junction_node: str):
        """Pop up to ``amount`` vehicles from a boundary buffer (FIFO)."""
        buf = self.exit_buffers.get(junction_node)
        if not buf:
            return [], 0.0
        moved, got = pop_mass(buf, amount)
        self.exit_mass -= got
        self.mass -= got
        return moved, got

    def resident_packets(self):
        """Yield (packet, remaining distance m) for trajectory sampling."""
        for threshold, _, p in self.heap:
            yield p, max(0.0, threshold - self.traveled)
        for buf in self.exit_buffers.values():
            for p in buf:
                yield p, 0.0


def bathtub_speed(state: RegionState) -> float:
    return state.speed()


def bathtub_step(state: RegionState, step: int, entries=()):
    """Advance one step; ``entries`` are (packet, segment_m) pairs entering
    this step (inserted at full segment distance, moving from the next)."""
    for packet, segment_m in entries:
        state.schedule_entry(packet, segment_m)
    return state.step(step)


def bathtub_exit_capacity(state: RegionState, junction_node=None) -> float:
    return state.exit_eligible(junction_node)
