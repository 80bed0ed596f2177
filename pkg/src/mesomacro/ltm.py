"""Link dynamics via cumulative boundary counts and one physical FIFO queue.

Sending and receiving flows come from the cumulative entry/exit curves
shifted by the free-flow and backward-wave travel times (triangular
fundamental diagram). The curves are stored as sparse breakpoints sampled
at step resolution, linearly interpolated in between and pruned beyond the
longest lookback, which bounds memory on long runs.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import deque

from .demand import append_coalesced, pop_mass
from .errors import SimulationAssertionError
from .network import Link

_NEVER = -(10 ** 18)


class _CumulativeCurve:
    """Piecewise-linear non-decreasing count curve sampled at step boundaries.

    Equivalent to keeping one sample per step: a flat closing breakpoint is
    inserted before each change so interpolation matches the dense sampling.
    """

    __slots__ = ("times", "values")

    def __init__(self):
        self.times = [0.0]
        self.values = [0.0]

    def record(self, step_end: float, value: float):
        times, values = self.times, self.values
        if times[-1] == step_end:
            values[-1] = value
            return
        if times[-1] < step_end - 1.0:
            times.append(step_end - 1.0)
            values.append(values[-1])
        times.append(step_end)
        values.append(value)

    def at(self, tau: float) -> float:
        times, values = self.times, self.values
        if tau <= times[0]:
            return values[0] if tau == times[0] else 0.0
        if tau >= times[-1]:
            return values[-1]
        i = bisect_right(times, tau)
        t0, t1 = times[i - 1], times[i]
        v0, v1 = values[i - 1], values[i]
        return v0 + (v1 - v0) * (tau - t0) / (t1 - t0)

    def prune(self, cutoff: float):
        times, values = self.times, self.values
        drop = 0
        while drop + 1 < len(times) and times[drop + 1] <= cutoff:
            drop += 1
        if drop:
            del times[:drop]
            del values[:drop]


class LtmLinkState:
    """Dynamic state of one link under cumulative-count dynamics."""

    __slots__ = ("link", "dt", "tf_steps", "tb_steps", "jam", "q_cap",
                 "n_up", "n_down", "up_curve", "down_curve", "queue", "mass",
                 "last_flow_step", "advanced_m", "last_out", "last_out_step",
                 "_budget_step", "_send", "_recv")

    def __init__(self, link: Link, dt: float):
        self.link = link
        self.dt = dt
        # Lookups are clamped to at least one step: a link shorter than the
        # free-flow step distance still takes one step to traverse.
        self.tf_steps = max(link.length_m / link.vf_mps / dt, 1.0)
        self.tb_steps = max(link.length_m / link.vb_mps / dt, 1.0)
        self.jam = link.jam_storage
        self.q_cap = link.effective_capacity * dt
        self.n_up = 0.0
        self.n_down = 0.0
        self.up_curve = _CumulativeCurve()
        self.down_curve = _CumulativeCurve()
        self.queue = deque()
        self.mass = 0.0
        self.last_flow_step = _NEVER
        self.advanced_m = 0.0
        self.last_out = 0.0
        self.last_out_step = _NEVER
        self._budget_step = _NEVER
        self._send = 0.0
        self._recv = 0.0

    @property
    def jam_storage(self) -> float:
        return self.jam

    def ensure_budgets(self, step: int):
        if self._budget_step == step:
            return
        self._send = ltm_sending(self, step)
        self._recv = ltm_receiving(self, step)
        self._budget_step = step
        self.advanced_m = 0.0
        cutoff = step - max(self.tf_steps, self.tb_steps) - 2.0
        if cutoff > 0:
            self.up_curve.prune(cutoff)
            self.down_curve.prune(cutoff)

    def advance(self, step: int):
        self.ensure_budgets(step)

    def has_outflow_candidate(self) -> bool:
        return bool(self.queue)

    def no_packets(self) -> bool:
        return not self.queue

    def scrub(self):
        """Clear float residue once the link is empty of packets; the
        cumulative curves keep their history."""
        self.mass = 0.0
        self.advanced_m = 0.0

    def step_advanced(self, step: int) -> float:
        """Vehicle-meters advanced during ``step`` (0 if not stepped then)."""
        return self.advanced_m if self._budget_step == step else 0.0

    def send_left(self, step: int) -> float:
        self.ensure_budgets(step)
        return self._send

    def recv_left(self, step: int) -> float:
        self.ensure_budgets(step)
        return self._recv

    def out_head(self):
        return self.queue[0] if self.queue else None

    def pop_out(self, amount: float, step: int):
        moved, got = pop_mass(self.queue, amount)
        if got > 0.0:
            self._send -= got
            self.n_down += got
            self.mass -= got
            self.down_curve.record(step + 1.0, self.n_down)
            self.advanced_m += got * self.link.length_m
            if self.last_out_step == step:
                self.last_out += got
            else:
                self.last_out_step = step
                self.last_out = got
            self.last_flow_step = step
            if self.n_down > self.n_up + 1e-9:
                raise SimulationAssertionError(
                    f"link {self.link.id}: exits exceed entries")
        return moved, got

    def push_in(self, packet, step: int):
        self._recv -= packet.size
        self.n_up += packet.size
        self.mass += packet.size
        self.up_curve.record(step + 1.0, self.n_up)
        self.last_flow_step = step
        packet.entry_step = step
        append_coalesced(self.queue, packet)

    def resident_packets(self):
        for p in self.queue:
            yield p


def ltm_sending(state: LtmLinkState, step: int) -> float:
    """Vehicles able to exit during step: entries that have had the free-flow
    travel time, minus exits so far, capped by capacity."""
    eligible = state.up_curve.at(step + 1.0 - state.tf_steps) - state.n_down
    return max(0.0, min(eligible, state.q_cap))


def ltm_receiving(state: LtmLinkState, step: int) -> float:
    """Vehicles the link can absorb during step: storage freed by exits as
    seen after the backward-wave delay, plus jam storage, minus entries."""
    room = state.down_curve.at(step + 1.0 - state.tb_steps) + state.jam - state.n_up
    return max(0.0, min(room, state.q_cap))


def ltm_step(state: LtmLinkState, step: int, inflow_packets=(), outflow: float = 0.0):
    """Apply boundary flows directly (used by single-link tests; the engine
    drives push_in/pop_out through the transfer phase instead)."""
    state.ensure_budgets(step)
    total_in = sum(p.size for p in inflow_packets)
    if total_in > state._recv + 1e-9:
        raise SimulationAssertionError(
            f"link {state.link.id}: inflow {total_in} exceeds receiving {state._recv}")
    if outflow > state._send + 1e-9:
        raise SimulationAssertionError(
            f"link {state.link.id}: outflow {outflow} exceeds sending {state._send}")
    moved, got = (state.pop_out(outflow, step) if outflow > 0 else ([], 0.0))
    for p in inflow_packets:
        state.push_in(p, step)
    return moved, got
