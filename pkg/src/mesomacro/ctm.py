"""Cell-based link dynamics (sending/receiving flows over fixed cells).

A link is discretized into cells of length dx = v_f * dt (the distance
driven in one step at free-flow speed); the residual length is folded into
the last cell's storage. Flows between cells are the min of upstream
sending and downstream receiving, all computed synchronously from the
previous step's state. Vehicles are tracked as FIFO packet queues per cell,
so per-link FIFO holds exactly.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .demand import MIN_FRAGMENT, append_coalesced, pop_mass
from .errors import SimulationAssertionError
from .network import Link

_NEVER = -(10 ** 18)


def ctm_sending(link: Link, density_veh_lane_km, dt) -> float:
    """Max vehicles a cell at the given density can discharge in one step.

    min(k * v_f * dt * lanes, q_m * dt), with k converted from veh/lane/km.
    """
    demand_flow = density_veh_lane_km / 1000.0 * link.vf_mps * dt * link.lanes
    return max(0.0, min(demand_flow, link.qmax * dt))


def ctm_receiving(link: Link, density_veh_lane_km, dt) -> float:
    """Max vehicles a cell at the given density can absorb in one step.

    min(q_m * dt, v_b * dt * (K - k) * lanes), zero at jam density.
    """
    supply = link.vb_mps * dt * (link.kjam - density_veh_lane_km) / 1000.0 * link.lanes
    return max(0.0, min(link.qmax * dt, supply))


class CtmLinkState:
    """Dynamic state of one cell-discretized link.

    Budgets (internal flows, boundary sending/receiving) are frozen once per
    step on first touch, always from the pre-step state; the engine calls
    ``ensure_budgets`` before any same-step mutation.
    """

    __slots__ = ("link", "dt", "n_cells", "cell_len", "caps", "occ", "queues",
                 "q_cap", "w_ratio", "mass", "last_flow_step", "advanced_m",
                 "last_out", "last_out_step",
                 "_budget_step", "_send", "_recv", "_flows", "_applied")

    def __init__(self, link: Link, dt: float):
        self.link = link
        self.dt = dt
        dx = link.vf_mps * dt
        n = max(1, int(round(link.length_m / dx)))
        self.n_cells = n
        last_len = link.length_m - (n - 1) * dx
        self.cell_len = np.full(n, dx)
        self.cell_len[-1] = last_len
        self.caps = link.kjam * link.lanes * self.cell_len / 1000.0
        self.occ = np.zeros(n)
        self.queues = [deque() for _ in range(n)]
        self.q_cap = link.effective_capacity * dt
        self.w_ratio = link.vb_mps / link.vf_mps
        self.mass = 0.0
        self.last_flow_step = _NEVER
        self.advanced_m = 0.0  # vehicle-meters advanced during the current step
        self.last_out = 0.0    # boundary outflow of the step it happened in
        self.last_out_step = _NEVER
        self._budget_step = _NEVER
        self._send = 0.0
        self._recv = 0.0
        self._flows = None
        self._applied = True

    @property
    def jam_storage(self) -> float:
        return float(self.caps.sum())

    def densities(self):
        """Per-cell densities in veh/lane/km."""
        return self.occ / (self.link.lanes * self.cell_len / 1000.0)

    def ensure_budgets(self, step: int):
        """Freeze this step's internal flows and boundary budgets."""
        if self._budget_step == step:
            return
        if not self._applied and self._flows is not None:
            raise SimulationAssertionError(
                f"link {self.link.id}: budgets recomputed before step applied")
        occ = self.occ
        self._send = min(float(occ[-1]), self.q_cap)
        self._recv = max(0.0, min(self.q_cap, self.w_ratio * float(self.caps[0] - occ[0])))
        if self.n_cells > 1 and self.mass > 0.0:
            send = np.minimum(occ[:-1], self.q_cap)
            recv = np.minimum(self.q_cap, self.w_ratio * (self.caps[1:] - occ[1:]))
            flows = np.minimum(send, recv)
            flows[flows < MIN_FRAGMENT] = 0.0
            self._flows = flows
        else:
            self._flows = None
        self._budget_step = step
        self._applied = False

    def apply_step(self, step: int):
        """Advance internal cell-to-cell flows (phase 2 of the engine step)."""
        self.ensure_budgets(step)
        if self._applied:
            return
        self._applied = True
        self.advanced_m = 0.0
        flows = self._flows
        if flows is None:
            return
        before = float(self.occ.sum())
        occ = self.occ
        queues = self.queues
        # Downstream-first so each boundary pops only pre-step occupants.
        for i in range(self.n_cells - 2, -1, -1):
            f = float(flows[i])
            if f <= 0.0:
                continue
            moved, got = pop_mass(queues[i], f)
            if got <= 0.0:
                continue
            occ[i] -= got
            occ[i + 1] += got
            self.advanced_m += got * self.cell_len[i + 1]
            for p in moved:
                append_coalesced(queues[i + 1], p)
        after = float(occ.sum())
        if abs(after - before) > 1e-9 * max(1.0, before):
            raise SimulationAssertionError(
                f"link {self.link.id}: cell conservation off by {after - before}")

    def advance(self, step: int):
        self.apply_step(step)

    def has_outflow_candidate(self) -> bool:
        return bool(self.queues[-1])

    def no_packets(self) -> bool:
        return not any(self.queues)

    def scrub(self):
        """Clear float residue once the link is empty of packets."""
        self.occ[:] = 0.0
        self.mass = 0.0
        self.advanced_m = 0.0
        self._flows = None
        self._applied = True

    def step_advanced(self, step: int) -> float:
        """Vehicle-meters advanced during ``step`` (0 if not stepped then)."""
        return self.advanced_m if self._budget_step == step else 0.0

    # Boundary surface used by injection and the transfer phase -------------

    def send_left(self, step: int) -> float:
        self.ensure_budgets(step)
        return self._send

    def recv_left(self, step: int) -> float:
        self.ensure_budgets(step)
        return self._recv

    def out_head(self):
        q = self.queues[-1]
        return q[0] if q else None

    def pop_out(self, amount: float, step: int):
        """Remove up to ``amount`` vehicles from the downstream boundary."""
        moved, got = pop_mass(self.queues[-1], amount)
        if got > 0.0:
            self._send -= got
            self.occ[-1] -= got
            self.mass -= got
            self.advanced_m += got * self.cell_len[-1]
            if self.last_out_step == step:
                self.last_out += got
            else:
                self.last_out_step = step
                self.last_out = got
            self.last_flow_step = step
        return moved, got

    def push_in(self, packet, step: int):
        """Accept a packet at the upstream boundary (budget already checked)."""
        self._recv -= packet.size
        self.occ[0] += packet.size
        self.mass += packet.size
        self.last_flow_step = step
        packet.entry_step = step
        append_coalesced(self.queues[0], packet)

    def resident_packets(self):
        """Yield (packet, cell_index) for trajectory sampling."""
        for i, q in enumerate(self.queues):
            for p in q:
                yield p, i

    def position_fraction(self, cell_index: int) -> float:
        start = cell_index * self.cell_len[0] if self.n_cells > 1 else 0.0
        if cell_index == self.n_cells - 1:
            start = self.link.length_m - self.cell_len[-1]
        return float(min(1.0, (start + 0.5 * self.cell_len[cell_index]) / self.link.length_m))


def ctm_step(state: CtmLinkState, step: int):
    """Advance one link one step; returns (boundary sending, boundary receiving).

    The returned budgets are the amounts still available to the transfer
    phase, both computed from the pre-step state.
    """
    state.apply_step(step)
    return state._send, state._recv
