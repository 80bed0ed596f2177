"""Simulation engine: configuration, element construction and the step loop.

Each step runs fixed phases: (1) inject due departures through entry
receiving budgets (deferred FIFO per origin link when blocked; reservoir
origins always accept), (2) in-element updates (cell flows, curve budgets,
reservoir motion), (3) transfers over all junctions in node-id order,
(4) bookkeeping. All sending/receiving budgets are frozen per element per
step from the pre-step state the first time they are touched, which keeps
the update synchronous regardless of phase interleaving.

The engine is single-threaded by contract; independent Simulation instances
can run in parallel processes. ``Simulation.step`` is the stepping API an
external controller (e.g. an RL wrapper) can drive directly.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bathtub import RegionState
from .ctm import CtmLinkState
from .demand import MIN_FRAGMENT, VehiclePacket, split_packet
from .errors import InputError, SimulationAssertionError
from .ltm import LtmLinkState
from .network import RoadNetwork
from .transfer import (Junction, LinkInterface, RegionInterface,
                       detect_gridlock, transfer_step, vehicle_arrival)

MODEL_CTM = "CTM"
MODEL_LTM = "LTM"
MODEL_BATHTUB = "BATHTUB"
MODELS = (MODEL_CTM, MODEL_LTM, MODEL_BATHTUB)


@dataclass
class OutputOptions:
    trajectories: bool = False
    link_volumes: bool = True
    region_accumulation: bool = True
    gridlock_report: bool = True
    geojson: bool = False
    figures: bool = True
    volume_stride_s: float = 60.0
    trajectory_stride_s: float = 60.0
    accumulation_stride_s: float = 60.0


@dataclass
class SimulationConfig:
    dt_s: float = 1.0
    horizon_s: float = 86400.0
    seed: int = 0
    demand_scale: float = 1.0
    assignment_type: str = "aon"          # "aon" | "incremental"
    n_slices: int = 1
    model_default: str = MODEL_BATHTUB
    model_overrides: dict = field(default_factory=dict)
    gridlock_window_s: float = 300.0
    outputs: OutputOptions = field(default_factory=OutputOptions)

    def __post_init__(self):
        if self.dt_s <= 0:
            raise InputError("dt_s must be positive")
        n = self.horizon_s / self.dt_s
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise InputError("horizon_s must be a positive multiple of dt_s")
        if self.assignment_type not in ("aon", "incremental"):
            raise InputError(f"unknown assignment type {self.assignment_type!r}")
        if self.n_slices < 1:
            raise InputError("n_slices must be >= 1")
        for model in [self.model_default, *self.model_overrides.values()]:
            if model not in MODELS:
                raise InputError(f"unknown model {model!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_s / self.dt_s))

    def model_for(self, region_id) -> str:
        return self.model_overrides.get(region_id, self.model_default)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        assignment = d.pop("assignment", {}) or {}
        model_map = d.pop("model_map", {}) or {}
        outputs = d.pop("outputs", {}) or {}
        overrides = {}
        for item in model_map.get("overrides", []) or []:
            overrides[str(item["region_id"])] = item["model"]
        known = {"dt_s", "horizon_s", "seed", "demand_scale", "gridlock_window_s"}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        out_known = {f.name for f in OutputOptions.__dataclass_fields__.values()}
        bad = set(outputs) - out_known
        if bad:
            raise InputError(f"unknown output keys: {sorted(bad)}")
        return cls(
            dt_s=float(d.get("dt_s", 1.0)),
            horizon_s=float(d.get("horizon_s", 86400.0)),
            seed=int(d.get("seed", 0)),
            demand_scale=float(d.get("demand_scale", 1.0)),
            assignment_type=assignment.get("type", "aon"),
            n_slices=int(assignment.get("n_slices", 1)),
            model_default=model_map.get("default", MODEL_BATHTUB),
            model_overrides=overrides,
            gridlock_window_s=float(d.get("gridlock_window_s", 300.0)),
            outputs=OutputOptions(**outputs),
        )

    @classmethod
    def from_json(cls, path) -> "SimulationConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot open config: {exc}")
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}")
        return cls.from_dict(data)


@dataclass
class StepMetrics:
    step: int
    t_s: float
    entered: float
    moved: float
    exited: float
    in_network: float
    completed: float
    region_accumulation: dict | None = None


@dataclass(frozen=True)
class GridlockEvent:
    t_detected: float
    cycle: tuple
    blocked_vehicles: float


@dataclass
class Summary:
    steps: int
    wall_time_s: float
    departed: float
    completed_mass: float
    completed_trips: int
    in_network: float
    pending: float
    max_accumulation: float
    gridlock_events: list


class Simulation:
    """One simulation instance over a partitioned network.

    ``assignment`` maps node id -> region id; ``mfds`` maps region id ->
    UnderwoodMfd (required for every reservoir region); ``packets`` come
    from the demand module (the engine works on private copies).
    """

    def __init__(self, config: SimulationConfig, net: RoadNetwork,
                 assignment: dict, mfds: dict | None = None, packets=(),
                 audit_every: int = 0):
        self.config = config
        self.net = net
        self.n_steps = config.n_steps
        mfds = mfds or {}

        missing = set(net.nodes) - set(assignment)
        if missing:
            raise InputError(f"region assignment misses nodes, e.g. {sorted(missing)[:3]}")
        self._region_ids = sorted({assignment[n] for n in net.nodes})
        self._model = {rid: config.model_for(rid) for rid in self._region_ids}
        self._link_region = {lid: assignment[link.from_node]
                             for lid, link in net.links.items()}

        # Elements: link states for link-model regions, reservoir states otherwise.
        self.link_elements: dict[str, CtmLinkState | LtmLinkState] = {}
        self.region_states: dict[str, RegionState] = {}
        self._region_links: dict[str, list] = {rid: [] for rid in self._region_ids}
        for lid in sorted(net.links):
            rid = self._link_region[lid]
            model = self._model[rid]
            if model == MODEL_CTM:
                el = CtmLinkState(net.links[lid], config.dt_s)
            elif model == MODEL_LTM:
                el = LtmLinkState(net.links[lid], config.dt_s)
            else:
                continue
            self.link_elements[lid] = el
            self._region_links[rid].append(el)
        for rid in self._region_ids:
            if self._model[rid] == MODEL_BATHTUB:
                mfd = mfds.get(rid)
                if mfd is None:
                    raise InputError(f"region {rid!r} uses the reservoir model but has no MFD")
                self.region_states[rid] = RegionState(rid, mfd, config.dt_s)
        self._bathtub_list = [self.region_states[rid] for rid in self._region_ids
                              if rid in self.region_states]

        # Length-weighted free-flow speed per link-model region (for reporting).
        self._region_freeflow = {}
        for rid, els in self._region_links.items():
            if els:
                total = sum(e.link.length_m for e in els)
                self._region_freeflow[rid] = sum(
                    e.link.vf_mps * e.link.length_m for e in els) / total

        # Private packet copies with element hop plans.
        self._plan_cache: dict[int, tuple] = {}
        self._exit_pairs: set = set()
        self.packets: list[VehiclePacket] = []
        scale = config.demand_scale
        for p in packets:
            plan = self._plan_for(p.path)
            self.packets.append(VehiclePacket(
                pid=p.id, origin=p.origin, destination=p.destination,
                depart_time=p.depart_time, size=p.size * scale,
                path=p.path, root_id=p.root_id, plan=plan))
        self._pending = sorted(self.packets, key=lambda p: p.depart_time)
        self._pending_idx = 0

        # Junctions: one per node that terminates a link element or receives
        # reservoir exits; each gets a private counter-based RNG stream.
        interface_map: dict[str, list] = {}
        for lid in sorted(self.link_elements):
            el = self.link_elements[lid]
            interface_map.setdefault(el.link.to_node, []).append(LinkInterface(el))
        for rid, node in sorted(self._exit_pairs):
            interface_map.setdefault(node, []).append(
                RegionInterface(self.region_states[rid], node))
        self._junctions: dict[str, Junction] = {}
        seeds = np.random.SeedSequence(config.seed).spawn(len(interface_map))
        for i, node in enumerate(sorted(interface_map)):
            ifaces = sorted(interface_map[node], key=lambda f: f.sort_key())
            rng = np.random.Generator(np.random.Philox(seeds[i]))
            self._junctions[node] = Junction(node, ifaces, rng)

        # Ledgers.
        self.departed = 0.0
        self.completed_mass = 0.0
        self.in_network = 0.0
        self.max_accumulation = 0.0
        self.completions: list = []
        self.gridlock_events: list[GridlockEvent] = []
        self._gridlock_seen: set = set()
        self._active_links: dict = {}
        self._deferred: dict = {}
        self._step = 0
        self._step_completed = 0.0
        self._audit_every = audit_every

    # Construction helpers ---------------------------------------------------

    def _plan_for(self, path) -> tuple:
        """Project a link path onto the element hop sequence:
        ("link", element, None, exit_node) per link in a link-model region,
        ("region", state, segment_m, exit_node) per maximal run of links in
        one reservoir region (exit_node None on the final hop of such runs).
        """
        plan = self._plan_cache.get(id(path))
        if plan is not None:
            return plan
        links = path.links
        if not links:
            raise InputError("packet path has no links")
        hops = []
        i = 0
        while i < len(links):
            lid = links[i]
            if lid not in self.net.links:
                raise InputError(f"path references unknown link {lid!r}")
            rid = self._link_region[lid]
            if self._model[rid] == MODEL_BATHTUB:
                seg = 0.0
                j = i
                while j < len(links) and self._link_region[links[j]] == rid:
                    seg += self.net.links[links[j]].length_m
                    j += 1
                exit_node = self.net.links[links[j]].from_node if j < len(links) else None
                rs = self.region_states[rid]
                if seg > rs.longest_path_m:
                    rs.longest_path_m = seg
                if exit_node is not None:
                    self._exit_pairs.add((rid, exit_node))
                hops.append(("region", rs, seg, exit_node))
                i = j
            else:
                hops.append(("link", self.link_elements[lid], None,
                             self.net.links[lid].to_node))
                i += 1
        plan = tuple(hops)
        self._plan_cache[id(path)] = plan
        return plan

    # Simulation context used by the transfer module -------------------------

    def next_hop(self, packet):
        plan = packet.plan
        i = packet.hop_index + 1
        return plan[i] if i < len(plan) else None

    def receiving_left(self, hop, step):
        if hop[0] == "link":
            return hop[1].recv_left(step)
        return math.inf

    def deliver(self, packet, hop, step):
        packet.hop_index += 1
        if hop[0] == "link":
            el = hop[1]
            el.push_in(packet, step)
            self._active_links[el] = None
        else:
            hop[1].insert(packet, hop[2])

    def complete(self, packet, step):
        self.completions.append(vehicle_arrival(packet, step, self.config.dt_s))
        self.completed_mass += packet.size
        self.in_network -= packet.size
        self._step_completed += packet.size

    # Step phases ------------------------------------------------------------

    def _inject_due(self, step):
        bound = (step + 1) * self.config.dt_s
        entered = 0.0
        pending, idx = self._pending, self._pending_idx
        deferred = self._deferred
        while idx < len(pending) and pending[idx].depart_time < bound:
            p = pending[idx]
            idx += 1
            hop = p.plan[0]
            if hop[0] == "region":
                hop[1].schedule_entry(p, hop[2])
                entered += p.size
                self.departed += p.size
                self.in_network += p.size
            else:
                q = deferred.get(hop[1])
                if q is None:
                    q = deferred[hop[1]] = deque()
                q.append(p)
        self._pending_idx = idx
        emptied = []
        for el, q in deferred.items():
            while q:
                head = q[0]
                movable = min(head.size, el.recv_left(step))
                if movable + 1e-12 >= head.size:
                    q.popleft()
                    moved = head
                elif movable >= MIN_FRAGMENT:
                    moved = split_packet(head, movable)
                else:
                    break
                el.push_in(moved, step)
                self._active_links[el] = None
                entered += moved.size
                self.departed += moved.size
                self.in_network += moved.size
                if moved is not head:
                    break  # remainder stays blocked this step
            if not q:
                emptied.append(el)
        for el in emptied:
            del deferred[el]
        return entered

    def _advance_elements(self, step):
        drop = []
        for el in self._active_links:
            if el.mass <= 1e-9 and el.no_packets():
                el.scrub()
                drop.append(el)
                continue
            el.advance(step)
        for el in drop:
            del self._active_links[el]

    def _advance_regions(self, step):
        for rs in self._bathtub_list:
            exits, _ = rs.step(step)
            for p in exits:
                hop = p.plan[p.hop_index]
                node = hop[3]
                if node is None:
                    rs.withdraw(p)
                    self.complete(p, step)
                else:
                    rs.hold_exit(p, node)

    def _transfer_phase(self, step):
        nodes = {}
        for el in self._active_links:
            if el.has_outflow_candidate():
                nodes[el.link.to_node] = None
        for rs in self._bathtub_list:
            if rs.exit_mass > 0.0:
                for node, buf in rs.exit_buffers.items():
                    if buf:
                        nodes[node] = None
        moved = 0.0
        for node in sorted(nodes):
            moved += transfer_step(self._junctions[node], step, self)
        return moved

    def _check_conservation(self):
        err = abs(self.departed - self.completed_mass - self.in_network)
        if err > 1e-9 * max(1.0, self.departed):
            raise SimulationAssertionError(
                f"conservation violated: departed={self.departed!r} "
                f"completed={self.completed_mass!r} in_network={self.in_network!r}")

    def _audit(self):
        total = sum(el.mass for el in self.link_elements.values())
        for rs in self._bathtub_list:
            total += rs.mass + sum(p.size for p, _ in rs.pending)
        err = abs(total - self.in_network)
        if err > 1e-9 * max(1.0, self.departed):
            raise SimulationAssertionError(
                f"element audit off: elements hold {total}, ledger says {self.in_network}")

    # Public API --------------------------------------------------------------

    def step(self, collect_regions: bool = False) -> StepMetrics:
        step = self._step
        if step >= self.n_steps:
            raise InputError("stepped past the simulation horizon")
        self._step_completed = 0.0
        entered = self._inject_due(step)
        self._advance_elements(step)
        self._advance_regions(step)
        moved = self._transfer_phase(step)
        self._check_conservation()
        if self._audit_every and (step + 1) % self._audit_every == 0:
            self._audit()
        if self.in_network > self.max_accumulation:
            self.max_accumulation = self.in_network
        metrics = StepMetrics(
            step=step,
            t_s=step * self.config.dt_s,
            entered=entered,
            moved=moved,
            exited=self._step_completed,
            in_network=self.in_network,
            completed=self.completed_mass,
            region_accumulation=self.region_accumulation() if collect_regions else None,
        )
        self._step += 1
        return metrics

    def region_accumulation(self) -> dict:
        acc = {}
        for rid in self._region_ids:
            rs = self.region_states.get(rid)
            if rs is not None:
                acc[rid] = rs.mass + sum(p.size for p, _ in rs.pending)
            else:
                acc[rid] = sum(el.mass for el in self._region_links[rid])
        return acc

    def region_speeds(self, step: int | None = None) -> dict:
        """Per-region speed: the reservoir law for bathtub regions, the
        vehicle-meters-advanced estimator for link-model regions."""
        if step is None:
            step = self._step - 1
        speeds = {}
        dt = self.config.dt_s
        for rid in self._region_ids:
            rs = self.region_states.get(rid)
            if rs is not None:
                speeds[rid] = rs.current_speed
                continue
            els = self._region_links[rid]
            mass = sum(el.mass for el in els)
            if mass <= 1e-12:
                speeds[rid] = self._region_freeflow.get(rid, 0.0)
            else:
                advanced = sum(el.step_advanced(step) for el in els)
                speeds[rid] = advanced / (mass * dt)
        return speeds

    def link_occupancies(self, active_only: bool = True) -> dict:
        if active_only:
            return {el.link.id: el.mass for el in self._active_links}
        return {lid: el.mass for lid, el in sorted(self.link_elements.items())}

    def pending_mass(self) -> float:
        rest = sum(p.size for p in self._pending[self._pending_idx:])
        rest += sum(p.size for q in self._deferred.values() for p in q)
        return rest

    def _check_gridlock(self, step, window_steps):
        for cycle in detect_gridlock(self, step, window_steps):
            key = tuple(cycle)
            if key in self._gridlock_seen:
                continue
            self._gridlock_seen.add(key)
            blocked = sum(self.link_elements[lid].mass for lid in key)
            self.gridlock_events.append(GridlockEvent(
                t_detected=step * self.config.dt_s,
                cycle=key,
                blocked_vehicles=blocked,
            ))

    def run(self, recorders=(), gridlock_check_every: int | None = None) -> Summary:
        cfg = self.config
        window = int(round(cfg.gridlock_window_s / cfg.dt_s))
        cadence = gridlock_check_every or max(1, min(window, 60))
        t0 = time.perf_counter()
        while self._step < self.n_steps:
            metrics = self.step()
            for rec in recorders:
                rec.sample(self, metrics)
            if cfg.outputs.gridlock_report and window > 0 and (metrics.step + 1) % cadence == 0:
                self._check_gridlock(metrics.step, window)
        wall = time.perf_counter() - t0
        return Summary(
            steps=self._step,
            wall_time_s=wall,
            departed=self.departed,
            completed_mass=self.completed_mass,
            completed_trips=len(self.completions),
            in_network=self.in_network,
            pending=self.pending_mass(),
            max_accumulation=self.max_accumulation,
            gridlock_events=list(self.gridlock_events),
        )


def initialize(config, net, assignment, mfds=None, packets=(), **kwargs) -> Simulation:
    """Build a ready-to-step simulation (alias for the Simulation constructor)."""
    return Simulation(config, net, assignment, mfds=mfds, packets=packets, **kwargs)
