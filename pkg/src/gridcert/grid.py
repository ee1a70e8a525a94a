"""Typed grid topologies, parameter domains, sampling, and subsystem sets.

A topology is a connected simple graph whose buses carry one of a fixed set
of kinds. Two system classes exist: transmission grids (gen / load, with
exactly one reference load bus) and microgrids (inverter / load). Parameter
values live outside the topology in a ParamSet so one structure can carry
many parameter draws.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
from dataclasses import dataclass

import numpy as np

TRANSMISSION = "transmission"
MICROGRID = "microgrid"

GEN = "gen"
LOAD = "load"
REFLOAD = "refload"
INVERTER = "inverter"

_KINDS = {
    TRANSMISSION: (GEN, LOAD, REFLOAD),
    MICROGRID: (INVERTER, LOAD),
}

# Per-component parameter intervals. Buses are keyed by kind, edges share one
# field set per system class.
BUS_FIELDS = {
    GEN: ("m", "d_g", "p_g", "b"),
    LOAD: ("p_d", "d_d"),
    REFLOAD: ("p_d", "d_d"),
    INVERTER: ("K_p", "K_q", "tau_p", "tau_q"),
}
# Microgrid load buses use static sensitivity coefficients instead of the
# transmission p_d / d_d pair; resolved through the system class.
MICROGRID_LOAD_FIELDS = ("S_pf", "S_pv", "S_qf", "S_qv")

EDGE_FIELDS = {
    TRANSMISSION: ("b",),
    MICROGRID: ("R", "X"),
}


def bus_fields(system_class: str, kind: str) -> tuple[str, ...]:
    if system_class == MICROGRID and kind == LOAD:
        return MICROGRID_LOAD_FIELDS
    return BUS_FIELDS[kind]


@dataclass(frozen=True)
class ParameterDomain:
    """Uniform sampling intervals per bus kind field and per edge field."""

    system_class: str
    bus: dict
    edge: dict
    # Transmission only: required interval for (total load - total generation).
    imbalance: tuple[float, float] | None = None

    def with_imbalance(self, interval: tuple[float, float]) -> "ParameterDomain":
        return dataclasses.replace(self, imbalance=interval)


TRANSMISSION_DOMAIN = ParameterDomain(
    system_class=TRANSMISSION,
    bus={
        GEN: {"m": (2.0, 10.0), "d_g": (4.0, 20.0), "p_g": (0.5, 1.5),
              "b": (1.0 / 0.3, 1.0 / 0.1)},
        LOAD: {"p_d": (0.5, 1.5), "d_d": (4.0, 6.0)},
        REFLOAD: {"p_d": (0.5, 1.5), "d_d": (4.0, 6.0)},
    },
    edge={"b": (1.0 / 0.3, 1.0 / 0.1)},
    imbalance=(0.5, 1.5),
)

MICROGRID_DOMAIN = ParameterDomain(
    system_class=MICROGRID,
    bus={
        INVERTER: {"K_p": (0.0002, 0.005), "K_q": (0.0002, 0.005),
                   "tau_p": (0.006, 0.15), "tau_q": (0.006, 0.15)},
        LOAD: {"S_pf": (0.001, 0.025), "S_pv": (0.0002, 0.005),
               "S_qf": (0.0002, 0.005), "S_qv": (0.001, 0.025)},
    },
    edge={"R": (0.0001, 0.0025), "X": (0.0002, 0.005)},
)

# State-space sampling box for transmission systems: every angle entry (theta
# and delta) and every speed entry.
ANGLE_BOX = (-2.0 * np.pi, 2.0 * np.pi)
OMEGA_BOX = (-0.2, 0.2)


@dataclass(frozen=True)
class Topology:
    """Connected simple graph with typed buses.

    kinds[i] is the kind of bus id i; edges are (i, j) tuples with i < j.
    """

    system_class: str
    kinds: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.kinds)
        if n < 2:
            raise ValueError("a topology needs at least two buses")
        valid = _KINDS[self.system_class]
        for k in self.kinds:
            if k not in valid:
                raise ValueError(f"kind {k!r} invalid for {self.system_class}")
        seen = set()
        for (i, j) in self.edges:
            if not (0 <= i < j < n):
                raise ValueError(f"edge ({i}, {j}) out of range or unordered")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        if self.system_class == TRANSMISSION:
            if sum(k == REFLOAD for k in self.kinds) != 1:
                raise ValueError("transmission topology needs exactly one refload bus")
            if sum(k == GEN for k in self.kinds) < 1:
                raise ValueError("transmission topology needs at least one gen bus")
        else:
            if sum(k == INVERTER for k in self.kinds) < 1 or sum(k == LOAD for k in self.kinds) < 1:
                raise ValueError("microgrid topology needs at least one inverter and one load")
        if not _connected(n, self.edges):
            raise ValueError("topology is not connected")

    @property
    def n_buses(self) -> int:
        return len(self.kinds)

    def buses_of_kind(self, kind: str) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.kinds) if k == kind)

    def neighbors(self, i: int) -> tuple[int, ...]:
        out = []
        for (a, b) in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return tuple(sorted(out))

    def adjacency(self) -> list[tuple[int, ...]]:
        adj = [[] for _ in range(self.n_buses)]
        for (a, b) in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return [tuple(sorted(x)) for x in adj]


def _connected(n: int, edges) -> bool:
    adj = [[] for _ in range(n)]
    for (a, b) in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def _prufer_tree(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform random labeled tree on n nodes via Prufer decode."""
    if n == 2:
        return [(0, 1)]
    seq = rng.integers(0, n, size=n - 2)
    degree = np.ones(n, dtype=int)
    for v in seq:
        degree[v] += 1
    edges = []
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, int(v)), max(leaf, int(v))))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, int(v))
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append((min(u, v), max(u, v)))
    return edges


def generate_topology(n_a: int, system_class: str, seed,
                      gen_fraction: float = 0.4) -> Topology:
    """Random connected topology: a uniform spanning tree plus extra edges.

    The edge count target is drawn uniformly from [n_a - 1, floor(1.5 n_a)].
    For transmission, gen_fraction of the buses (rounded, clamped to keep at
    least one load) become gens and one remaining bus the refload; for
    microgrids the same fraction becomes inverters.
    """
    if n_a < 2:
        raise ValueError("n_a must be at least 2")
    rng = np.random.default_rng(seed)
    edges = set(_prufer_tree(n_a, rng))
    target = int(rng.integers(n_a - 1, int(1.5 * n_a) + 1))
    non_edges = [(i, j) for i in range(n_a) for j in range(i + 1, n_a)
                 if (i, j) not in edges]
    extra = max(0, target - len(edges))
    if extra > 0 and non_edges:
        take = rng.choice(len(non_edges), size=min(extra, len(non_edges)),
                          replace=False)
        for idx in take:
            edges.add(non_edges[idx])
    n_special = int(round(gen_fraction * n_a))
    n_special = min(max(n_special, 1), n_a - 1)
    special = rng.choice(n_a, size=n_special, replace=False)
    kinds = [LOAD] * n_a
    first = GEN if system_class == TRANSMISSION else INVERTER
    for i in special:
        kinds[int(i)] = first
    if system_class == TRANSMISSION:
        rest = [i for i in range(n_a) if kinds[i] == LOAD]
        kinds[int(rng.choice(rest))] = REFLOAD
    return Topology(system_class, tuple(kinds), tuple(sorted(edges)))


@dataclass
class ParamSet:
    """Parameter values for one topology: per-bus and per-edge field maps."""

    bus: dict
    edge: dict

    def copy(self) -> "ParamSet":
        return ParamSet(
            bus={i: dict(p) for i, p in self.bus.items()},
            edge={e: dict(p) for e, p in self.edge.items()},
        )


def sample_parameters(topology: Topology, domain: ParameterDomain, seed,
                      max_retries: int = 1000) -> ParamSet:
    """Uniform draw from the domain's intervals.

    Transmission draws are post-processed so total load minus total
    generation lands in the domain's imbalance interval: all p_d values are
    shifted uniformly toward a target drawn from that interval, and the draw
    is rejected if any shifted p_d leaves its own interval.
    """
    if domain.system_class != topology.system_class:
        raise ValueError("domain/topology class mismatch")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        ps = _draw(topology, domain, rng)
        if domain.imbalance is None:
            return ps
        load_ids = [i for i, k in enumerate(topology.kinds) if k in (LOAD, REFLOAD)]
        p_d = np.array([ps.bus[i]["p_d"] for i in load_ids])
        p_g = sum(ps.bus[i]["p_g"] for i in topology.buses_of_kind(GEN))
        target = rng.uniform(*domain.imbalance)
        shift = (p_g + target - p_d.sum()) / len(load_ids)
        shifted = p_d + shift
        lo, hi = domain.bus[LOAD]["p_d"]
        if shifted.min() >= lo and shifted.max() <= hi:
            for i, v in zip(load_ids, shifted):
                ps.bus[i]["p_d"] = float(v)
            return ps
    raise ValueError("imbalance constraint infeasible for drawn p_g after "
                     f"{max_retries} retries")


def _draw(topology: Topology, domain: ParameterDomain,
          rng: np.random.Generator) -> ParamSet:
    bus = {}
    for i, kind in enumerate(topology.kinds):
        fields = bus_fields(topology.system_class, kind)
        intervals = domain.bus[kind]
        bus[i] = {f: float(rng.uniform(*intervals[f])) for f in fields}
    edge = {}
    for e in topology.edges:
        edge[e] = {f: float(rng.uniform(*domain.edge[f])) for f in EDGE_FIELDS[topology.system_class]}
    return ParamSet(bus, edge)


def perturb_parameters(params: ParamSet, topology: Topology,
                       domain: ParameterDomain, radius: float, count: int,
                       seed) -> list[ParamSet]:
    """`count` perturbed copies: each field moves by U(-r, r) times its
    interval width, clipped back into the interval. radius = 0 returns exact
    copies."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        ps = params.copy()
        for i, kind in enumerate(topology.kinds):
            intervals = domain.bus[kind]
            for f, (lo, hi) in intervals.items():
                if f not in ps.bus[i]:
                    continue
                v = ps.bus[i][f] + rng.uniform(-radius, radius) * (hi - lo)
                ps.bus[i][f] = float(np.clip(v, lo, hi))
        for e in topology.edges:
            for f, (lo, hi) in domain.edge.items():
                v = ps.edge[e][f] + rng.uniform(-radius, radius) * (hi - lo)
                ps.edge[e][f] = float(np.clip(v, lo, hi))
        out.append(ps)
    return out


def enumerate_subsystems(topology: Topology) -> dict:
    """Subsystem members per type key, in deterministic ascending order.

    Transmission keys: "1" (gen buses), "2" (non-reference load buses),
    "3" (the reference bus), "e" (edges), and the bus-pair keys "1-1",
    "2-2", "1-2", "1-3", "2-3" over full ordered Cartesian products,
    independent of adjacency. Microgrid keys: "1" (inverters), "2" (loads),
    and directed adjacent pairs "1-1", "2-2", "1-2", "2-1".
    """
    if topology.system_class == TRANSMISSION:
        v1 = topology.buses_of_kind(GEN)
        v2 = topology.buses_of_kind(LOAD)
        v3 = topology.buses_of_kind(REFLOAD)
        return {
            "1": [(i,) for i in v1],
            "2": [(i,) for i in v2],
            "3": [(i,) for i in v3],
            "e": [e for e in topology.edges],
            "1-1": [(i, j) for i in v1 for j in v1 if i != j],
            "2-2": [(i, j) for i in v2 for j in v2 if i != j],
            "1-2": [(i, j) for i in v1 for j in v2],
            "1-3": [(i, j) for i in v1 for j in v3],
            "2-3": [(i, j) for i in v2 for j in v3],
        }
    inv = set(topology.buses_of_kind(INVERTER))
    directed = []
    for (a, b) in topology.edges:
        directed.append((a, b))
        directed.append((b, a))
    directed.sort()
    out = {"1": [(i,) for i in sorted(inv)],
           "2": [(i,) for i in topology.buses_of_kind(LOAD)],
           "1-1": [], "2-2": [], "1-2": [], "2-1": []}
    for (i, j) in directed:
        key = f"{1 if i in inv else 2}-{1 if j in inv else 2}"
        out[key].append((i, j))
    return out


# -- JSON documents -----------------------------------------------------------

def system_to_doc(topology: Topology, params: ParamSet,
                  eps_sp: float | None = None,
                  omega_b: float | None = None) -> dict:
    doc = {
        "class": topology.system_class,
        "buses": [{"id": i, "kind": topology.kinds[i], "params": dict(params.bus[i])}
                  for i in range(topology.n_buses)],
        "edges": [{"i": i, "j": j, "params": dict(params.edge[(i, j)])}
                  for (i, j) in topology.edges],
    }
    if topology.system_class == TRANSMISSION:
        doc["eps_sp"] = eps_sp if eps_sp is not None else 0.01
    else:
        doc["omega_b"] = omega_b if omega_b is not None else 100.0 * np.pi
    return doc


def system_from_doc(doc: dict):
    """Parse a system document. Returns (topology, params, extra) where extra
    holds eps_sp or omega_b. Unknown bus/edge param fields are rejected."""
    cls = doc["class"]
    if cls not in _KINDS:
        raise ValueError(f"unknown system class {cls!r}")
    buses = sorted(doc["buses"], key=lambda b: b["id"])
    ids = [b["id"] for b in buses]
    if ids != list(range(len(ids))):
        raise ValueError("bus ids must be 0..n-1")
    kinds = tuple(b["kind"] for b in buses)
    edges = tuple(sorted((min(e["i"], e["j"]), max(e["i"], e["j"]))
                         for e in doc["edges"]))
    topology = Topology(cls, kinds, edges)
    bus = {}
    for b in buses:
        fields = bus_fields(cls, b["kind"])
        extra_fields = set(b["params"]) - set(fields)
        if extra_fields:
            raise ValueError(f"bus {b['id']}: unknown params {sorted(extra_fields)}")
        missing = set(fields) - set(b["params"])
        if missing:
            raise ValueError(f"bus {b['id']}: missing params {sorted(missing)}")
        bus[b["id"]] = {f: float(b["params"][f]) for f in fields}
    edge = {}
    for e in doc["edges"]:
        key = (min(e["i"], e["j"]), max(e["i"], e["j"]))
        fields = EDGE_FIELDS[cls]
        if set(e["params"]) != set(fields):
            raise ValueError(f"edge {key}: params must be exactly {fields}")
        edge[key] = {f: float(e["params"][f]) for f in fields}
    extra = {}
    if cls == TRANSMISSION:
        extra["eps_sp"] = float(doc.get("eps_sp", 0.01))
    else:
        extra["omega_b"] = float(doc.get("omega_b", 100.0 * np.pi))
    return topology, bus_edge_params(bus, edge), extra


def bus_edge_params(bus: dict, edge: dict) -> ParamSet:
    return ParamSet(bus=bus, edge=edge)


def save_system(path, topology: Topology, params: ParamSet, **extra) -> None:
    with open(path, "w") as fh:
        json.dump(system_to_doc(topology, params, **extra), fh, indent=1)
        fh.write("\n")


def load_system(path):
    with open(path) as fh:
        return system_from_doc(json.load(fh))
