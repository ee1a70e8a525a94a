"""Transmission-system swing dynamics.

Implements the structure-preserving lossless network model: second-order
generator dynamics behind an internal susceptance, singularly perturbed
generator terminal buses (epsilon dtheta/dt), first-order frequency-dependent
loads, and an algebraic reference frequency omega_ref defined at a designated
reference load bus whose angle is pinned to zero and never stored.

State layout is [theta | delta | omega]: theta for all non-reference buses in
ascending bus-id order (generator terminals included), then rotor angles and
rotor speeds for generator buses in ascending order, n = 3 n_g + n_d - 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import grid, ode


@dataclass
class Trajectory:
    times: np.ndarray      # (K,) strictly increasing, seconds
    states: np.ndarray     # (K, n)
    flag: str

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times/states length mismatch")

    def save_csv(self, path, labels: list[str]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + labels)
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def load_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return Trajectory(data[:, 0], data[:, 1:], ode.FLAG_CONVERGED)


class SwingSystem:
    """Compiled vector field and derived computations for one (topology, params)."""

    def __init__(self, topology: grid.Topology, params: grid.ParamSet,
                 eps_sp: float = 0.01):
        if topology.system_class != grid.TRANSMISSION:
            raise ValueError("SwingSystem requires a transmission topology")
        self.topology = topology
        self.params = params
        self.eps_sp = float(eps_sp)
        n_bus = len(topology.kinds)
        self.gen_buses = topology.buses_of_kind(grid.GEN)
        self.load_buses = topology.buses_of_kind(grid.LOAD)
        self.ref_bus = topology.buses_of_kind(grid.REFLOAD)[0]
        self.nonref = [i for i in range(n_bus) if i != self.ref_bus]
        self.n_gen = len(self.gen_buses)
        self.n_theta = len(self.nonref)
        self.n = self.n_theta + 2 * self.n_gen
        # theta-block position of each bus; reference bus has no position
        self.theta_pos = {b: k for k, b in enumerate(self.nonref)}
        bp = params.bus
        self.m = np.array([bp[i]["m"] for i in self.gen_buses])
        self.d_g = np.array([bp[i]["d_g"] for i in self.gen_buses])
        self.p_g = np.array([bp[i]["p_g"] for i in self.gen_buses])
        self.b_int = np.array([bp[i]["b"] for i in self.gen_buses])
        self.p_d = np.array([bp[i]["p_d"] for i in self.load_buses])
        self.d_d = np.array([bp[i]["d_d"] for i in self.load_buses])
        self.p_d_ref = float(bp[self.ref_bus]["p_d"])
        self.d_d_ref = float(bp[self.ref_bus]["d_d"])
        self.edge_i = np.array([e[0] for e in topology.edges], dtype=int)
        self.edge_j = np.array([e[1] for e in topology.edges], dtype=int)
        self.b_edge = np.array([params.edge[e]["b"] for e in topology.edges])
        # signed incidence, oriented i -> j per stored edge
        inc = np.zeros((n_bus, len(topology.edges)))
        inc[self.edge_i, np.arange(len(topology.edges))] = 1.0
        inc[self.edge_j, np.arange(len(topology.edges))] = -1.0
        self._incidence = inc
        self._gen_arr = np.array(self.gen_buses, dtype=int)
        self._load_arr = np.array(self.load_buses, dtype=int)
        self._nonref_arr = np.array(self.nonref, dtype=int)

    # -- layout helpers -------------------------------------------------------

    def state_labels(self) -> list[str]:
        return ([f"theta_{b}" for b in self.nonref]
                + [f"delta_{b}" for b in self.gen_buses]
                + [f"omega_{b}" for b in self.gen_buses])

    def split(self, x: np.ndarray):
        """Views (theta, delta, omega) of trailing state axis."""
        nt, ng = self.n_theta, self.n_gen
        return x[..., :nt], x[..., nt:nt + ng], x[..., nt + ng:]

    def bus_angles(self, X: np.ndarray) -> np.ndarray:
        """Full (B, n_bus) angle table with the reference column pinned at 0."""
        X = np.atleast_2d(X)
        th = np.zeros(X.shape[:-1] + (len(self.topology.kinds),))
        th[..., self._nonref_arr] = X[..., :self.n_theta]
        return th

    # -- dynamics -------------------------------------------------------------

    def _bus_flow_sums(self, th_full: np.ndarray) -> np.ndarray:
        """Per-bus sum_j b_ij sin(theta_i - theta_j), batched."""
        flows = self.b_edge * np.sin(th_full[..., self.edge_i]
                                     - th_full[..., self.edge_j])
        return flows @ self._incidence.T

    def omega_ref(self, X: np.ndarray) -> np.ndarray:
        """Algebraic reference frequency, shape (B,)."""
        th_full = self.bus_angles(X)
        sums = self._bus_flow_sums(th_full)
        return (-self.p_d_ref - sums[..., self.ref_bus]) / self.d_d_ref

    def vector_field(self, X: np.ndarray) -> np.ndarray:
        """dx/dt for each row of X; accepts (n,) or (B, n)."""
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[-1] != self.n:
            raise ValueError(f"state dim {X.shape[-1]}, expected {self.n}")
        nt, ng = self.n_theta, self.n_gen
        delta = X[:, nt:nt + ng]
        omega = X[:, nt + ng:]
        th_full = self.bus_angles(X)
        sums = self._bus_flow_sums(th_full)
        w_ref = (-self.p_d_ref - sums[:, self.ref_bus]) / self.d_d_ref
        th_gen = th_full[:, self._gen_arr]
        sin_int = np.sin(delta - th_gen)
        F = np.empty_like(X)
        F[:, nt:nt + ng] = omega - w_ref[:, None]
        F[:, nt + ng:] = (self.p_g - self.d_g * omega - self.b_int * sin_int) / self.m
        th_dot = np.empty_like(th_full)
        th_dot[:, self._gen_arr] = (self.b_int * sin_int
                                    - sums[:, self._gen_arr]) / self.eps_sp
        if len(self._load_arr):
            th_dot[:, self._load_arr] = (-self.p_d - sums[:, self._load_arr]
                                         - self.d_d * w_ref[:, None]) / self.d_d
        F[:, :nt] = th_dot[:, self._nonref_arr]
        return F[0] if single else F

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Closed-form d f / d x at a single state."""
        x = np.asarray(x, dtype=np.float64)
        nt, ng = self.n_theta, self.n_gen
        n_bus = len(self.topology.kinds)
        delta = x[nt:nt + ng]
        th_full = self.bus_angles(x)[0]
        # weighted Laplacian of the network at the current angles
        ce = self.b_edge * np.cos(th_full[self.edge_i] - th_full[self.edge_j])
        L = np.zeros((n_bus, n_bus))
        np.add.at(L, (self.edge_i, self.edge_j), -ce)
        np.add.at(L, (self.edge_j, self.edge_i), -ce)
        np.add.at(L, (self.edge_i, self.edge_i), ce)
        np.add.at(L, (self.edge_j, self.edge_j), ce)
        c_int = self.b_int * np.cos(delta - th_full[self._gen_arr])
        # d omega_ref / d theta_full
        dwr = -L[self.ref_bus] / self.d_d_ref
        J = np.zeros((self.n, self.n))
        nr = self._nonref_arr
        # delta_dot rows: d/d omega_i = 1, d/d theta = -dwr
        for k in range(ng):
            J[nt + k, nt + ng + k] = 1.0
            J[nt + k, :nt] = -dwr[nr]
        # omega_dot rows
        for k, gb in enumerate(self._gen_arr):
            J[nt + ng + k, nt + ng + k] = -self.d_g[k] / self.m[k]
            J[nt + ng + k, nt + k] = -c_int[k] / self.m[k]
            J[nt + ng + k, self.theta_pos[gb]] = c_int[k] / self.m[k]
        # theta_dot rows
        th_rows = np.zeros((n_bus, self.n))
        for k, gb in enumerate(self._gen_arr):
            th_rows[gb, :nt] = -L[gb, nr] / self.eps_sp
            th_rows[gb, self.theta_pos[gb]] += -c_int[k] / self.eps_sp
            th_rows[gb, nt + k] = c_int[k] / self.eps_sp
        for k, lb in enumerate(self._load_arr):
            th_rows[lb, :nt] = -L[lb, nr] / self.d_d[k] - dwr[nr]
        J[:nt, :] = th_rows[nr, :]
        return J

    # -- equilibria -----------------------------------------------------------

    def find_equilibrium(self, guess: np.ndarray | None = None,
                         tol: float = 1e-10, max_iter: int = 100):
        """Damped Newton on f(x) = 0; returns (x, stable: bool)."""
        x = np.zeros(self.n) if guess is None else np.array(guess, dtype=np.float64)
        fx = self.vector_field(x)
        for _ in range(max_iter):
            if np.abs(fx).max() < tol:
                break
            step = np.linalg.solve(self.jacobian(x), -fx)
            alpha = 1.0
            base = np.linalg.norm(fx)
            for _ in range(40):
                x_new = x + alpha * step
                f_new = self.vector_field(x_new)
                if np.linalg.norm(f_new) < base:
                    break
                alpha *= 0.5
            else:
                raise RuntimeError("Newton line search failed to improve")
            x, fx = x_new, f_new
        else:
            raise RuntimeError("Newton did not converge")
        eigs = np.linalg.eigvals(self.jacobian(x))
        return x, bool(np.all(eigs.real < -1e-8))

    def find_type1_ueps(self, sep: np.ndarray, n_starts: int = 60,
                        seed: int = 0, t_end: float = 20.0,
                        kappa: float = 1e-4, dedup_tol: float = 1e-4):
        """Multi-start Newton for UEPs on the attraction boundary of sep.

        Keeps roots with exactly one positive-real-part Jacobian eigenvalue
        whose unstable manifold reaches sep on at least one side.
        """
        rng = np.random.default_rng(seed)
        nt, ng = self.n_theta, self.n_gen
        n_ang = nt + ng
        candidates = []
        for _ in range(n_starts):
            start = sep.copy()
            start[:n_ang] += rng.uniform(-np.pi, np.pi, size=n_ang)
            try:
                x, _ = self.find_equilibrium(start)
            except RuntimeError:
                continue
            eigs, vecs = np.linalg.eig(self.jacobian(x))
            pos = np.nonzero(eigs.real > 1e-8)[0]
            if len(pos) != 1:
                continue
            v = vecs[:, pos[0]].real
            nv = np.linalg.norm(v)
            if nv == 0.0:
                continue
            candidates.append((x, v / nv))
        kept = []
        for x, v in candidates:
            if any(self._same_equilibrium(x, y, dedup_tol) for y, _ in kept):
                continue
            kept.append((x, v))
        ueps = []
        for x, v in kept:
            probes = np.stack([x + kappa * v, x - kappa * v])
            res = ode.integrate_batch(self.vector_field, probes, t_end)
            if any(f == ode.FLAG_CONVERGED
                   and np.abs(xf - sep).max() < 1e-2
                   for f, xf in zip(res.flags, res.x)):
                ueps.append(x)
        return ueps

    def _same_equilibrium(self, a: np.ndarray, b: np.ndarray, tol: float) -> bool:
        n_ang = self.n_theta + self.n_gen
        d = a - b
        wrapped = np.angle(np.exp(1j * d[:n_ang]))
        if np.abs(wrapped).max() > tol:
            return False
        return np.abs(d[n_ang:]).max() <= tol

    # -- trajectories ---------------------------------------------------------

    def integrate(self, x0: np.ndarray, t_end: float, rtol: float = 1e-6,
                  atol: float = 1e-8) -> Trajectory:
        ts, xs, flag = ode.integrate(self.vector_field, np.asarray(x0, float),
                                     t_end, rtol=rtol, atol=atol)
        return Trajectory(ts, xs, flag)

    def converges_to(self, x0: np.ndarray, target: np.ndarray,
                     t_end: float = 20.0, tol: float = 1e-2) -> bool:
        res = ode.integrate_batch(self.vector_field,
                                  np.atleast_2d(np.asarray(x0, float)), t_end)
        return (res.flags[0] == ode.FLAG_CONVERGED
                and np.abs(res.x[0] - target).max() < tol)

    def converges_batch(self, X0: np.ndarray, target: np.ndarray,
                        t_end: float = 20.0, tol: float = 1e-2) -> np.ndarray:
        res = ode.integrate_batch(self.vector_field, X0, t_end)
        ok = np.array([f == ode.FLAG_CONVERGED for f in res.flags])
        ok &= np.abs(res.x - target[None, :]).max(axis=1) < tol
        return ok

    def sample_boundary_states(self, sep: np.ndarray, count: int, seed: int = 0,
                               t_end: float = 20.0, rel_tol: float = 1e-3,
                               scale_cap: float = 10.0,
                               max_batches: int = 50) -> np.ndarray:
        """Near-boundary states inside the region of attraction of sep.

        Ray bisection per random unit direction; returns states at 0.98 of
        the bisected boundary scale, each re-verified to converge to sep.
        Directions stable out to scale_cap are discarded and resampled.
        """
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(max_batches):
            if len(out) >= count:
                break
            need = count - len(out)
            dirs = rng.normal(size=(need, self.n))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            ok = self.converges_batch(sep + scale_cap * dirs, sep, t_end)
            dirs = dirs[~ok]
            if dirs.shape[0] == 0:
                continue
            lo = np.zeros(dirs.shape[0])
            hi = np.full(dirs.shape[0], scale_cap)
            while np.max((hi - lo) / hi) > rel_tol:
                mid = 0.5 * (lo + hi)
                conv = self.converges_batch(sep + mid[:, None] * dirs, sep, t_end)
                lo = np.where(conv, mid, lo)
                hi = np.where(conv, hi, mid)
            cand = sep + (0.98 * lo)[:, None] * dirs
            good = self.converges_batch(cand, sep, t_end)
            good &= lo > 0.0
            out.extend(cand[good])
        if len(out) < count:
            raise RuntimeError(f"boundary sampling stalled at {len(out)}/{count}")
        return np.stack(out[:count])

    # -- faults ---------------------------------------------------------------

    def faulted_copy(self, faulted_bus: int) -> "SwingSystem":
        """System during a bolted three-phase fault at one bus: every incident
        susceptance (internal b for a faulted Gen bus, all b_ij) set to zero."""
        p = self.params.copy()
        if faulted_bus in p.bus and "b" in p.bus[faulted_bus]:
            p.bus[faulted_bus]["b"] = 0.0
        for e in self.topology.edges:
            if faulted_bus in e:
                p.edge[e]["b"] = 0.0
        return SwingSystem(self.topology, p, self.eps_sp)


@dataclass
class FaultScenario:
    faulted_bus: int
    t_on: float
    t_clear: float

    def __post_init__(self):
        if not 0.0 <= self.t_on < self.t_clear:
            raise ValueError("need 0 <= t_on < t_clear")


def simulate_fault(system: SwingSystem, scenario: FaultScenario, x0: np.ndarray,
                   t_end: float = 20.0, rtol: float = 1e-6,
                   atol: float = 1e-8) -> Trajectory:
    """Pre-fault, during-fault, and post-fault phases, concatenated."""
    res = simulate_faults_batch(system, [scenario], np.atleast_2d(x0),
                                t_end, rtol, atol)
    return res[0]


def simulate_faults_batch(system: SwingSystem, scenarios: list[FaultScenario],
                          X0: np.ndarray, t_end: float = 20.0,
                          rtol: float = 1e-6, atol: float = 1e-8) -> list[Trajectory]:
    """Batched fault simulation; scenarios sharing a faulted bus share the
    during-fault vector field, and the post-fault phase runs as one batch."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    if X0.shape[0] == 1 and len(scenarios) > 1:
        X0 = np.repeat(X0, len(scenarios), axis=0)
    parts: list[list] = [[] for _ in scenarios]
    post_x0 = np.empty_like(X0)
    post_flags = [None] * len(scenarios)
    # pre-fault phase per distinct t_on
    for t_on in sorted({s.t_on for s in scenarios}):
        idx = [k for k, s in enumerate(scenarios) if s.t_on == t_on]
        if t_on == 0.0:
            for k in idx:
                parts[k].append((np.array([0.0]), X0[k][None, :]))
                post_flags[k] = ode.FLAG_CONVERGED
            mid = X0[idx]
        else:
            res = ode.integrate_batch(system.vector_field, X0[idx], t_on,
                                      rtol=rtol, atol=atol, dense=True)
            for pos, k in enumerate(idx):
                ts, xs = res.dense[pos]
                parts[k].append((ts, xs))
                post_flags[k] = res.flags[pos]
            mid = res.x
        # during-fault phase grouped by faulted bus
        groups = sorted({(scenarios[k].faulted_bus,
                          scenarios[k].t_clear - scenarios[k].t_on)
                         for k in idx})
        for bus, dur in groups:
            sub = [k for k in idx
                   if scenarios[k].faulted_bus == bus
                   and scenarios[k].t_clear - scenarios[k].t_on == dur]
            fsys = system.faulted_copy(bus)
            r = ode.integrate_batch(fsys.vector_field,
                                    mid[[idx.index(k) for k in sub]],
                                    dur, rtol=rtol, atol=atol, dense=True)
            for pos, k in enumerate(sub):
                ts, xs = r.dense[pos]
                parts[k].append((ts + scenarios[k].t_on, xs))
                post_x0[k] = r.x[pos]
                if r.flags[pos] != ode.FLAG_CONVERGED:
                    post_flags[k] = r.flags[pos]
    # post-fault phase: one batch over every scenario still healthy
    alive = [k for k in range(len(scenarios))
             if post_flags[k] == ode.FLAG_CONVERGED
             and scenarios[k].t_clear < t_end]
    for span in sorted({t_end - scenarios[k].t_clear for k in alive}):
        sub = [k for k in alive if t_end - scenarios[k].t_clear == span]
        res = ode.integrate_batch(system.vector_field, post_x0[sub], span,
                                  rtol=rtol, atol=atol, dense=True)
        for pos, k in enumerate(sub):
            ts, xs = res.dense[pos]
            parts[k].append((ts + scenarios[k].t_clear, xs))
            post_flags[k] = res.flags[pos]
    out = []
    for k in range(len(scenarios)):
        segs_t, segs_x = [], []
        t_prev = -np.inf
        for ts, xs in parts[k]:
            keep = ts > t_prev + 1e-15
            segs_t.append(ts[keep])
            segs_x.append(xs[keep])
            if len(segs_t[-1]):
                t_prev = segs_t[-1][-1]
        out.append(Trajectory(np.concatenate(segs_t), np.concatenate(segs_x),
                              post_flags[k]))
    return out
