"""Neural energy function for the transmission class.

The candidate V(x) averages per-subsystem network outputs over nine subsystem
types (generator, load, reference, branch, and five bus-pair types); the
generator, load, and branch networks run in parallel with closed-form
analytic terms so that zeroed networks reduce V to the classical energy
function. Bus-pair member sets are full ordered Cartesian products, so V is
permutation-invariant by construction.

Evaluation, state gradients, and flow derivatives are batched through index
plans: each sample row is [state | packed parameters | 0], subsystem inputs
are gathers from that row, and state gradients return through per-type
scatter matrices. The flow derivative L_f V uses forward-mode tangents
(tangent = gathered vector field), which is what makes training on the decrease
condition affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid, nn

EF_KEYS = ("1", "2", "3", "e", "1-1", "2-2", "1-2", "1-3", "2-3")
HYBRID_KEYS = ("1", "2", "e")
EF_HIDDEN_MULT = (8, 8, 16)
_UNARY_DIMS = {"1": 7, "2": 3, "3": 2}

ANGLE_BOX = (-2.0 * np.pi, 2.0 * np.pi)
OMEGA_BOX = (-0.2, 0.2)


def ef_input_dim(key: str) -> int:
    if key == "e":
        return 3
    if "-" in key:
        a, b = key.split("-")
        return _UNARY_DIMS[a] + _UNARY_DIMS[b]
    return _UNARY_DIMS[key]


def ef_layer_dims(key: str) -> tuple[int, ...]:
    d = ef_input_dim(key)
    return (d,) + tuple(m * d for m in EF_HIDDEN_MULT) + (1,)


@dataclass
class NeuralEF:
    """One shared network per subsystem type; keys 1, 2, e are hybrids whose
    analytic terms live in the evaluation routines, not in the weights."""

    nets: dict

    def __post_init__(self):
        if set(self.nets) != set(EF_KEYS):
            raise ValueError("neural EF needs exactly the nine subsystem nets")

    def parameters(self) -> list[np.ndarray]:
        out = []
        for k in EF_KEYS:
            out.extend(self.nets[k].parameters())
        return out


def make_neural_ef(seed: int = 0) -> NeuralEF:
    children = np.random.SeedSequence(seed).spawn(len(EF_KEYS))
    return NeuralEF({k: nn.init_mlp(ef_layer_dims(k), "silu", s)
                     for k, s in zip(EF_KEYS, children)})


def zero_neural_ef() -> NeuralEF:
    ef = make_neural_ef(0)
    for p in ef.parameters():
        p[...] = 0.0
    return ef


class StructurePlan:
    """Index plans tying one topology's subsystems to batched sample rows.

    A sample row is C = [x | packed params | 0]; every subsystem input vector
    is C[plan_indices]. Parameter packing order: per-generator (m, d_g, p_g,
    b), per non-reference load (p_d, d_d), reference (p_d, d_d), per-edge b.
    """

    def __init__(self, topology: grid.Topology, eps_sp: float = 0.01):
        if topology.system_class != grid.TRANSMISSION:
            raise ValueError("StructurePlan requires a transmission topology")
        self.topology = topology
        self.eps_sp = float(eps_sp)
        n_bus = len(topology.kinds)
        self.gen_buses = topology.buses_of_kind(grid.GEN)
        self.load_buses = topology.buses_of_kind(grid.LOAD)
        self.ref_bus = topology.buses_of_kind(grid.REFLOAD)[0]
        self.nonref = [i for i in range(n_bus) if i != self.ref_bus]
        self.n_gen = len(self.gen_buses)
        self.n_theta = len(self.nonref)
        self.n = self.n_theta + 2 * self.n_gen
        self.theta_pos = {b: k for k, b in enumerate(self.nonref)}
        ng, nl, ne = self.n_gen, len(self.load_buses), len(topology.edges)
        base = self.n
        self.c_m = base + 4 * np.arange(ng)
        self.c_dg = self.c_m + 1
        self.c_pg = self.c_m + 2
        self.c_bint = self.c_m + 3
        base += 4 * ng
        self.c_pd = base + 2 * np.arange(nl)
        self.c_dd = self.c_pd + 1
        base += 2 * nl
        self.c_pdref = base
        self.c_ddref = base + 1
        base += 2
        self.c_be = base + np.arange(ne)
        self.n_par = 4 * ng + 2 * nl + 2 + ne
        self.zero_col = self.n + self.n_par
        self.row_width = self.zero_col + 1
        self._gen_order = {b: k for k, b in enumerate(self.gen_buses)}
        self._load_order = {b: k for k, b in enumerate(self.load_buses)}
        self._edge_order = {e: k for k, e in enumerate(topology.edges)}
        self.edge_i = np.array([e[0] for e in topology.edges], dtype=int)
        self.edge_j = np.array([e[1] for e in topology.edges], dtype=int)
        inc = np.zeros((n_bus, ne))
        inc[self.edge_i, np.arange(ne)] = 1.0
        inc[self.edge_j, np.arange(ne)] = -1.0
        self._incidence = inc
        self.members = grid.enumerate_subsystems(topology)
        self.idx = {k: self._key_indices(k) for k in EF_KEYS}
        # Branch inputs are orientation-symmetrized: both directed readings of
        # each edge are evaluated at half weight, so relabeling buses cannot
        # flip the slot order and change V. Other keys already enumerate
        # ordered members exhaustively.
        self.row_weight = {k: 1.0 for k in EF_KEYS}
        if self.idx["e"].shape[0]:
            swapped = self.idx["e"][:, [1, 0, 2]]
            self.idx["e"] = np.vstack([self.idx["e"], swapped])
            self.row_weight["e"] = 0.5
        self.scat = {k: self._scatter_matrix(self.idx[k]) for k in EF_KEYS}

    # -- layout ---------------------------------------------------------------

    def _theta_col(self, bus: int) -> int:
        return self.zero_col if bus == self.ref_bus else self.theta_pos[bus]

    def _unary_layout(self, key: str, member: tuple) -> list[int]:
        if key == "1":
            i = member[0]
            k = self._gen_order[i]
            return [self.n_theta + k, self.n_theta + self.n_gen + k,
                    self._theta_col(i), int(self.c_m[k]), int(self.c_dg[k]),
                    int(self.c_pg[k]), int(self.c_bint[k])]
        if key == "2":
            i = member[0]
            k = self._load_order[i]
            return [self._theta_col(i), int(self.c_pd[k]), int(self.c_dd[k])]
        if key == "3":
            return [int(self.c_pdref), int(self.c_ddref)]
        raise KeyError(key)

    def _key_indices(self, key: str) -> np.ndarray:
        rows = []
        if key == "e":
            for (i, j) in self.members["e"]:
                rows.append([self._theta_col(i), self._theta_col(j),
                             int(self.c_be[self._edge_order[(i, j)]])])
        elif "-" in key:
            a, b = key.split("-")
            for (i, j) in self.members[key]:
                rows.append(self._unary_layout(a, (i,))
                            + self._unary_layout(b, (j,)))
        else:
            for m in self.members[key]:
                rows.append(self._unary_layout(key, m))
        if not rows:
            return np.zeros((0, ef_input_dim(key)), dtype=int)
        return np.array(rows, dtype=int)

    def _scatter_matrix(self, idx: np.ndarray) -> np.ndarray:
        M, d = idx.shape
        S = np.zeros((M * d, self.n))
        flat = idx.ravel()
        rows = np.nonzero(flat < self.n)[0]
        S[rows, flat[rows]] = 1.0
        return S

    # -- parameter packing ----------------------------------------------------

    def pack_params(self, params: grid.ParamSet) -> np.ndarray:
        P = np.empty(self.n_par)
        for k, i in enumerate(self.gen_buses):
            p = params.bus[i]
            P[self.c_m[k] - self.n] = p["m"]
            P[self.c_dg[k] - self.n] = p["d_g"]
            P[self.c_pg[k] - self.n] = p["p_g"]
            P[self.c_bint[k] - self.n] = p["b"]
        for k, i in enumerate(self.load_buses):
            p = params.bus[i]
            P[self.c_pd[k] - self.n] = p["p_d"]
            P[self.c_dd[k] - self.n] = p["d_d"]
        P[self.c_pdref - self.n] = params.bus[self.ref_bus]["p_d"]
        P[self.c_ddref - self.n] = params.bus[self.ref_bus]["d_d"]
        for e, k in self._edge_order.items():
            P[self.c_be[k] - self.n] = params.edge[e]["b"]
        return P

    def unpack_params(self, P: np.ndarray) -> grid.ParamSet:
        bus, edge = {}, {}
        for k, i in enumerate(self.gen_buses):
            bus[i] = {"m": float(P[self.c_m[k] - self.n]),
                      "d_g": float(P[self.c_dg[k] - self.n]),
                      "p_g": float(P[self.c_pg[k] - self.n]),
                      "b": float(P[self.c_bint[k] - self.n])}
        for k, i in enumerate(self.load_buses):
            bus[i] = {"p_d": float(P[self.c_pd[k] - self.n]),
                      "d_d": float(P[self.c_dd[k] - self.n])}
        bus[self.ref_bus] = {"p_d": float(P[self.c_pdref - self.n]),
                             "d_d": float(P[self.c_ddref - self.n])}
        for e, k in self._edge_order.items():
            edge[e] = {"b": float(P[self.c_be[k] - self.n])}
        return grid.ParamSet(bus=bus, edge=edge)

    # -- sampling -------------------------------------------------------------

    def sample_states(self, count: int, rng: np.random.Generator) -> np.ndarray:
        X = np.empty((count, self.n))
        n_ang = self.n_theta + self.n_gen
        X[:, :n_ang] = rng.uniform(*ANGLE_BOX, size=(count, n_ang))
        X[:, n_ang:] = rng.uniform(*OMEGA_BOX, size=(count, self.n_gen))
        return X

    def sample_params(self, domain: grid.ParameterDomain, count: int,
                      rng: np.random.Generator, max_passes: int = 1000) -> np.ndarray:
        """Vectorized analog of grid.sample_parameters in packed form."""
        cols = {}
        gk = grid.GEN
        for name, c in (("m", self.c_m), ("d_g", self.c_dg),
                        ("p_g", self.c_pg), ("b", self.c_bint)):
            cols.update({int(ci): domain.bus[gk][name] for ci in c})
        for name, c in (("p_d", self.c_pd), ("d_d", self.c_dd)):
            cols.update({int(ci): domain.bus[grid.LOAD][name] for ci in c})
        cols[int(self.c_pdref)] = domain.bus[grid.REFLOAD]["p_d"]
        cols[int(self.c_ddref)] = domain.bus[grid.REFLOAD]["d_d"]
        for ci in self.c_be:
            cols[int(ci)] = domain.edge["b"]
        pd_cols = np.concatenate([self.c_pd, [self.c_pdref]]) - self.n
        pg_cols = self.c_pg - self.n
        lo_pd, hi_pd = domain.bus[grid.LOAD]["p_d"]
        out = np.empty((0, self.n_par))
        for _ in range(max_passes):
            if out.shape[0] >= count:
                break
            need = count - out.shape[0]
            P = np.empty((need, self.n_par))
            for ci, (lo, hi) in cols.items():
                P[:, ci - self.n] = rng.uniform(lo, hi, size=need)
            if domain.imbalance is not None:
                target = rng.uniform(*domain.imbalance, size=need)
                imb = P[:, pd_cols].sum(1) - P[:, pg_cols].sum(1)
                P[:, pd_cols] += ((target - imb) / len(pd_cols))[:, None]
                ok = ((P[:, pd_cols] >= lo_pd) & (P[:, pd_cols] <= hi_pd)).all(1)
                P = P[ok]
            out = np.vstack([out, P])
        if out.shape[0] < count:
            raise RuntimeError("parameter sampling rejection cap reached")
        return out[:count]

    # -- batched dynamics (per-row parameters) --------------------------------

    def _angles(self, X: np.ndarray) -> np.ndarray:
        th = np.zeros((X.shape[0], len(self.topology.kinds)))
        th[:, np.array(self.nonref, dtype=int)] = X[:, :self.n_theta]
        return th

    def _flow_sums(self, th: np.ndarray, P: np.ndarray):
        b_e = P[:, self.c_be - self.n]
        flows = b_e * np.sin(th[:, self.edge_i] - th[:, self.edge_j])
        return flows @ self._incidence.T

    def vector_field(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        """Swing dynamics with per-row packed parameters."""
        X = np.atleast_2d(X)
        P = np.atleast_2d(P)
        nt, ng = self.n_theta, self.n_gen
        delta = X[:, nt:nt + ng]
        omega = X[:, nt + ng:]
        th = self._angles(X)
        sums = self._flow_sums(th, P)
        d_ref = P[:, self.c_ddref - self.n]
        w_ref = (-P[:, self.c_pdref - self.n] - sums[:, self.ref_bus]) / d_ref
        gen_arr = np.array(self.gen_buses, dtype=int)
        load_arr = np.array(self.load_buses, dtype=int)
        m = P[:, self.c_m - self.n]
        d_g = P[:, self.c_dg - self.n]
        p_g = P[:, self.c_pg - self.n]
        b_int = P[:, self.c_bint - self.n]
        sin_int = np.sin(delta - th[:, gen_arr])
        F = np.empty_like(X)
        F[:, nt:nt + ng] = omega - w_ref[:, None]
        F[:, nt + ng:] = (p_g - d_g * omega - b_int * sin_int) / m
        th_dot = np.empty_like(th)
        th_dot[:, gen_arr] = (b_int * sin_int - sums[:, gen_arr]) / self.eps_sp
        if len(load_arr):
            p_d = P[:, self.c_pd - self.n]
            d_d = P[:, self.c_dd - self.n]
            th_dot[:, load_arr] = (-p_d - sums[:, load_arr]) / d_d - w_ref[:, None]
        F[:, :nt] = th_dot[:, np.array(self.nonref, dtype=int)]
        return F

    # -- analytic energy function ---------------------------------------------

    def analytic_value(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        """Classical energy function, per row; load potential carries the
        dissipation-consistent +p_d*theta sign."""
        X = np.atleast_2d(X)
        P = np.atleast_2d(P)
        nt, ng = self.n_theta, self.n_gen
        delta = X[:, nt:nt + ng]
        omega = X[:, nt + ng:]
        th = self._angles(X)
        gen_arr = np.array(self.gen_buses, dtype=int)
        m = P[:, self.c_m - self.n]
        p_g = P[:, self.c_pg - self.n]
        b_int = P[:, self.c_bint - self.n]
        b_e = P[:, self.c_be - self.n]
        V = (0.5 * m * omega ** 2
             - b_int * np.cos(delta - th[:, gen_arr])
             - p_g * delta).sum(1)
        V -= (b_e * np.cos(th[:, self.edge_i] - th[:, self.edge_j])).sum(1)
        if len(self.load_buses):
            p_d = P[:, self.c_pd - self.n]
            V += (p_d * th[:, np.array(self.load_buses, dtype=int)]).sum(1)
        return V

    def analytic_grad(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        P = np.atleast_2d(P)
        nt, ng = self.n_theta, self.n_gen
        delta = X[:, nt:nt + ng]
        omega = X[:, nt + ng:]
        th = self._angles(X)
        gen_arr = np.array(self.gen_buses, dtype=int)
        m = P[:, self.c_m - self.n]
        p_g = P[:, self.c_pg - self.n]
        b_int = P[:, self.c_bint - self.n]
        sin_int = np.sin(delta - th[:, gen_arr])
        b_e = P[:, self.c_be - self.n]
        G = np.empty_like(X)
        G[:, nt:nt + ng] = b_int * sin_int - p_g
        G[:, nt + ng:] = m * omega
        # bus-angle gradient of the branch potential: sum_j b_ij sin(th_i-th_j)
        flows = b_e * np.sin(th[:, self.edge_i] - th[:, self.edge_j])
        th_grad = flows @ self._incidence.T
        th_grad[:, gen_arr] -= b_int * sin_int
        if len(self.load_buses):
            p_d = P[:, self.c_pd - self.n]
            th_grad[:, np.array(self.load_buses, dtype=int)] += p_d
        G[:, :nt] = th_grad[:, np.array(self.nonref, dtype=int)]
        return G

    # -- sample-row assembly --------------------------------------------------

    def combined(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        P = np.atleast_2d(P)
        C = np.zeros((X.shape[0], self.row_width))
        C[:, :self.n] = X
        C[:, self.n:self.n + self.n_par] = P
        return C

    def tangent_rows(self, F: np.ndarray) -> np.ndarray:
        """Tangent in row coordinates: parameters and the zero slot are
        constants along the flow."""
        T = np.zeros((F.shape[0], self.row_width))
        T[:, :self.n] = F
        return T


def evaluate(ef: NeuralEF, plan: StructurePlan, X: np.ndarray, P: np.ndarray,
             chunk: int = 4096) -> np.ndarray:
    """V(x; rho) for each sample row."""
    X = np.atleast_2d(X)
    P = np.atleast_2d(P)
    B = X.shape[0]
    V = plan.analytic_value(X, P)
    for s in range(0, B, chunk):
        e = min(B, s + chunk)
        C = plan.combined(X[s:e], P[s:e])
        acc = np.zeros(e - s)
        for key in EF_KEYS:
            idx = plan.idx[key]
            if idx.shape[0] == 0:
                continue
            Z = C[:, idx].reshape(-1, idx.shape[1])
            out = nn.forward(ef.nets[key], Z).reshape(e - s, -1).sum(1)
            acc += plan.row_weight[key] * out
        V[s:e] += acc / plan.n
    return V


def value_and_grad(ef: NeuralEF, plan: StructurePlan, X: np.ndarray,
                   P: np.ndarray, chunk: int = 4096):
    """(V, dV/dx) per sample row."""
    X = np.atleast_2d(X)
    P = np.atleast_2d(P)
    B = X.shape[0]
    V = plan.analytic_value(X, P)
    G = plan.analytic_grad(X, P)
    for s in range(0, B, chunk):
        e = min(B, s + chunk)
        C = plan.combined(X[s:e], P[s:e])
        accv = np.zeros(e - s)
        accg = np.zeros((e - s, plan.n))
        for key in EF_KEYS:
            idx = plan.idx[key]
            if idx.shape[0] == 0:
                continue
            M, d = idx.shape
            Z = C[:, idx].reshape(-1, d)
            w = plan.row_weight[key]
            out, cache = nn.forward(ef.nets[key], Z, want_cache=True)
            accv += w * out.reshape(e - s, M).sum(1)
            d_out = np.ones((Z.shape[0], 1))
            _, _, dZ = nn.backward(ef.nets[key], cache, d_out)
            accg += w * (dZ.reshape(e - s, M * d) @ plan.scat[key])
        V[s:e] += accv / plan.n
        G[s:e] += accg / plan.n
    return V, G


def lie_and_flow(ef: NeuralEF, plan: StructurePlan, X: np.ndarray,
                 P: np.ndarray, chunk: int = 4096):
    """(L_f V, ||f||_2) per sample row, via forward-mode tangents."""
    X = np.atleast_2d(X)
    P = np.atleast_2d(P)
    B = X.shape[0]
    F = plan.vector_field(X, P)
    fnorm = np.linalg.norm(F, axis=1)
    lie = (plan.analytic_grad(X, P) * F).sum(1)
    for s in range(0, B, chunk):
        e = min(B, s + chunk)
        C = plan.combined(X[s:e], P[s:e])
        T = plan.tangent_rows(F[s:e])
        acc = np.zeros(e - s)
        for key in EF_KEYS:
            idx = plan.idx[key]
            if idx.shape[0] == 0:
                continue
            M, d = idx.shape
            Z = C[:, idx].reshape(-1, d)
            U = T[:, idx].reshape(-1, d)
            _, tang = nn.forward_jvp(ef.nets[key], Z, U)
            acc += plan.row_weight[key] * tang.reshape(e - s, M).sum(1)
        lie[s:e] += acc / plan.n
    return lie, fnorm


def counterexample_mask(lie: np.ndarray, fnorm: np.ndarray, n: int,
                        phi: float, eps_tol: float) -> np.ndarray:
    """Sampling relaxation of the verification predicate: a sample violates
    the EF conditions iff (L_fV >= eps and ||f|| <= n phi) or
    (L_fV >= 0 and ||f|| >= n phi)."""
    near = fnorm <= n * phi
    far = fnorm >= n * phi
    return (near & (lie >= eps_tol)) | (far & (lie >= 0.0))


def loss_l1(ef: NeuralEF, plan: StructurePlan, X: np.ndarray, P: np.ndarray,
            phi: float, phi_prime: float) -> float:
    """Decrease-condition violation, normalized by sample count."""
    lie, fnorm = lie_and_flow(ef, plan, X, P)
    h = (fnorm / plan.n >= phi).astype(float)
    terms = np.maximum(0.0, lie) + h * np.maximum(0.0, lie / plan.n + phi_prime)
    return float(terms.sum() / len(terms))


@dataclass
class ConservativenessCase:
    """One (structure, parameter) member of the conservativeness set M."""

    plan: StructurePlan
    P: np.ndarray              # (n_par,) fixed parameter vector
    sep: np.ndarray            # (n,)
    ueps: np.ndarray           # (U, n), U >= 1
    boundary: np.ndarray       # (|X_b|, n)

    DEGENERACY_TOL = 1e-8

    def stacked(self):
        nb, nu = len(self.boundary), len(self.ueps)
        X = np.vstack([self.boundary, self.ueps, self.sep[None, :]])
        P = np.repeat(self.P[None, :], nb + nu + 1, axis=0)
        return X, P, nb, nu


def loss_l2(ef: NeuralEF, case: ConservativenessCase) -> float:
    X, P, nb, nu = case.stacked()
    V = evaluate(ef, case.plan, X, P)
    vb, vu, vs = V[:nb], V[nb:nb + nu], V[-1]
    den = vb - vs
    ok = np.abs(den) >= case.DEGENERACY_TOL
    ratio = np.zeros(nb)
    ratio[ok] = (vb[ok] - vu.min()) / den[ok]
    return float((ratio ** 2).sum() / nb)


# -- region of attraction -----------------------------------------------------

@dataclass
class CrossSection:
    """Two-coordinate slice through a base state."""

    axis_a: int
    axis_b: int
    lo_a: float
    hi_a: float
    lo_b: float
    hi_b: float
    res: int = 61


def estimate_roa(value_fn, base: np.ndarray, level: float,
                 section: CrossSection):
    """Sublevel-set mask {V < level} on a grid slice, restricted to the
    connected component containing the base state.

    value_fn maps (B, n) states to (B,) values. Returns (mask, av, bv).
    """
    av = np.linspace(section.lo_a, section.hi_a, section.res)
    bv = np.linspace(section.lo_b, section.hi_b, section.res)
    A, Bv = np.meshgrid(av, bv, indexing="ij")
    X = np.repeat(base[None, :], section.res ** 2, axis=0)
    X[:, section.axis_a] = A.ravel()
    X[:, section.axis_b] = Bv.ravel()
    V = value_fn(X).reshape(section.res, section.res)
    if value_fn(base[None, :])[0] >= level:
        raise ValueError("SEP above UEP level")
    inside = V < level
    ia = int(np.argmin(np.abs(av - base[section.axis_a])))
    ib = int(np.argmin(np.abs(bv - base[section.axis_b])))
    mask = np.zeros_like(inside)
    if inside[ia, ib]:
        stack = [(ia, ib)]
        mask[ia, ib] = True
        while stack:
            i, j = stack.pop()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if (0 <= a < section.res and 0 <= b < section.res
                        and inside[a, b] and not mask[a, b]):
                    mask[a, b] = True
                    stack.append((a, b))
    return mask, av, bv


def save_roa_csv(path, mask: np.ndarray, section: CrossSection) -> None:
    header = (f"axes={section.axis_a},{section.axis_b};"
              f"a=[{section.lo_a},{section.hi_a}];"
              f"b=[{section.lo_b},{section.hi_b}];res={section.res}")
    np.savetxt(path, mask.astype(int), fmt="%d", delimiter=",", header=header)
