"""Sample-augmented iterative training of the neural energy function.

The scheme loops train -> verify -> validate -> augment: minibatch Adam on the
weighted loss (1 - w2) L1 + w2 L2, fresh-sample verification of the decrease
conditions per structure, validation on held-out topologies, and training-set
growth from counterexamples or new structures.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import checkpoint, energy, grid, nn, swing

ANALYTIC_BINDINGS = {
    "1": "0.5*m*omega**2 - b*cos(delta - theta) - p_g*delta",
    "2": "p_d*theta",
    "e": "-b_e*cos(theta_i - theta_j)",
}


@dataclass
class EfTrainConfig:
    """Scheme knobs, desk-scale by default.

    Paper-scale values (table1()) are eta1=10, eta2=20, eta3=50, eta4=2e4,
    eta5=10, eta6=50, eta7=100, eta8=1e8, eta10=20, batch 51200; they are
    impractical on one core and exist for configuration completeness.
    """

    phi: float = 1e-2
    phi_prime: float = 1e-5
    eps_tol: float = 1e-3
    eta1: int = 3             # distinct small structure sizes
    eta2: int = 4             # structures per small size
    eta3: int = 2             # medium structures
    eta4: int = 2000          # samples per structure
    eta5: int = 3             # conservativeness (s, rho) pairs
    eta6: int = 4             # held-out small structures
    eta7: int = 2             # held-out large structures
    eta8: int = 100_000       # fresh samples per structure for verify/validate
    eta9: int = 99            # neighbors added per counterexample
    eta10: int = 1            # medium structures added on validation failure
    small_sizes: tuple = (5, 6, 7)
    medium_sizes: tuple = (20, 25)
    large_size: int = 60
    batch: int = 2560
    epochs_cap: int = 400
    lr: float = 1e-3
    lr_factor: float = 0.7
    lr_interval: int = 50
    w2_init: float = 0.5
    w2_factor: float = 0.98
    w2_interval: int = 1
    n_boundary: int = 100
    uep_starts: int = 200
    neighbor_radius: float = 0.02
    max_rounds: int = 8
    max_kept_counterexamples: int = 200   # per structure, per sweep

    def __post_init__(self):
        if min(self.phi, self.phi_prime, self.eps_tol) <= 0:
            raise ValueError("phi, phi_prime and eps_tol must be positive")
        if len(self.small_sizes) != self.eta1:
            raise ValueError("small_sizes must list eta1 sizes")
        if len(self.medium_sizes) != self.eta3:
            raise ValueError("medium_sizes must list eta3 sizes")

    @classmethod
    def table1(cls) -> "EfTrainConfig":
        return cls(eta1=10, eta2=20, eta3=50, eta4=20_000, eta5=10, eta6=50,
                   eta7=100, eta8=100_000_000, eta10=20,
                   small_sizes=tuple(range(4, 14)),
                   medium_sizes=tuple(range(20, 70)), large_size=200,
                   batch=51_200)


@dataclass
class EfStructure:
    """One training topology with its growing sample set."""

    topology: grid.Topology
    plan: energy.StructurePlan
    X: np.ndarray             # (N, n) states
    P: np.ndarray             # (N, n_par) packed parameters
    scale: str                # "small" or "medium"

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


@dataclass
class EfTrainingSet:
    structures: list
    cases: list               # ConservativenessCase entries, frozen

    @property
    def total_samples(self) -> int:
        return sum(st.n_samples for st in self.structures)


@dataclass
class Counterexample:
    structure: int
    x: np.ndarray
    p: np.ndarray


@dataclass
class SweepResult:
    """Outcome of one verification or validation sweep."""

    counterexamples: list
    total_found: int
    samples_checked: int

    @property
    def passed(self) -> bool:
        return self.total_found == 0


def _int_seeds(seed, count: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def _new_structure(size: int, scale: str, cfg: EfTrainConfig, seed) -> EfStructure:
    s_topo, s_samp = _int_seeds(seed, 2)
    topo = grid.generate_topology(size, grid.TRANSMISSION, s_topo)
    plan = energy.StructurePlan(topo)
    rng = np.random.default_rng(s_samp)
    X = plan.sample_states(cfg.eta4, rng)
    P = plan.sample_params(grid.TRANSMISSION_DOMAIN, cfg.eta4, rng)
    return EfStructure(topo, plan, X, P, scale)


def build_training_set(cfg: EfTrainConfig, seed) -> EfTrainingSet:
    """eta1 x eta2 small structures plus eta3 medium ones, eta4 samples each,
    and the frozen conservativeness set."""
    sizes = [(s, "small") for s in cfg.small_sizes for _ in range(cfg.eta2)]
    sizes += [(s, "medium") for s in cfg.medium_sizes]
    seeds = _int_seeds(seed, len(sizes) + 1)
    structures = [_new_structure(s, scale, cfg, sd)
                  for (s, scale), sd in zip(sizes, seeds)]
    cases = build_conservativeness_set(structures, cfg, seeds[-1])
    return EfTrainingSet(structures, cases)


def build_conservativeness_set(structures: list, cfg: EfTrainConfig,
                               seed, max_draws: int = 20) -> list:
    """eta5 (structure, parameter) pairs with sep, type-1 UEPs and boundary
    states; smallest structures are used to keep the dynamics work cheap."""
    order = sorted(range(len(structures)),
                   key=lambda i: structures[i].topology.n_buses)
    picks = [order[i % len(order)] for i in range(cfg.eta5)]
    seeds = iter(_int_seeds(seed, cfg.eta5 * max_draws * 3))
    cases = []
    for s_idx in picks:
        st = structures[s_idx]
        case = None
        for _ in range(max_draws):
            s_par, s_uep, s_bnd = next(seeds), next(seeds), next(seeds)
            params = grid.sample_parameters(st.topology,
                                            grid.TRANSMISSION_DOMAIN, s_par)
            system = swing.SwingSystem(st.topology, params)
            try:
                sep, stable = system.find_equilibrium()
            except RuntimeError:
                continue
            if not stable:
                continue
            ueps = system.find_type1_ueps(sep, n_starts=cfg.uep_starts,
                                          seed=s_uep)
            if not ueps:
                continue
            try:
                boundary = system.sample_boundary_states(sep, cfg.n_boundary,
                                                         seed=s_bnd)
            except RuntimeError:
                continue
            case = energy.ConservativenessCase(st.plan,
                                               st.plan.pack_params(params),
                                               sep, np.stack(ueps), boundary)
            break
        if case is None:
            raise RuntimeError(
                f"no usable conservativeness case for structure {s_idx}")
        cases.append(case)
    return cases


# -- loss passes --------------------------------------------------------------

def _zero_grads(ef: energy.NeuralEF) -> dict:
    return {k: [np.zeros_like(p) for p in ef.nets[k].parameters()]
            for k in energy.EF_KEYS}


def _flatten_grads(grads: dict) -> list:
    return [g for k in energy.EF_KEYS for g in grads[k]]


def _subset_cache(cache: nn.ForwardCache, mask: np.ndarray) -> nn.ForwardCache:
    return nn.ForwardCache(
        cache.inputs[mask],
        [a[mask] for a in cache.pre],
        [a[mask] for a in cache.post],
        cache.tangent_inputs[mask],
        [a[mask] for a in cache.tangents],
        [a[mask] for a in cache.tangents_post],
    )


def _l1_chunk(ef: energy.NeuralEF, st: EfStructure, rows: np.ndarray,
              cfg: EfTrainConfig, grads: dict | None, weight: float) -> float:
    """Hinge-loss sum over one minibatch; accumulates d(sum)/dxi * weight."""
    plan = st.plan
    n = plan.n
    X, P = st.X[rows], st.P[rows]
    F = plan.vector_field(X, P)
    fnorm = np.linalg.norm(F, axis=1)
    lie = (plan.analytic_grad(X, P) * F).sum(1)
    C = plan.combined(X, P)
    T = plan.tangent_rows(F)
    caches = {}
    for key in energy.EF_KEYS:
        idx = plan.idx[key]
        if idx.shape[0] == 0:
            continue
        Z = C[:, idx].reshape(-1, idx.shape[1])
        U = T[:, idx].reshape(-1, idx.shape[1])
        if grads is None:
            _, tang = nn.forward_jvp(ef.nets[key], Z, U)
        else:
            _, tang, cache = nn.forward_jvp(ef.nets[key], Z, U, want_cache=True)
            caches[key] = cache
        lie += plan.row_weight[key] * tang.reshape(len(rows), -1).sum(1) / n
    h = fnorm / n >= cfg.phi
    t1 = np.maximum(0.0, lie)
    t2 = np.where(h, np.maximum(0.0, lie / n + cfg.phi_prime), 0.0)
    loss_sum = float((t1 + t2).sum())
    if grads is not None:
        alpha = (lie > 0).astype(float) + h * (lie / n + cfg.phi_prime > 0) / n
        active = alpha != 0.0
        if active.any():
            a_vals = alpha[active] * (weight / n)
            for key, cache in caches.items():
                M = plan.idx[key].shape[0]
                row_mask = np.repeat(active, M)
                d_jvp = np.repeat(a_vals, M)[:, None] * plan.row_weight[key]
                dW, db, _, _ = nn.jvp_backward(ef.nets[key],
                                               _subset_cache(cache, row_mask),
                                               None, d_jvp)
                acc = grads[key]
                for l, (dw, dbias) in enumerate(zip(dW, db)):
                    acc[2 * l] += dw
                    acc[2 * l + 1] += dbias
    return loss_sum


def _l2_cases(ef: energy.NeuralEF, cases: list, grads: dict | None,
              weight: float) -> float:
    """Mean conservativeness loss over the set M; accumulates gradients of
    (weight * mean) when requested."""
    if not cases:
        return 0.0
    total = 0.0
    for case in cases:
        plan = case.plan
        n = plan.n
        X, P, nb, nu = case.stacked()
        V = plan.analytic_value(X, P)
        C = plan.combined(X, P)
        caches = {}
        for key in energy.EF_KEYS:
            idx = plan.idx[key]
            if idx.shape[0] == 0:
                continue
            Z = C[:, idx].reshape(-1, idx.shape[1])
            if grads is None:
                out = nn.forward(ef.nets[key], Z)
            else:
                out, cache = nn.forward(ef.nets[key], Z, want_cache=True)
                caches[key] = cache
            V += plan.row_weight[key] * out.reshape(len(X), -1).sum(1) / n
        vb, vu, vs = V[:nb], V[nb:nb + nu], V[-1]
        u_arg = int(np.argmin(vu))
        num = vb - vu[u_arg]
        den = vb - vs
        ok = np.abs(den) >= case.DEGENERACY_TOL
        r = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
        total += float((r ** 2).sum() / nb)
        if grads is not None:
            d_rows = np.zeros(len(X))
            d_rows[:nb] = np.where(ok, 2.0 * r * (den - num) / np.where(ok, den ** 2, 1.0), 0.0) / nb
            d_rows[nb + u_arg] = float(np.where(ok, -2.0 * r / np.where(ok, den, 1.0), 0.0).sum()) / nb
            d_rows[-1] = float(np.where(ok, 2.0 * r * num / np.where(ok, den ** 2, 1.0), 0.0).sum()) / nb
            d_rows *= weight / (len(cases) * n)
            for key, cache in caches.items():
                M = plan.idx[key].shape[0]
                d_out = np.repeat(d_rows, M)[:, None] * plan.row_weight[key]
                dW, db, _ = nn.backward(ef.nets[key], cache, d_out)
                acc = grads[key]
                for l, (dw, dbias) in enumerate(zip(dW, db)):
                    acc[2 * l] += dw
                    acc[2 * l + 1] += dbias
    return total / len(cases)


# -- one training round -------------------------------------------------------

@dataclass
class RoundResult:
    converged: bool
    epochs: int
    metrics: list             # (epoch, L1, L2, w2, samples) rows
    final_l1: float
    final_l2: float


def train_round(ef: energy.NeuralEF, tset: EfTrainingSet, cfg: EfTrainConfig,
                opt: nn.AdamState, global_epoch: int, seed) -> RoundResult:
    """Minibatch Adam until L1 stays at zero for two consecutive epochs.

    Minibatches are stratified: every structure contributes one chunk per
    step, its hinge sum normalized by chunk size so each structure carries
    the same overall weight regardless of how augmentation skewed the counts.
    """
    params = ef.parameters()
    rng = np.random.default_rng(_int_seeds(seed, 1)[0])
    n_struct = len(tset.structures)
    chunk = max(1, cfg.batch // max(1, n_struct))
    metrics = []
    zero_run = 0
    epoch = 0
    for epoch in range(1, cfg.epochs_cap + 1):
        g_epoch = global_epoch + epoch - 1
        w2 = cfg.w2_init * cfg.w2_factor ** (g_epoch // cfg.w2_interval)
        lr = nn.step_decay_lr(cfg.lr, g_epoch, cfg.lr_factor, cfg.lr_interval)
        chunk_lists = []
        for st in tset.structures:
            order = rng.permutation(st.n_samples)
            chunk_lists.append([order[s:s + chunk]
                                for s in range(0, st.n_samples, chunk)])
        steps = max(len(cl) for cl in chunk_lists)
        l1_sums = np.zeros(n_struct)
        for k in range(steps):
            grads = _zero_grads(ef)
            for s_idx, (st, chunks) in enumerate(zip(tset.structures,
                                                     chunk_lists)):
                rows = chunks[k % len(chunks)]
                w = (1.0 - w2) / (n_struct * len(rows))
                loss_sum = _l1_chunk(ef, st, rows, cfg, grads, w)
                if k < len(chunks):
                    l1_sums[s_idx] += loss_sum
            _l2_cases(ef, tset.cases, grads, w2)
            nn.adam_step(opt, params, _flatten_grads(grads), lr)
        l1 = float(np.mean([l1_sums[i] / st.n_samples
                            for i, st in enumerate(tset.structures)]))
        l2 = float(np.mean([energy.loss_l2(ef, c) for c in tset.cases]))
        metrics.append((g_epoch, l1, l2, w2, tset.total_samples))
        zero_run = zero_run + 1 if l1 == 0.0 else 0
        if zero_run >= 2:
            return RoundResult(True, epoch, metrics, l1, l2)
    return RoundResult(False, epoch, metrics, metrics[-1][1], metrics[-1][2])


# -- verification and validation ----------------------------------------------

def _sweep_chunk(plan: energy.StructurePlan) -> int:
    rows = max(idx.shape[0] for idx in plan.idx.values())
    return int(np.clip(250_000 // max(rows, 1), 16, 8192))


def verify(ef: energy.NeuralEF, structures: list, count: int,
           cfg: EfTrainConfig, seed) -> SweepResult:
    """Fresh-sample check of the decrease conditions on each structure.

    A draw (x, rho) is a counterexample iff (L_fV >= eps_tol and
    ||f|| <= n phi) or (L_fV >= 0 and ||f|| >= n phi). Samples are
    regenerated every call; pass means zero counterexamples.
    """
    seeds = _int_seeds(seed, 2 * len(structures))
    kept = []
    total = 0
    checked = 0
    for s_idx, st in enumerate(structures):
        plan = st.plan
        rng_x = np.random.default_rng(seeds[2 * s_idx])
        rng_p = np.random.default_rng(seeds[2 * s_idx + 1])
        chunk = _sweep_chunk(plan)
        done = 0
        kept_here = 0
        while done < count:
            m = min(chunk * 4, count - done)
            X = plan.sample_states(m, rng_x)
            P = plan.sample_params(grid.TRANSMISSION_DOMAIN, m, rng_p)
            lie, fnorm = energy.lie_and_flow(ef, plan, X, P, chunk=chunk)
            bad = energy.counterexample_mask(lie, fnorm, plan.n, cfg.phi,
                                             cfg.eps_tol)
            total += int(bad.sum())
            for row in np.nonzero(bad)[0]:
                if kept_here >= cfg.max_kept_counterexamples:
                    break
                kept.append(Counterexample(s_idx, X[row].copy(), P[row].copy()))
                kept_here += 1
            done += m
            checked += m
    return SweepResult(kept, total, checked)


def make_validation_structures(cfg: EfTrainConfig, seed,
                               training: list) -> list:
    """eta6 small plus eta7 large held-out structures, disjoint from the
    training topologies."""
    signatures = {(st.topology.kinds, st.topology.edges) for st in training}
    sizes = [cfg.small_sizes[i % len(cfg.small_sizes)] for i in range(cfg.eta6)]
    sizes += [cfg.large_size] * cfg.eta7
    out = []
    seeds = iter(_int_seeds(seed, 100 * len(sizes)))
    for size in sizes:
        for _ in range(100):
            topo = grid.generate_topology(size, grid.TRANSMISSION, next(seeds))
            sig = (topo.kinds, topo.edges)
            if sig not in signatures:
                signatures.add(sig)
                plan = energy.StructurePlan(topo)
                out.append(EfStructure(topo, plan, np.empty((0, plan.n)),
                                       np.empty((0, plan.n_par)), "validation"))
                break
        else:
            raise RuntimeError("could not draw a disjoint validation topology")
    return out


def validate(ef: energy.NeuralEF, val_structures: list, cfg: EfTrainConfig,
             seed) -> SweepResult:
    """Verification predicate over the held-out structures, eta8 samples
    each. Counterexamples are reported only; they never enter training."""
    return verify(ef, val_structures, cfg.eta8, cfg, seed)


# -- augmentation -------------------------------------------------------------

def augment_with_counterexamples(tset: EfTrainingSet, ces: list,
                                 cfg: EfTrainConfig, seed) -> int:
    """Add each counterexample and eta9 perturbed neighbors to its
    structure's sample set. Returns the number of samples added."""
    seeds = iter(_int_seeds(seed, 2 * len(ces)))
    added = 0
    for ce in ces:
        st = tset.structures[ce.structure]
        plan = st.plan
        rng = np.random.default_rng(next(seeds))
        lo = np.array([energy.ANGLE_BOX[0]] * (plan.n_theta + plan.n_gen)
                      + [energy.OMEGA_BOX[0]] * plan.n_gen)
        hi = np.array([energy.ANGLE_BOX[1]] * (plan.n_theta + plan.n_gen)
                      + [energy.OMEGA_BOX[1]] * plan.n_gen)
        Xn = ce.x + rng.uniform(-cfg.neighbor_radius, cfg.neighbor_radius,
                                size=(cfg.eta9, plan.n)) * (hi - lo)
        Xn = np.clip(Xn, lo, hi)
        base = plan.unpack_params(ce.p)
        neighbors = grid.perturb_parameters(base, st.topology,
                                            grid.TRANSMISSION_DOMAIN,
                                            cfg.neighbor_radius, cfg.eta9,
                                            next(seeds))
        Pn = np.stack([plan.pack_params(ps) for ps in neighbors])
        st.X = np.vstack([st.X, ce.x[None, :], Xn])
        st.P = np.vstack([st.P, ce.p[None, :], Pn])
        added += 1 + cfg.eta9
    return added


def augment_with_growth(tset: EfTrainingSet, cfg: EfTrainConfig, seed) -> int:
    """After a failed validation: eta2 new small structures one bus larger
    than the current largest small one, and eta10 medium structures at the
    next eta10 sizes. Returns the number of structures added."""
    n_as = max(st.topology.n_buses for st in tset.structures
               if st.scale == "small")
    n_am = max(st.topology.n_buses for st in tset.structures
               if st.scale == "medium")
    plans = [(n_as + 1, "small")] * cfg.eta2
    plans += [(n_am + 1 + i, "medium") for i in range(cfg.eta10)]
    seeds = _int_seeds(seed, len(plans))
    for (size, scale), sd in zip(plans, seeds):
        tset.structures.append(_new_structure(size, scale, cfg, sd))
    return len(plans)


# -- the full scheme ----------------------------------------------------------

@dataclass
class SchemeResult:
    converged: bool
    rounds: list              # per-round record dicts
    ef: energy.NeuralEF
    tset: EfTrainingSet
    global_epochs: int


def _write_metrics(path, metrics: list) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,L1,L2,w2,samples\n")
        for epoch, l1, l2, w2, samples in metrics:
            fh.write(f"{epoch},{l1!r},{l2!r},{w2!r},{samples}\n")


def _write_counterexamples(path, round_idx: int, sweep: SweepResult) -> None:
    doc = {
        "round": round_idx,
        "samples_checked": sweep.samples_checked,
        "total_found": sweep.total_found,
        "counterexamples": [
            {"structure": ce.structure, "x": ce.x.tolist(), "p": ce.p.tolist()}
            for ce in sweep.counterexamples
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _write_roa(path, ef: energy.NeuralEF, case) -> None:
    plan = case.plan
    if plan.n_gen >= 2:
        axes = (plan.n_theta, plan.n_theta + 1)
    else:
        axes = (0, plan.n_theta)
    lo, hi = energy.ANGLE_BOX
    section = energy.CrossSection(axes[0], axes[1], lo, hi, lo, hi)
    level = float(energy.evaluate(ef, plan, case.ueps,
                                  np.repeat(case.P[None, :],
                                            len(case.ueps), axis=0)).min())

    def value_fn(X):
        return energy.evaluate(ef, plan, X,
                               np.repeat(case.P[None, :], len(X), axis=0))

    mask, _, _ = energy.estimate_roa(value_fn, case.sep, level, section)
    energy.save_roa_csv(path, mask, section)


def run_ef_scheme(cfg: EfTrainConfig, seed, out_dir=None,
                  ef: energy.NeuralEF | None = None,
                  with_validation: bool = True,
                  progress=None) -> SchemeResult:
    """Run the iterative scheme to convergence or the round cap.

    Per-round artifacts (checkpoint.json, metrics.csv, counterexamples.json,
    roa_mask.csv) land under out_dir/round_<k> when out_dir is given.
    """
    s_set, s_ef, s_val, s_loop = _int_seeds(seed, 4)
    say = progress if progress is not None else lambda msg: None
    tset = build_training_set(cfg, s_set)
    say(f"training set ready: {len(tset.structures)} structures, "
        f"{tset.total_samples} samples, {len(tset.cases)} conservativeness cases")
    if ef is None:
        ef = energy.make_neural_ef(s_ef)
    opt = nn.adam_init(ef.parameters())
    val_structures = None
    rounds = []
    global_epoch = 0
    converged = False
    loop_seeds = iter(_int_seeds(s_loop, 4 * cfg.max_rounds))
    for round_idx in range(1, cfg.max_rounds + 1):
        res = train_round(ef, tset, cfg, opt, global_epoch,
                          next(loop_seeds))
        global_epoch += res.epochs
        record = {"round": round_idx, "epochs": res.epochs,
                  "train_converged": res.converged,
                  "L1": res.final_l1, "L2": res.final_l2}
        say(f"round {round_idx}: {res.epochs} epochs, L1={res.final_l1:.3e}, "
            f"L2={res.final_l2:.3e}, converged={res.converged}")
        round_dir = None
        if out_dir is not None:
            round_dir = os.path.join(out_dir, f"round_{round_idx}")
            os.makedirs(round_dir, exist_ok=True)
            checkpoint.save_checkpoint(
                os.path.join(round_dir, "checkpoint.json"),
                checkpoint.KIND_EF, ef.nets, ANALYTIC_BINDINGS,
                {"root_seed": int(seed) if np.isscalar(seed) else None,
                 "round": round_idx, "global_epoch": global_epoch})
            _write_metrics(os.path.join(round_dir, "metrics.csv"), res.metrics)
            try:
                _write_roa(os.path.join(round_dir, "roa_mask.csv"), ef,
                           tset.cases[0])
            except ValueError as exc:
                record["roa_error"] = str(exc)
        verify_seed, augment_seed = next(loop_seeds), next(loop_seeds)
        validate_seed = next(loop_seeds)
        if not res.converged:
            record["action"] = "train_continue"
            rounds.append(record)
            continue
        sweep = verify(ef, tset.structures, cfg.eta8, cfg, verify_seed)
        record["verify_found"] = sweep.total_found
        record["verify_checked"] = sweep.samples_checked
        say(f"round {round_idx}: verify found {sweep.total_found} "
            f"counterexamples in {sweep.samples_checked} samples")
        if round_dir is not None:
            _write_counterexamples(
                os.path.join(round_dir, "counterexamples.json"),
                round_idx, sweep)
        if not sweep.passed:
            added = augment_with_counterexamples(tset, sweep.counterexamples,
                                                 cfg, augment_seed)
            record["action"] = f"augment_samples:{added}"
            rounds.append(record)
            continue
        if not with_validation:
            record["action"] = "verified"
            rounds.append(record)
            converged = True
            break
        if val_structures is None:
            val_structures = make_validation_structures(cfg, s_val,
                                                        tset.structures)
        vsweep = validate(ef, val_structures, cfg, validate_seed)
        record["validate_found"] = vsweep.total_found
        record["validate_checked"] = vsweep.samples_checked
        say(f"round {round_idx}: validate found {vsweep.total_found} "
            f"counterexamples in {vsweep.samples_checked} samples")
        if vsweep.passed:
            record["action"] = "validated"
            rounds.append(record)
            converged = True
            break
        grown = augment_with_growth(tset, cfg, augment_seed)
        record["action"] = f"augment_structures:{grown}"
        rounds.append(record)
    return SchemeResult(converged, rounds, ef, tset, global_epoch)
