"""Adaptive Dormand-Prince 4(5) integration, vectorized over trajectories.

The stepper advances a whole batch of independent initial states through the
same autonomous vector field, each trajectory carrying its own time, step
size, and status. Batch stepping is what keeps region-of-attraction scans
and boundary bisection affordable in pure numpy; the control logic is the
classic embedded-pair loop (error-normed step acceptance, 0.2x..5x step
clamping, blow-up bound, step-size-floor stall detection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLAG_CONVERGED = "converged"   # reached t_end
FLAG_DIVERGED = "diverged"     # left the blow-up bound or went non-finite
FLAG_MAX_TIME = "max_time"     # step floor or step budget hit before t_end

# Dormand-Prince coefficients.
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
       187 / 2100, 1 / 40)
_ERR = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


@dataclass
class BatchResult:
    t: np.ndarray                 # (B,) final times
    x: np.ndarray                 # (B, n) final states
    flags: list[str]              # per-trajectory status
    n_steps: int                  # accepted + rejected stepper iterations
    dense: list | None = None     # per-trajectory (times, states) when requested

    @property
    def all_converged(self) -> bool:
        return all(f == FLAG_CONVERGED for f in self.flags)


def integrate_batch(f, x0: np.ndarray, t_end: float, rtol: float = 1e-6,
                    atol: float = 1e-8, max_step: float = np.inf,
                    first_step: float = 1e-3, blowup: float = 1e3,
                    min_step: float = 1e-12, max_iters: int = 2_000_000,
                    dense: bool = False) -> BatchResult:
    """Integrate dx/dt = f(x) from t=0 to t_end for every row of x0.

    f maps (B, n) to (B, n). With dense=True the accepted step points of
    every trajectory are collected (including the initial state).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    B, n = x0.shape
    x = x0.copy()
    t = np.zeros(B)
    dt = np.full(B, min(first_step, max_step, t_end))
    status = np.zeros(B, dtype=np.int8)   # 0 running, 1 converged, 2 diverged, 3 max_time
    store: list | None = None
    if dense:
        store = [([0.0], [x0[i].copy()]) for i in range(B)]
    iters = 0
    while True:
        running = status == 0
        if not running.any() or iters >= max_iters:
            break
        iters += 1
        idx = np.nonzero(running)[0]
        xr = x[idx]
        # Clamp the step so no trajectory overshoots t_end.
        h = np.minimum(dt[idx], t_end - t[idx])
        hc = h[:, None]
        k = np.empty((7, len(idx), n))
        k[0] = f(xr)
        for s in range(1, 7):
            acc = np.zeros_like(xr)
            for j, a in enumerate(_A[s]):
                if a != 0.0:
                    acc += a * k[j]
            k[s] = f(xr + hc * acc)
        x5 = xr.copy()
        for j, b in enumerate(_B5):
            if b != 0.0:
                x5 += hc * b * k[j]
        err = np.zeros_like(xr)
        for j, e in enumerate(_ERR):
            if e != 0.0:
                err += hc * e * k[j]
        scale = atol + rtol * np.maximum(np.abs(xr), np.abs(x5))
        with np.errstate(invalid="ignore", over="ignore"):
            err_norm = np.sqrt(np.mean(np.square(err / scale), axis=1))
        bad = ~np.isfinite(x5).all(axis=1) | (np.abs(x5).max(axis=1) > blowup)
        err_norm = np.where(np.isfinite(err_norm), err_norm, np.inf)
        accept = (err_norm <= 1.0) & ~bad
        # Diverged rows are final; their state stays at the last good point.
        status[idx[bad]] = 2
        acc_idx = idx[accept]
        if acc_idx.size:
            t[acc_idx] = t[acc_idx] + h[accept]
            x[acc_idx] = x5[accept]
            if dense:
                for row, xi in zip(acc_idx, x5[accept]):
                    store[row][0].append(float(t[row]))
                    store[row][1].append(xi.copy())
            status[acc_idx[t[acc_idx] >= t_end * (1.0 - 1e-14)]] = 1
        # PI-free step update: grow on accept, shrink on reject.
        with np.errstate(divide="ignore"):
            factor = 0.9 * err_norm ** -0.2
        factor = np.clip(np.where(np.isfinite(factor), factor, 0.2), 0.2, 5.0)
        new_dt = np.clip(h * factor, 0.0, max_step)
        stalled = (~accept) & (new_dt < min_step) & ~bad
        status[idx[stalled]] = 3
        dt[idx] = np.maximum(new_dt, min_step)
    status[status == 0] = 3   # ran out of iterations
    names = {1: FLAG_CONVERGED, 2: FLAG_DIVERGED, 3: FLAG_MAX_TIME}
    flags = [names[int(s)] for s in status]
    dense_out = None
    if dense:
        dense_out = [(np.array(ts), np.array(xs)) for ts, xs in store]
    return BatchResult(t, x, flags, iters, dense_out)


def integrate(f, x0: np.ndarray, t_end: float, **kw):
    """Single-trajectory convenience wrapper: returns (times, states, flag)."""
    res = integrate_batch(f, x0[None, :], t_end, dense=True, **kw)
    ts, xs = res.dense[0]
    return ts, xs, res.flags[0]
