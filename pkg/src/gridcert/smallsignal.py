"""Microgrid small-signal model: pencil assembly and spectral stability.

Each bus carries the deviation state [theta, omega, v]. Inverter buses have
full first-order dynamics (E block = I3), frequency/voltage-sensitive load
buses are algebraic except for the angle row (E block = e1 e1^T). Stability
is judged by the largest real part among the finite generalized eigenvalues
of det(lambda E - A) = 0, after deflating the single structural zero that
uniform angle shifts produce.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import grid

OMEGA_BASE_DEFAULT = 100.0 * np.pi   # rad/s, 50 Hz class constant

BETA_TOL = 1e-10      # |beta| below this marks an infinite eigenvalue
ZERO_TOL = 1e-7       # modulus bound for the structural zero mode


def line_admittance(R: float, X: float) -> tuple[float, float]:
    """(G, B) of a series R+jX line as used by the pencil blocks."""
    d = R * R + X * X
    return R / d, -X / d


@dataclass
class StabilityVerdict:
    lambda_max: float
    finite_count: int
    deflated_zero: bool
    stable: bool


class MicrogridSystem:
    """Pencil (E, A) for one (topology, params) and its stability verdict."""

    def __init__(self, topology: grid.Topology, params: grid.ParamSet,
                 omega_b: float = OMEGA_BASE_DEFAULT):
        if topology.system_class != grid.MICROGRID:
            raise ValueError("MicrogridSystem requires a microgrid topology")
        self.topology = topology
        self.params = params
        self.omega_b = float(omega_b)
        self.inverters = topology.buses_of_kind(grid.INVERTER)
        self.loads = topology.buses_of_kind(grid.LOAD)
        self.n_bus = len(topology.kinds)
        self.dim = 3 * self.n_bus

    def _bus_block(self, i: int) -> np.ndarray:
        p = self.params.bus[i]
        if self.topology.kinds[i] == grid.INVERTER:
            return np.array([[0.0, self.omega_b, 0.0],
                             [0.0, -1.0 / p["tau_p"], 0.0],
                             [0.0, 0.0, -1.0 / p["tau_q"]]])
        return np.array([[0.0, self.omega_b, 0.0],
                         [0.0, -p["S_pf"], -p["S_pv"]],
                         [0.0, -p["S_qf"], -p["S_qv"]]])

    def _coupling_block(self, i: int, G: float, B: float) -> np.ndarray:
        """3x6 coupling on the rows of bus i; first 3 columns refer to bus i,
        last 3 to the neighbor."""
        blk = np.zeros((3, 6))
        if self.topology.kinds[i] == grid.INVERTER:
            p = self.params.bus[i]
            cp = p["K_p"] / p["tau_p"]
            cq = p["K_q"] / p["tau_q"]
        else:
            cp = cq = 1.0
        blk[1] = cp * np.array([B, 0.0, -G, -B, 0.0, G])
        blk[2] = cq * np.array([G, 0.0, B, -G, 0.0, -B])
        return blk

    def assemble(self) -> tuple[np.ndarray, np.ndarray]:
        E = np.zeros((self.dim, self.dim))
        A = np.zeros((self.dim, self.dim))
        for i in range(self.n_bus):
            s = 3 * i
            if self.topology.kinds[i] == grid.INVERTER:
                E[s:s + 3, s:s + 3] = np.eye(3)
            else:
                E[s, s] = 1.0
            A[s:s + 3, s:s + 3] += self._bus_block(i)
        for (a, b) in self.topology.edges:
            G, B = line_admittance(**self.params.edge[(a, b)])
            for i, j in ((a, b), (b, a)):
                blk = self._coupling_block(i, G, B)
                A[3 * i:3 * i + 3, 3 * i:3 * i + 3] += blk[:, :3]
                A[3 * i:3 * i + 3, 3 * j:3 * j + 3] += blk[:, 3:]
        return E, A

    def verdict(self) -> StabilityVerdict:
        E, A = self.assemble()
        return lambda_max(E, A)

    def is_stable(self) -> bool:
        return self.verdict().stable


def lambda_max(E: np.ndarray, A: np.ndarray) -> StabilityVerdict:
    """Largest finite generalized eigenvalue real part of det(lambda E - A).

    Infinite eigenvalues (unit-normalized |beta| < 1e-10) are discarded; one
    structural zero (smallest modulus, if below 1e-7) is deflated and flagged.
    """
    alpha, beta = scipy.linalg.eig(A, E, right=False, homogeneous_eigvals=True)
    norms = np.hypot(np.abs(alpha), np.abs(beta))
    if np.any(norms < 1e-300):
        raise ValueError("singular pencil: indeterminate eigenvalue")
    alpha = alpha / norms
    beta = beta / norms
    finite = np.abs(beta) >= BETA_TOL
    lam = alpha[finite] / beta[finite]
    if lam.size == 0:
        raise ValueError("pencil has no finite eigenvalues")
    finite_count = int(lam.size)
    deflated = False
    k = int(np.argmin(np.abs(lam)))
    if np.abs(lam[k]) < ZERO_TOL:
        lam = np.delete(lam, k)
        deflated = True
    if lam.size == 0:
        raise ValueError("spectrum empty after zero deflation")
    lmax = float(lam.real.max())
    return StabilityVerdict(lmax, finite_count, deflated, lmax < 0.0)


def dump_pencil(E: np.ndarray, A: np.ndarray, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    np.savetxt(os.path.join(out_dir, "E.csv"), E, delimiter=",")
    np.savetxt(os.path.join(out_dir, "A.csv"), A, delimiter=",")
