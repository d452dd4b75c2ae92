"""Lindblad master equation on a block-diagonal density matrix.

The density matrix is kept as one dense block per photon-number sector;
coherences between sectors are never generated from sector-diagonal
initial states and are not stored. Three propagators share one generator:

``expm``
    dense exponential of the assembled superoperator (small spaces);
``chebyshev``
    Chebyshev-Bessel expansion of ``exp(tL)`` driven by the block
    matvec kernel (large or stiff spaces);
``rk45``
    adaptive Dormand-Prince 5(4) on the vectorised density matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.special import jv

from . import kernels
from .model import FockSpace, ModelParams, SparseOperator, build_hamiltonian, build_lowering_map

log = logging.getLogger(__name__)

__all__ = [
    "DensityMatrix",
    "Channel",
    "JumpSet",
    "LindbladGenerator",
    "MasterResult",
    "PositivityError",
    "StepSizeError",
    "lindblad_rhs",
    "evolve_master",
    "coherence_element",
    "hamiltonian_blocks",
    "state_vector",
]

EXPM_MAX_DIM = 1600


class PositivityError(RuntimeError):
    """Smallest eigenvalue of the evolved density matrix fell below tolerance."""


class StepSizeError(RuntimeError):
    """Adaptive step size underflowed."""


class DensityMatrix:
    """Block-diagonal density matrix over a :class:`FockSpace`."""

    def __init__(self, space: FockSpace, blocks):
        blocks = [np.asarray(b, dtype=complex) for b in blocks]
        if len(blocks) != len(space.sectors):
            raise ValueError("need one block per sector")
        for b, basis in zip(blocks, space.sectors):
            if b.shape != (len(basis), len(basis)):
                raise ValueError(f"block shape {b.shape} does not match {basis!r}")
        self.space = space
        self.blocks = blocks

    @classmethod
    def from_state(cls, space: FockSpace, amplitudes: dict) -> DensityMatrix:
        """Pure state from ``{fock_state: amplitude}``; all states must share one sector."""
        psi = state_vector(space, amplitudes)
        return cls.from_vector(space, psi)

    @classmethod
    def from_vector(cls, space: FockSpace, psi: np.ndarray) -> DensityMatrix:
        psi = np.asarray(psi, dtype=complex)
        if psi.shape != (space.dim,):
            raise ValueError("state vector has the wrong length")
        blocks = []
        occupied = []
        for k, b in enumerate(space.sectors):
            part = psi[space.offsets[k]:space.offsets[k + 1]]
            if np.any(part):
                occupied.append(b.N)
            blocks.append(np.outer(part, part.conj()))
        if len(occupied) > 1:
            raise ValueError(
                f"superposition across photon-number sectors {occupied} is not supported"
            )
        rho = cls(space, blocks)
        return rho / rho.trace().real

    @classmethod
    def from_dense(cls, space: FockSpace, rho: np.ndarray) -> DensityMatrix:
        o = space.offsets
        return cls(space, [rho[o[k]:o[k + 1], o[k]:o[k + 1]] for k in range(len(space))])

    @classmethod
    def from_flat(cls, space: FockSpace, y: np.ndarray) -> DensityMatrix:
        blocks, pos = [], 0
        for b in space.sectors:
            d = len(b)
            blocks.append(y[pos:pos + d * d].reshape(d, d).copy())
            pos += d * d
        return cls(space, blocks)

    def flatten(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks])

    def __truediv__(self, x) -> DensityMatrix:
        return DensityMatrix(self.space, [b / x for b in self.blocks])

    def to_dense(self) -> np.ndarray:
        return la.block_diag(*self.blocks)

    def trace(self) -> complex:
        return complex(sum(np.trace(b) for b in self.blocks))

    def purity(self) -> float:
        return float(sum(np.vdot(b, b).real for b in self.blocks))

    def hermiticity_error(self) -> float:
        return max(float(np.abs(b - b.conj().T).max()) for b in self.blocks)

    def min_eigenvalue(self) -> float:
        return min(float(la.eigvalsh(0.5 * (b + b.conj().T))[0]) for b in self.blocks)

    def diagonal(self) -> np.ndarray:
        return np.concatenate([np.diag(b).real for b in self.blocks])

    def sector_population(self, N: int) -> float:
        if not self.space.has(N):
            return 0.0
        return float(np.trace(self.blocks[self.space.position(N)]).real)

    def element(self, n, m) -> complex:
        kn, i = self.space.locate(n)
        km, j = self.space.locate(m)
        if kn != km:
            return 0j
        return complex(self.blocks[kn][i, j])


def state_vector(space: FockSpace, amplitudes: dict) -> np.ndarray:
    psi = np.zeros(space.dim, dtype=complex)
    for s, amp in amplitudes.items():
        psi[space.global_index(s)] += amp
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValueError("state has zero norm")
    return psi / nrm


def coherence_element(rho: DensityMatrix, n, m) -> complex:
    """``<n|rho|m>``; raises ``KeyError`` if a state is missing from the space."""
    return rho.element(n, m)


@dataclass(frozen=True)
class Channel:
    """One Lindblad channel: ``sqrt(rate) a_site`` or a diagonal dephasing operator."""

    kind: str
    site: int
    rate: float

    def __post_init__(self):
        if self.kind not in ("dissipation", "dephasing"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.rate < 0:
            raise ValueError("channel rates must be non-negative")


@dataclass
class JumpSet:
    """Dissipation and dephasing channels of a chain with a shared dephasing model."""

    channels: list[Channel]
    params: ModelParams

    @classmethod
    def from_params(cls, p: ModelParams) -> JumpSet:
        ch = []
        for k in range(p.L):
            if p.gamma[k] > 0:
                ch.append(Channel("dissipation", k + 1, float(p.gamma[k])))
        for k in range(p.L):
            if p.kappa[k] > 0:
                ch.append(Channel("dephasing", k + 1, float(p.kappa[k])))
        return cls(ch, p)

    @property
    def dissipation(self) -> list[Channel]:
        return [c for c in self.channels if c.kind == "dissipation"]

    @property
    def dephasing(self) -> list[Channel]:
        return [c for c in self.channels if c.kind == "dephasing"]

    def diagonal(self, c: Channel, occupations: np.ndarray) -> np.ndarray:
        """Diagonal of a dephasing jump operator (including ``sqrt(rate)``)."""
        return np.sqrt(c.rate) * self.params.dephasing.values(occupations[:, c.site - 1], c.site - 1)

    def operator(self, c: Channel, space: FockSpace, N: int) -> SparseOperator:
        """Jump operator acting on sector ``N`` of ``space``."""
        b = space.sector(N)
        if c.kind == "dephasing":
            return SparseOperator(sp.diags(self.diagonal(c, b.occupations).astype(complex)), b)
        low = build_lowering_map(c.site, b, space.sector(N - 1))
        return SparseOperator(np.sqrt(c.rate) * low.matrix, low.row_basis, low.col_basis)


def hamiltonian_blocks(p: ModelParams, space: FockSpace) -> list[SparseOperator]:
    return [build_hamiltonian(p, b) for b in space.sectors]


class LindbladGenerator:
    """Kernel-ready data for ``d rho/dt`` on a block-diagonal density matrix.

    The generator is split into an elementwise part ``W * rho`` (on-site
    energies, dephasing, no-jump damping), the off-diagonal hopping
    commutator, and the dissipative feed from sector ``N + 1`` into ``N``.
    """

    def __init__(self, space: FockSpace, H: list[SparseOperator], jumps: JumpSet):
        if len(H) != len(space.sectors):
            raise ValueError("need one Hamiltonian block per sector")
        for h, b in zip(H, space.sectors):
            if h.shape != (len(b), len(b)):
                raise ValueError(f"Hamiltonian block {h.shape} does not match {b!r}")
        self.space = space
        self.H = H
        self.jumps = jumps
        dims = np.array([len(b) for b in space.sectors], dtype=np.int64)
        self.dims = dims
        self.boff = np.concatenate([[0], np.cumsum(dims * dims)]).astype(np.int64)
        self.soff = np.asarray(space.offsets, dtype=np.int64)
        self.size = int(self.boff[-1])
        occ = space.occupations
        D = space.dim

        energies = np.concatenate([h.matrix.diagonal() for h in H])
        hoff = sp.block_diag([h.matrix for h in H], format="csr").astype(complex)
        hoff.setdiag(0)
        hoff.eliminate_zeros()
        hoff.sort_indices()
        self.hoff = hoff
        self.energies = energies

        damp = np.zeros(D)
        deph = []
        for c in jumps.channels:
            if c.kind == "dissipation":
                damp += c.rate * occ[:, c.site - 1]
            else:
                deph.append(jumps.diagonal(c, occ))
        deph = np.array(deph).reshape(len(deph), D)
        w = np.empty(self.size, dtype=complex)
        for k in range(len(dims)):
            sl = slice(self.soff[k], self.soff[k + 1])
            e = energies[sl]
            blk = -1j * (e[:, None] - e[None, :]) - 0.5 * (damp[sl][:, None] + damp[sl][None, :])
            for dv in deph:
                x = dv[sl]
                blk += x[:, None] * x[None, :].conj() - 0.5 * (np.abs(x[:, None]) ** 2 + np.abs(x[None, :]) ** 2)
            w[self.boff[k]:self.boff[k + 1]] = blk.ravel()
        self.w = w

        diss = jumps.dissipation
        self.up_block = np.full(len(dims), -1, dtype=np.int64)
        for k, b in enumerate(space.sectors):
            if diss and space.has(b.N + 1):
                self.up_block[k] = space.position(b.N + 1)
        up_idx = np.full((len(diss), D), -1, dtype=np.int32)
        up_amp = np.zeros((len(diss), D))
        for c_i, c in enumerate(diss):
            site = c.site - 1
            for k, b in enumerate(space.sectors):
                ku = self.up_block[k]
                if ku < 0:
                    continue
                bu = space.sectors[ku]
                for i, s in enumerate(b.states):
                    t = list(s)
                    t[site] += 1
                    j = bu.index.get(tuple(t))
                    if j is None:
                        continue
                    up_idx[c_i, self.soff[k] + i] = self.soff[ku] + j
                    up_amp[c_i, self.soff[k] + i] = np.sqrt(c.rate * t[site])
        self.up_idx = up_idx
        self.up_amp = up_amp
        self.damping = damp
        self._superop = None

    @classmethod
    def from_params(cls, p: ModelParams, space: FockSpace) -> LindbladGenerator:
        return cls(space, hamiltonian_blocks(p, space), JumpSet.from_params(p))

    def kernel_args(self):
        h = self.hoff
        return (
            self.boff, self.soff, self.dims, self.up_block,
            h.indptr.astype(np.int32), h.indices.astype(np.int32), h.data,
            self.w, self.up_idx, self.up_amp,
        )

    def apply_flat(self, y: np.ndarray, backend=None) -> np.ndarray:
        backend = backend or kernels.backend
        out = np.empty_like(y)
        backend.lindblad_apply(y, out, *self.kernel_args())
        return out

    def apply(self, rho: DensityMatrix) -> DensityMatrix:
        if rho.space is not self.space and rho.space.Ns != self.space.Ns:
            raise ValueError("density matrix lives on a different space")
        return DensityMatrix.from_flat(self.space, self.apply_flat(rho.flatten()))

    def superoperator(self) -> sp.csr_matrix:
        """Assembled sparse superoperator acting on row-major vectorised blocks."""
        if self._superop is not None:
            return self._superop
        space = self.space
        nb = len(space.sectors)
        grid = [[None] * nb for _ in range(nb)]
        for k, b in enumerate(space.sectors):
            d = len(b)
            hk = self.hoff[self.soff[k]:self.soff[k + 1], self.soff[k]:self.soff[k + 1]]
            eye = sp.identity(d, format="csr")
            blk = sp.diags(self.w[self.boff[k]:self.boff[k + 1]])
            blk = blk - 1j * (sp.kron(hk, eye) - sp.kron(eye, hk.T))
            grid[k][k] = blk
            ku = self.up_block[k]
            if ku >= 0:
                feed = None
                for c in self.jumps.dissipation:
                    a = self.jumps.operator(c, space, b.N + 1).matrix
                    term = sp.kron(a, a.conj())
                    feed = term if feed is None else feed + term
                grid[k][ku] = feed
        self._superop = sp.bmat(grid, format="csr")
        return self._superop

    def spectral_bounds(self) -> tuple[float, float, float]:
        """(imaginary half-width, real centre, real half-width) enclosing the spectrum."""
        spread = 0.0
        for h in self.H:
            ev = la.eigvalsh(h.toarray()) if h.shape[0] else np.zeros(1)
            spread = max(spread, float(ev[-1] - ev[0]))
        decay = float(np.max(-self.w.real)) if self.size else 0.0
        feed = float(np.max(np.sum(self.up_amp ** 2, axis=0))) if self.up_amp.size else 0.0
        width = decay + feed
        return spread * 1.01 + width + 1e-9, -0.5 * decay, 0.5 * width + 1e-12


def lindblad_rhs(rho: DensityMatrix, H, jumps: JumpSet) -> DensityMatrix:
    """Time derivative of ``rho`` under the Lindblad master equation.

    ``H`` is one Hamiltonian block per sector, or a single block when the
    space has one sector.
    """
    if isinstance(H, SparseOperator):
        H = [H]
    return LindbladGenerator(rho.space, H, jumps).apply(rho)


@dataclass
class MasterResult:
    times: np.ndarray
    states: list[DensityMatrix] | None
    values: dict = field(default_factory=dict)
    method: str = ""
    min_eigenvalue: float = 0.0
    max_trace_error: float = 0.0


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dopri_interval(f, y, t0, t1, h, rtol, atol, k1):
    """Advance ``y`` from ``t0`` to exactly ``t1``; returns (y, next h, last slope)."""
    t = t0
    while t < t1:
        if t1 - t <= 1e-14 * max(abs(t1), 1.0):
            break
        h_try = min(h, t1 - t)
        if h_try < 1e-14 * max(abs(t), 1.0):
            raise StepSizeError(f"step size underflow at t={t:.6g}")
        ks = [k1]
        for i in range(1, 7):
            yi = y.copy()
            for j, a in enumerate(_A[i]):
                if a:
                    yi += (h_try * a) * ks[j]
            ks.append(f(yi))
        y_new = yi  # stage 7 is evaluated at the 5th-order solution (FSAL)
        err = np.zeros_like(y)
        for j, e in enumerate(_E):
            if e:
                err += (h_try * e) * ks[j]
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(over="ignore"):  # an overflowing norm just rejects the step
            en = float(np.sqrt(np.mean((np.abs(err) / scale) ** 2))) if y.size else 0.0
        if en <= 1.0:
            t = t1 if h_try == t1 - t else t + h_try
            y = y_new
            k1 = ks[6]
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            if h_try < h and fac > 1:
                fac = 1.0  # step was clipped to the grid; keep the controller's h
            h = h_try * fac if h_try >= h else h
        else:
            h = h_try * max(0.2, 0.9 * en ** -0.2)
    return y, h, k1


def _chebyshev_coefficients(x: float, tol: float = 1e-15) -> np.ndarray:
    # exp(i x z) = sum_k eps_k i^k J_k(x) T_k(z); truncate once |J_k| stays below tol
    kmax = int(abs(x) + 10 * abs(x) ** (1 / 3) + 30)
    k = np.arange(kmax + 1)
    c = jv(k, x) * (1j ** k)
    c[1:] *= 2
    big = np.nonzero(np.abs(c) > tol)[0]
    return c[: big[-1] + 1] if big.size else c[:1]


def evolve_master(
    rho0: DensityMatrix,
    t_grid,
    H: list[SparseOperator] | None = None,
    jumps: JumpSet | None = None,
    *,
    generator: LindbladGenerator | None = None,
    method: str = "auto",
    rtol: float = 1e-8,
    atol: float = 1e-10,
    observe=None,
    store_states: bool = True,
    positivity_tol: float = 1e-6,
    backend=None,
) -> MasterResult:
    """Integrate the master equation and sample it on ``t_grid`` (us, starting at 0).

    ``observe(rho) -> dict`` is evaluated at every grid time; values are
    stacked into ``result.values``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or t_grid[0] != 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must start at 0 and increase strictly")
    gen = generator or LindbladGenerator(rho0.space, H, jumps)
    if rho0.space.Ns != gen.space.Ns:
        raise ValueError("initial state and generator use different spaces")
    backend = backend or kernels.backend
    if method == "auto":
        method = "expm" if gen.size <= EXPM_MAX_DIM else "chebyshev"
    if method not in ("expm", "chebyshev", "rk45"):
        raise ValueError(f"unknown method {method!r}")

    space = gen.space
    y = rho0.flatten()
    states, rows = [], []
    worst_eig, worst_trace = np.inf, 0.0

    def emit(t, y):
        nonlocal worst_eig, worst_trace
        rho = DensityMatrix.from_flat(space, y)
        lam = rho.min_eigenvalue()
        worst_eig = min(worst_eig, lam)
        worst_trace = max(worst_trace, abs(rho.trace() - 1.0))
        if lam < -positivity_tol:
            raise PositivityError(
                f"density matrix lost positivity at t={t:.6g} us: smallest eigenvalue {lam:.3e}"
            )
        if store_states:
            states.append(rho)
        if observe is not None:
            rows.append(observe(rho))

    emit(0.0, y)
    if method == "expm":
        L = gen.superoperator().toarray()
        cache = {}
        for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
            dt = round(t1 - t0, 12)
            if dt not in cache:
                cache[dt] = la.expm(L * (t1 - t0))
            y = cache[dt] @ y
            emit(t1, y)
    elif method == "chebyshev":
        R, centre, _ = gen.spectral_bounds()
        args = gen.kernel_args()
        max_arg = 120.0
        for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
            n_sub = max(1, int(np.ceil((t1 - t0) * R / max_arg)))
            h = (t1 - t0) / n_sub
            coef = _chebyshev_coefficients(R * h) * np.exp(centre * h)
            for _ in range(n_sub):
                y = backend.chebyshev_propagate(y, coef, centre, R, *args)
            emit(t1, y)
    else:
        def f(v):
            out = np.empty_like(v)
            backend.lindblad_apply(v, out, *gen.kernel_args())
            return out

        k1 = f(y)
        R, _, _ = gen.spectral_bounds()
        h = min(1.0 / R, t_grid[-1]) if R > 0 else t_grid[-1]
        for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
            y, h, k1 = _dopri_interval(f, y, t0, t1, h, rtol, atol, k1)
            emit(t1, y)

    values = {}
    if rows:
        for key in rows[0]:
            values[key] = np.array([r[key] for r in rows])
    return MasterResult(
        times=t_grid,
        states=states if store_states else None,
        values=values,
        method=method,
        min_eigenvalue=worst_eig,
        max_trace_error=worst_trace,
    )
