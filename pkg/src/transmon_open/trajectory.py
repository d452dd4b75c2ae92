"""Quantum-jump unraveling of the master equation.

Between jumps a state evolves under ``H_NJ = H - (i/2) sum_c L_c^dag L_c``.
For every channel used here ``L_c^dag L_c`` is diagonal in the Fock basis,
so ``H_NJ`` is a Hermitian matrix plus a diagonal damping. Each sector's
``H_NJ`` is diagonalised once; the norm ``|psi(t)|^2`` is then available in
closed form, and jump times are found to ``|psi|^2 - r`` below ``1e-10``
with a safeguarded Newton iteration.

Random numbers come from a Philox generator keyed by
``(master_seed, trajectory index)``. Ensembles therefore do not depend on
how trajectories are scheduled over threads.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from . import kernels
from .liouville import Channel, JumpSet, hamiltonian_blocks
from .model import FockSpace, ModelParams, SectorBasis, SparseOperator, build_hamiltonian
from .observables import ObservableRequest, diagonal_weights

log = logging.getLogger(__name__)

__all__ = [
    "PropagatorError",
    "RandomStream",
    "TrajectoryState",
    "TrajectoryRecord",
    "EnsembleResult",
    "no_jump_hamiltonian",
    "no_jump_step",
    "sample_jump",
    "apply_jump",
    "TrajectoryEngine",
    "run_trajectory",
    "run_ensemble",
]

ROOT_TOL = 1e-10
DENSE_MAX_DIM = 2000


class PropagatorError(RuntimeError):
    """The no-jump propagator could not be built or applied accurately."""


class RandomStream:
    """Uniform draws in ``[0, 1)`` for one trajectory.

    The generator is Philox seeded by ``SeedSequence(master_seed,
    spawn_key=(index,))``; draws are buffered 64 at a time.
    """

    def __init__(self, master_seed: int, index: int, buffer: int = 64):
        ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
        self._gen = np.random.Generator(np.random.Philox(ss))
        self._size = buffer
        self._buf = self._gen.random(buffer)
        self._pos = 0

    def next(self) -> float:
        if self._pos == self._size:
            self._buf = self._gen.random(self._size)
            self._pos = 0
        x = float(self._buf[self._pos])
        self._pos += 1
        return x

    def random(self) -> float:
        return self.next()


@dataclass
class TrajectoryState:
    psi: np.ndarray
    current_N: int
    jump_log: list = field(default_factory=list)


def no_jump_hamiltonian(p: ModelParams, basis: SectorBasis) -> SparseOperator:
    """``H - (i/2) sum_l (gamma_l n_l + d_l^dag d_l)`` on one sector."""
    H = build_hamiltonian(p, basis)
    damp = _damping(JumpSet.from_params(p), basis.occupations)
    return SparseOperator(H.matrix - 0.5j * sp.diags(damp), basis)


def _damping(jumps: JumpSet, occ: np.ndarray) -> np.ndarray:
    damp = np.zeros(len(occ))
    for c in jumps.channels:
        if c.kind == "dissipation":
            damp += c.rate * occ[:, c.site - 1]
        else:
            damp += np.abs(jumps.diagonal(c, occ)) ** 2
    return damp


def _dense_propagate(H: np.ndarray, psi: np.ndarray, tau: float) -> np.ndarray:
    # eigenbasis propagation keeps the norm accurate for long steps of a stiff H
    lam, V = la.eig(H)
    if np.linalg.cond(V) < 1e8:
        return V @ (np.exp(-1j * lam * tau) * la.solve(V, psi))
    return la.expm(-1j * tau * H) @ psi


def no_jump_step(psi: np.ndarray, H_nj: SparseOperator | np.ndarray, tau: float):
    """Propagate ``psi`` by ``exp(-i H_NJ tau)``; returns ``(psi_unnormalised, survival)``."""
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-8:
        raise ValueError("no_jump_step needs a normalised state")
    m = H_nj.matrix if isinstance(H_nj, SparseOperator) else H_nj
    if m.shape[0] <= DENSE_MAX_DIM:
        out = _dense_propagate(m.toarray() if sp.issparse(m) else np.asarray(m), psi, tau)
    else:
        out = expm_multiply(-1j * tau * sp.csr_matrix(m), psi)
    if not np.all(np.isfinite(out)):
        raise PropagatorError(f"no-jump propagation over tau={tau} produced non-finite values")
    return out, float(np.vdot(out, out).real)


def _channel_norms(psi: np.ndarray, basis: SectorBasis, jumps: JumpSet) -> np.ndarray:
    pr = np.abs(psi) ** 2
    occ = basis.occupations
    w = []
    for c in jumps.channels:
        if c.kind == "dissipation":
            w.append(c.rate * float(pr @ occ[:, c.site - 1]))
        else:
            w.append(float(pr @ np.abs(jumps.diagonal(c, occ)) ** 2))
    return np.array(w)


def sample_jump(psi: np.ndarray, basis: SectorBasis, jumps: JumpSet, rng) -> Channel:
    """Draw a channel with probability proportional to ``<psi|L^dag L|psi>``."""
    w = _channel_norms(psi, basis, jumps)
    total = w.sum()
    if not total > 0:
        raise RuntimeError("no channel has a positive jump rate")
    u = rng.random() * total
    k = int(np.searchsorted(np.cumsum(w), u, side="right"))
    k = min(k, len(w) - 1)
    while w[k] == 0:
        k -= 1
    return jumps.channels[k]


def apply_jump(psi: np.ndarray, operator: SparseOperator) -> np.ndarray:
    """``L psi / |L psi|``, expressed on the operator's row basis."""
    out = operator.matrix @ np.asarray(psi, dtype=complex)
    nrm = np.linalg.norm(out)
    if nrm == 0:
        raise RuntimeError("jump operator annihilates the state")
    return out / nrm


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    probabilities: np.ndarray  # (n_t, D) Fock-basis probabilities on the engine's space
    sector: np.ndarray  # photon number at each time
    jump_log: list  # (t_us, kind, site)


class TrajectoryEngine:
    """Per-sector no-jump eigensystems and jump tables shared by all trajectories."""

    def __init__(self, params: ModelParams, space: FockSpace, backend=None):
        self.params = params
        self.space = space
        self.jumps = JumpSet.from_params(params)
        self.backend = backend or kernels.backend
        channels = self.jumps.channels
        if any(c.kind == "dissipation" for c in channels):
            missing = [n for n in range(min(space.Ns)) if not space.has(n)]
            if min(space.Ns) > 0 or missing:
                raise ValueError("dissipation needs every sector from 0 up to the initial N")
        self.ch_kind = np.array([0 if c.kind == "dephasing" else 1 for c in channels], dtype=np.int64)
        self.sectors = []
        for k, (basis, H) in enumerate(zip(space.sectors, hamiltonian_blocks(params, space))):
            self.sectors.append(self._sector_data(k, basis, H))

    def _sector_data(self, k, basis: SectorBasis, H: SparseOperator):
        occ = basis.occupations
        d = len(basis)
        gam = _damping(self.jumps, occ)
        Hd = H.toarray()
        if np.all(gam == gam[0]):
            # uniform damping: H_NJ is Hermitian up to a scalar shift
            ev, V = la.eigh(Hd)
            lam = ev - 0.5j * gam[0]
            Vinv = V.conj().T
        else:
            lam, V = la.eig(Hd - 0.5j * np.diag(gam))
            try:
                Vinv = la.inv(V)
            except la.LinAlgError as exc:
                raise PropagatorError(f"no-jump eigenbasis of sector N={basis.N} is singular") from exc
            cond = np.linalg.cond(V)
            resid = np.abs(V @ np.diag(lam) @ Vinv - (Hd - 0.5j * np.diag(gam))).max()
            scale = max(np.abs(Hd).max(), gam.max(), 1.0)
            if cond > 1e8 or resid > 1e-10 * scale * d:
                raise PropagatorError(
                    f"no-jump eigenbasis of sector N={basis.N} is ill-conditioned "
                    f"(cond={cond:.2e}, residual={resid:.2e})"
                )
        n_ch = len(self.jumps.channels)
        ch_w = np.zeros((n_ch, d))
        ch_amp = np.zeros((n_ch, d), dtype=complex)
        ch_tgt = np.full((n_ch, d), -1, dtype=np.int64)
        down = self.space.position(basis.N - 1) if self.space.has(basis.N - 1) else -1
        low = self.space.sectors[down] if down >= 0 else None
        for c_i, c in enumerate(self.jumps.channels):
            if c.kind == "dephasing":
                dv = self.jumps.diagonal(c, occ)
                ch_amp[c_i] = dv
                ch_w[c_i] = np.abs(dv) ** 2
                ch_tgt[c_i] = np.arange(d)
            else:
                n = occ[:, c.site - 1]
                ch_amp[c_i] = np.sqrt(c.rate * n)
                ch_w[c_i] = c.rate * n
                if low is not None:
                    for i, s in enumerate(basis.states):
                        if s[c.site - 1] > 0:
                            t = list(s)
                            t[c.site - 1] -= 1
                            ch_tgt[c_i, i] = low.index[tuple(t)]
        return (
            np.ascontiguousarray(V, dtype=complex),
            np.ascontiguousarray(Vinv, dtype=complex),
            np.ascontiguousarray(lam, dtype=complex),
            np.ascontiguousarray(gam, dtype=float),
            ch_w, ch_amp, ch_tgt, int(down), int(self.space.offsets[k]),
        )

    def start(self, psi0) -> tuple[int, np.ndarray]:
        """Split a global-space state into (sector position, local amplitudes)."""
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.shape != (self.space.dim,):
            raise ValueError("initial state has the wrong length")
        nz = [k for k in range(len(self.space)) if np.any(psi0[self.space.offsets[k]:self.space.offsets[k + 1]])]
        if len(nz) != 1:
            raise ValueError("initial state must lie in exactly one photon-number sector")
        k = nz[0]
        local = psi0[self.space.offsets[k]:self.space.offsets[k + 1]]
        return k, local / np.linalg.norm(local)

    def run(self, psi0, t_grid, master_seed: int, index: int = 0) -> TrajectoryRecord:
        k0, local = self.start(psi0)
        t_grid = np.ascontiguousarray(t_grid, dtype=float)
        stream = RandomStream(master_seed, index)
        prob, where, raw = self.backend.run_trajectory(
            self.sectors, self.ch_kind, k0, local, t_grid, stream, ROOT_TOL, self.space.dim
        )
        Ns = np.asarray(self.space.Ns)
        chans = self.jumps.channels
        log_ = [(t, chans[c].kind, chans[c].site) for t, c, _ in raw]
        return TrajectoryRecord(t_grid, prob, Ns[where], log_)


def run_trajectory(psi0, t_grid, params: ModelParams, seed: int, *, space: FockSpace | None = None,
                   index: int = 0, backend=None) -> TrajectoryRecord:
    """One trajectory from ``psi0`` (a vector on ``space``)."""
    if space is None:
        raise ValueError("run_trajectory needs the Fock space psi0 lives on")
    return TrajectoryEngine(params, space, backend).run(psi0, t_grid, seed, index)


@dataclass
class EnsembleResult:
    times: np.ndarray
    names: list[str]
    mean: np.ndarray  # (n_t, n_obs); NaN where a postselected sample is empty
    stderr: np.ndarray
    n_traj: int
    master_seed: int
    postselect: int | None = None
    counts: np.ndarray | None = None  # contributing trajectories per time
    mean_jumps: np.ndarray | None = None  # mean cumulative jump count per time
    jump_logs: list | None = None

    @property
    def surviving_fraction(self) -> np.ndarray:
        return self.counts / self.n_traj

    def column(self, name: str) -> np.ndarray:
        return self.mean[:, self.names.index(name)]

    def error(self, name: str) -> np.ndarray:
        return self.stderr[:, self.names.index(name)]


def _resolve_threads(threads: int) -> int:
    return (os.cpu_count() or 1) if threads == 0 else max(1, threads)


def run_ensemble(
    psi0,
    t_grid,
    params: ModelParams,
    n_traj: int,
    master_seed: int,
    *,
    space: FockSpace,
    postselect: int | None = None,
    observables: ObservableRequest | None = None,
    threads: int = 1,
    keep_jump_logs: bool = False,
    chunk: int = 256,
    backend=None,
    engine: TrajectoryEngine | None = None,
) -> EnsembleResult:
    """Average diagonal observables over ``n_traj`` trajectories.

    Sums are accumulated in trajectory-index order, so results are
    identical for any thread count. With ``postselect = N0`` only
    trajectories currently in sector ``N0`` contribute at each time.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    request = observables or ObservableRequest.default(space.L)
    W = diagonal_weights(space, request)
    engine = engine or TrajectoryEngine(params, space, backend)
    n_t, n_obs = len(t_grid), W.shape[1]
    s1 = np.zeros((n_t, n_obs))
    s2 = np.zeros((n_t, n_obs))
    cnt = np.zeros(n_t, dtype=np.int64)
    jumps_acc = np.zeros(n_t)
    logs = [] if keep_jump_logs else None
    workers = _resolve_threads(threads)

    def one(i):
        rec = engine.run(psi0, t_grid, master_seed, i)
        vals = rec.probabilities @ W
        times = np.array([e[0] for e in rec.jump_log])
        njumps = np.searchsorted(times, t_grid, side="right") if times.size else np.zeros(n_t)
        return vals, rec.sector, njumps, rec.jump_log

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, n_traj, chunk):
            idx = range(start, min(start + chunk, n_traj))
            results = list(pool.map(one, idx)) if pool else [one(i) for i in idx]
            for vals, sector, njumps, jl in results:
                mask = np.ones(n_t, dtype=bool) if postselect is None else sector == postselect
                v = np.where(mask[:, None], vals, 0.0)
                s1 += v
                s2 += v * v
                cnt += mask
                jumps_acc += njumps
                if logs is not None:
                    logs.append(jl)
    finally:
        if pool:
            pool.shutdown()

    with np.errstate(invalid="ignore", divide="ignore"):
        c = cnt[:, None].astype(float)
        mean = np.where(c > 0, s1 / np.maximum(c, 1), np.nan)
        var = np.where(c > 1, (s2 - c * mean ** 2) / np.maximum(c - 1, 1), np.nan)
        stderr = np.sqrt(np.maximum(var, 0.0) / np.maximum(c, 1))
        stderr = np.where(c > 1, stderr, np.nan)
    return EnsembleResult(
        times=t_grid,
        names=request.names,
        mean=mean,
        stderr=stderr,
        n_traj=n_traj,
        master_seed=int(master_seed),
        postselect=postselect,
        counts=cnt,
        mean_jumps=jumps_acc / n_traj,
        jump_logs=logs,
    )
