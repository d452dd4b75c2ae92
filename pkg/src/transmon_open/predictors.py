"""Closed-form and perturbative predictions used as oracles for the numerics.

Manifold transition rates are second order in ``J/U`` and first order in
the dephasing rates. For manifolds ``a != b`` of one sector the directed
rate is

    Gamma_ab = 1/Tr(Pi_a) sum_{n in a, m in b} sum_l kappa_l (n_l - m_l)^2
               |<n|H_J|m>|^2 / (U (a - b))^2

which equals ``sum_l kappa_l Tr(Pi_a C_l Pi_b C_l^dag) / (U (a-b))^2 / Tr Pi_a``
with ``C_l = [H_J, n_l]``. Both routes are implemented and cross-checked.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial, sqrt

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .model import (
    ModelParams,
    SectorBasis,
    SparseOperator,
    build_hopping,
    build_number_op,
)

__all__ = [
    "PopulationSeries",
    "RateMatrix",
    "EffectiveFrequencies",
    "sector_populations",
    "dissipative_decoherence_rate",
    "dephasing_decoherence_rate",
    "manifold_rate_general",
    "manifold_rate_closed",
    "closed_form_labels",
    "closed_form_validity",
    "rate_matrix",
    "solve_rate_equations",
    "effective_frequencies",
    "perturbed_stack_state",
    "CLOSED_FORMS",
]


@dataclass
class PopulationSeries:
    times: np.ndarray
    labels: list[int]
    values: np.ndarray  # (n_t, n_labels)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times), len(self.labels)):
            raise ValueError("values must be (n_times, n_labels)")

    def column(self, label: int) -> np.ndarray:
        return self.values[:, self.labels.index(label)]

    def as_dict(self) -> dict[int, np.ndarray]:
        return {a: self.values[:, i] for i, a in enumerate(self.labels)}


def sector_populations(N_max: int, gamma: float, t_grid) -> PopulationSeries:
    """Binomial sector populations under uniform dissipation from an ``N_max`` state."""
    if N_max < 0 or gamma < 0:
        raise ValueError("N_max and gamma must be non-negative")
    t = np.asarray(t_grid, dtype=float)
    s = np.exp(-gamma * t)
    q = -np.expm1(-gamma * t)
    vals = np.column_stack([comb(N_max, N) * s ** N * q ** (N_max - N) for N in range(N_max + 1)])
    return PopulationSeries(t, list(range(N_max + 1)), vals)


def _pair(n, m):
    n = np.asarray(n, dtype=float)
    m = np.asarray(m, dtype=float)
    if n.shape != m.shape:
        raise ValueError("states must have the same number of sites")
    return n, m


def dissipative_decoherence_rate(n, m, gamma) -> float:
    """``1/2 sum_l gamma_l (n_l + m_l)``."""
    n, m = _pair(n, m)
    g = np.broadcast_to(np.asarray(gamma, dtype=float), n.shape)
    return 0.5 * float(g @ (n + m))


def dephasing_decoherence_rate(n, m, kappa) -> float:
    """``1/2 sum_l kappa_l (n_l - m_l)^2``."""
    n, m = _pair(n, m)
    k = np.broadcast_to(np.asarray(kappa, dtype=float), n.shape)
    return 0.5 * float(k @ (n - m) ** 2)


def _uniform_U(U) -> float:
    u = np.atleast_1d(np.asarray(U, dtype=float))
    if np.any(u <= 0):
        raise ValueError("U must be positive for the perturbative rates")
    if np.ptp(u) > 1e-12 * abs(u[0]):
        raise ValueError("manifold rates assume a uniform anharmonicity U")
    return float(u[0])


def manifold_rate_general(a: int, b: int, basis: SectorBasis, H_J: SparseOperator, kappa, U,
                          route: str = "pairs") -> float:
    """Directed dephasing-induced rate from manifold ``a`` to ``b`` (1/us).

    An empty target manifold gives zero; an empty source is an error.

    ``route="pairs"`` sums explicitly over connected Fock pairs;
    ``route="trace"`` evaluates the projector trace with ``[H_J, n_l]``.
    """
    if a == b:
        raise ValueError("manifold rate needs a != b")
    Uv = _uniform_U(U)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (basis.L,))
    labels = basis.labels
    in_a = labels == a
    in_b = labels == b
    if not in_a.any():
        raise ValueError(f"manifold {a} is empty in {basis!r}")
    if not in_b.any():
        return 0.0  # nothing to transition into
    dim_a = int(in_a.sum())
    denom = (Uv * (a - b)) ** 2
    if route == "pairs":
        m = H_J.matrix.tocoo()
        occ = basis.occupations
        total = 0.0
        for i, j, v in zip(m.row, m.col, m.data):
            if in_a[i] and in_b[j] and v != 0:
                dn = occ[i] - occ[j]
                total += float(kappa @ dn ** 2) * abs(v) ** 2
        return total / denom / dim_a
    if route == "trace":
        Pa = sp.diags(in_a.astype(float))
        Pb = sp.diags(in_b.astype(float))
        total = 0.0
        for site in range(1, basis.L + 1):
            if kappa[site - 1] == 0:
                continue
            nl = build_number_op(site, basis).matrix
            C = H_J.matrix @ nl - nl @ H_J.matrix
            total += kappa[site - 1] * float((Pa @ C @ Pb @ C.conj().T).diagonal().sum().real)
        return total / denom / dim_a
    raise ValueError(f"unknown route {route!r}")


def closed_form_labels(kind: str, N: int) -> tuple[int, int]:
    """(from, to) manifold labels of a closed-form rate in sector ``N``."""
    a1 = -N * (N - 1) // 2
    b1 = -(N - 1) * (N - 2) // 2
    b3 = -(N - 2) * (N - 3) // 2
    table = {
        "stack_down": (a1, b1),
        "hardcore": (0, -1),
        "b1_a1": (b1, a1),
        "b1_b2": (b1, b3 - 1),
        "b1_b3": (b1, b3),
    }
    if kind not in table:
        raise ValueError(f"unknown closed form {kind!r}")
    return table[kind]


CLOSED_FORMS = ("stack_down", "hardcore", "b1_a1", "b1_b2", "b1_b3")


def closed_form_validity(kind: str, L: int, N: int) -> str | None:
    """``None`` if the closed form applies, otherwise the reason it does not."""
    if L < 2:
        return "needs at least two sites"
    if kind == "stack_down":
        return None if N >= 2 else "needs N >= 2"
    if kind == "hardcore":
        return None if 1 <= N <= L else "needs 1 <= N <= L"
    if kind == "b1_a1":
        # at N = 2 the doubly occupied target of the b1 -> b2 process is itself a1
        return None if N >= 3 else "needs N >= 3"
    if kind == "b1_b2":
        if N == 3:
            return "singular at N = 3 (b2 coincides with b1)"
        return None if N >= 4 else "needs N >= 4"
    if kind == "b1_b3":
        return None if N >= 3 else "needs N >= 3"
    raise ValueError(f"unknown closed form {kind!r}")


def manifold_rate_closed(kind: str, L: int, N: int, J: float, U: float, kappa: float) -> float:
    """Closed-form manifold rate (uniform J, U, kappa) in 1/us."""
    reason = closed_form_validity(kind, L, N)
    if reason is not None:
        raise ValueError(f"{kind} closed form invalid for L={L}, N={N}: {reason}")
    if U <= 0:
        raise ValueError("U must be positive")
    x = (J / U) ** 2
    if kind == "stack_down":
        return 4 * kappa * x * (L - 1) / L * N / (N - 1) ** 2
    if kind == "hardcore":
        return 8 * kappa * x * N * (N - 1) / L
    if kind == "b1_a1":
        return 4 * kappa * x * N / (L * (N - 1) ** 2)
    if kind == "b1_b2":
        return 8 * kappa * x * (N - 1) / (L * (N - 3) ** 2)
    return 4 * kappa * x * (L - 2) / L * (N - 1) / (N - 2) ** 2


@dataclass
class RateMatrix:
    labels: list[int]
    matrix: np.ndarray  # matrix[i, j] = rate from labels[i] to labels[j]
    dims: np.ndarray | None = None  # Tr Pi_a

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        n = len(self.labels)
        if self.matrix.shape != (n, n):
            raise ValueError("rate matrix must be square over the labels")
        if np.any(self.matrix < 0):
            raise ValueError("rates must be non-negative")
        if np.any(np.diag(self.matrix) != 0):
            raise ValueError("rate matrix diagonal must be zero")

    def rate(self, a: int, b: int) -> float:
        return float(self.matrix[self.labels.index(a), self.labels.index(b)])


def rate_matrix(basis: SectorBasis, params: ModelParams, route: str = "pairs") -> RateMatrix:
    """All directed manifold rates of one sector."""
    H_J = build_hopping(params, basis)
    labels = basis.manifold_labels
    n = len(labels)
    G = np.zeros((n, n))
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            if i != j:
                G[i, j] = manifold_rate_general(a, b, basis, H_J, params.kappa, params.U, route)
    dims = np.array([(basis.labels == a).sum() for a in labels])
    return RateMatrix(labels, G, dims)


def solve_rate_equations(rates: RateMatrix, P0, t_grid) -> PopulationSeries:
    """``dP_a/dt = sum_b (Gamma_ba P_b - Gamma_ab P_a)`` solved by matrix exponential."""
    P0 = np.asarray(P0, dtype=float)
    if P0.shape != (len(rates.labels),):
        raise ValueError("P0 needs one entry per manifold")
    if np.any(P0 < 0):
        raise ValueError("initial populations must be non-negative")
    if abs(P0.sum() - 1) > 1e-8:
        raise ValueError("initial populations must sum to 1")
    G = rates.matrix.T - np.diag(rates.matrix.sum(axis=1))
    t = np.asarray(t_grid, dtype=float)
    vals = np.array([la.expm(G * ti) @ P0 for ti in t])
    return PopulationSeries(t, list(rates.labels), vals)


@dataclass(frozen=True)
class EffectiveFrequencies:
    J_tilde: float  # stack hopping, rad/us
    Xi: float  # exchange, rad/us


def effective_frequencies(N: int, J: float, U: float) -> EffectiveFrequencies:
    if N < 1:
        raise ValueError("N must be >= 1")
    if U <= 0:
        raise ValueError("U must be positive")
    jt = J * N / factorial(N - 1) * (J / U) ** (N - 1)
    return EffectiveFrequencies(J_tilde=jt, Xi=3 * J * (J / U) / 4)


def perturbed_stack_state(site: int, N: int, J: float, U: float, basis: SectorBasis) -> np.ndarray:
    """First-order dressed stack ``|N_site>`` on ``basis`` (normalised).

    Each neighbour configuration ``|(N-1)_site, 1_site+-1>`` enters with
    coefficient ``-J sqrt(N) / (U (N - 1))``.
    """
    if N < 2:
        raise ValueError("the dressed stack needs N >= 2")
    if basis.N != N:
        raise ValueError("basis sector does not match N")
    if not 1 <= site <= basis.L:
        raise ValueError(f"site {site} outside 1..{basis.L}")
    psi = np.zeros(len(basis), dtype=complex)
    stack = [0] * basis.L
    stack[site - 1] = N
    psi[basis.find(tuple(stack))] = 1.0
    c = -J * sqrt(N) / (U * (N - 1))
    for nb in (site - 1, site + 1):
        if 1 <= nb <= basis.L and c != 0:
            s = [0] * basis.L
            s[site - 1] = N - 1
            s[nb - 1] = 1
            psi[basis.find(tuple(s))] += c
    return psi / np.linalg.norm(psi)
