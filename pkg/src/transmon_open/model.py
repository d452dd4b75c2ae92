"""Fock bases, projectors and sparse operators of the attractive Bose-Hubbard chain.

Conventions
-----------
* Sites are labelled ``1..L`` in every public function (the shorthand
  ``"3_2"`` means three bosons on site 2). Arrays are indexed from 0.
* Frequencies and rates are angular, in rad/us, with hbar = 1.
* Sector bases are ordered lexicographically ascending on the occupation
  vector, so ``(0, 1)`` precedes ``(1, 0)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FockState",
    "anharmonicity",
    "SectorBasis",
    "FockSpace",
    "DephasingModel",
    "ModelParams",
    "SparseOperator",
    "build_sector_basis",
    "build_hamiltonian",
    "build_hopping",
    "build_number_op",
    "build_lowering_map",
    "manifold_projectors",
    "write_triplets",
    "read_triplets",
]


class FockState(tuple):
    """Occupation-number vector ``(n_1, ..., n_L)``.

    A plain tuple subclass, so it hashes and compares equal to the
    corresponding tuple of ints.
    """

    __slots__ = ()

    def __new__(cls, occupations):
        occ = tuple(int(n) for n in occupations)
        if any(n < 0 for n in occ):
            raise ValueError(f"negative occupation in {occ}")
        return super().__new__(cls, occ)

    @property
    def total(self) -> int:
        return sum(self)

    @property
    def anharmonicity(self) -> int:
        return anharmonicity(self)

    def shorthand(self) -> str:
        """Occupied sites only, e.g. ``"2_1 3_3"``; the vacuum is ``"vac"``."""
        parts = [f"{n}_{i + 1}" for i, n in enumerate(self) if n]
        return " ".join(parts) if parts else "vac"

    def digits(self) -> str:
        """Compact digit string such as ``"0300"`` (occupations above 9 in brackets)."""
        return "".join(str(n) if n < 10 else f"[{n}]" for n in self)

    @classmethod
    def parse(cls, text: str, L: int) -> FockState:
        """Parse ``"3_2"``, ``"2_1, 1_2"``, ``"(N-1)_l"`` style tokens or a digit string."""
        text = text.strip()
        if text in ("vac", "0" * L, ""):
            return cls((0,) * L)
        if re.fullmatch(r"[0-9]+", text):
            if len(text) != L:
                raise ValueError(f"digit string {text!r} does not have {L} sites")
            return cls(int(ch) for ch in text)
        occ = [0] * L
        for token in re.split(r"[\s,;]+", text.strip("|<>() ")):
            if not token:
                continue
            m = re.fullmatch(r"\(?(\d+)\)?_(\d+)", token)
            if m is None:
                raise ValueError(f"cannot parse Fock token {token!r}")
            n, site = int(m.group(1)), int(m.group(2))
            if not 1 <= site <= L:
                raise ValueError(f"site {site} outside 1..{L}")
            if occ[site - 1]:
                raise ValueError(f"site {site} given twice in {text!r}")
            occ[site - 1] = n
        return cls(occ)

    def __repr__(self) -> str:
        return f"FockState({self.digits()})"


def anharmonicity(s) -> int:
    """Total anharmonicity label ``-sum n(n-1)/2``; always an integer."""
    return -sum(n * (n - 1) // 2 for n in s)


def _enumerate(L: int, N: int, d_max: int):
    # ascending lexicographic order: the first site takes its smallest value first
    if L == 1:
        if N <= d_max:
            yield (N,)
        return
    for n in range(0, min(N, d_max) + 1):
        for rest in _enumerate(L - 1, N - n, d_max):
            yield (n,) + rest


class SectorBasis:
    """All Fock states with ``sum n = N`` and ``max n <= d_max`` on ``L`` sites."""

    def __init__(self, L: int, N: int, d_max: int | None = None):
        if L < 1:
            raise ValueError("L must be >= 1")
        if N < 0:
            raise ValueError("N must be >= 0")
        d_max = max(N, 1) if d_max is None else int(d_max)
        if d_max < 1:
            raise ValueError("d_max must be >= 1")
        if N > L * d_max:
            raise ValueError(f"empty sector: N={N} exceeds L*d_max={L * d_max}")
        self.L = int(L)
        self.N = int(N)
        self.d_max = d_max
        self.states = [FockState(s) for s in _enumerate(L, N, d_max)]
        self.index = {s: i for i, s in enumerate(self.states)}
        self.occupations = np.array(self.states, dtype=np.int64).reshape(len(self.states), L)
        self.labels = -np.sum(self.occupations * (self.occupations - 1) // 2, axis=1)

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __contains__(self, s) -> bool:
        return tuple(s) in self.index

    def __repr__(self) -> str:
        return f"SectorBasis(L={self.L}, N={self.N}, d_max={self.d_max}, dim={len(self)})"

    def find(self, s) -> int:
        try:
            return self.index[tuple(s)]
        except KeyError:
            raise KeyError(f"{tuple(s)} is not in {self!r}") from None

    def compatible(self, other: SectorBasis) -> bool:
        return self.L == other.L and self.N == other.N and self.d_max == other.d_max

    @property
    def manifold_labels(self) -> list[int]:
        return sorted(set(int(a) for a in self.labels))


def build_sector_basis(L: int, N: int, d_max: int) -> SectorBasis:
    return SectorBasis(L, N, d_max)


class FockSpace:
    """Direct sum of sector bases, stored with contiguous global state indices."""

    def __init__(self, sectors: list[SectorBasis]):
        if not sectors:
            raise ValueError("a Fock space needs at least one sector")
        Ls = {b.L for b in sectors}
        if len(Ls) != 1:
            raise ValueError("sectors must share the site count")
        Ns = [b.N for b in sectors]
        if len(set(Ns)) != len(Ns):
            raise ValueError("duplicate sector")
        self.sectors = sorted(sectors, key=lambda b: b.N)
        self.L = Ls.pop()
        self.offsets = np.cumsum([0] + [len(b) for b in self.sectors])
        self._by_n = {b.N: k for k, b in enumerate(self.sectors)}

    @classmethod
    def build(cls, L: int, Ns, d_max: int | None = None) -> FockSpace:
        """Sectors for dynamics. A cutoff below the largest N is refused."""
        Ns = sorted(set(int(n) for n in Ns))
        if d_max is not None and d_max < Ns[-1]:
            raise ValueError(
                f"local cutoff d_max={d_max} < N={Ns[-1]} would truncate the sector; "
                "dynamics within a sector is exact only at d_max >= N"
            )
        return cls([SectorBasis(L, n, max(n if d_max is None else d_max, 1)) for n in Ns])

    @property
    def Ns(self) -> list[int]:
        return [b.N for b in self.sectors]

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def __len__(self) -> int:
        return len(self.sectors)

    def __repr__(self) -> str:
        return f"FockSpace(L={self.L}, N={self.Ns}, dim={self.dim})"

    def has(self, N: int) -> bool:
        return N in self._by_n

    def position(self, N: int) -> int:
        return self._by_n[N]

    def sector(self, N: int) -> SectorBasis:
        return self.sectors[self._by_n[N]]

    def locate(self, s) -> tuple[int, int]:
        """(sector position, local index) of a Fock state."""
        s = tuple(s)
        k = self._by_n.get(sum(s))
        if k is None:
            raise KeyError(f"no sector N={sum(s)} in {self!r}")
        return k, self.sectors[k].find(s)

    def global_index(self, s) -> int:
        k, i = self.locate(s)
        return int(self.offsets[k]) + i

    @property
    def occupations(self) -> np.ndarray:
        return np.vstack([b.occupations for b in self.sectors])

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([b.labels for b in self.sectors])

    @property
    def totals(self) -> np.ndarray:
        return np.concatenate([np.full(len(b), b.N) for b in self.sectors])


@dataclass(frozen=True)
class DephasingModel:
    """Diagonal dephasing operator per site.

    ``"number"`` gives ``sqrt(kappa) n``; ``"exponential"`` gives
    ``sqrt(kappa) exp[a (n - 1)]`` on ``n >= 1`` and zero on the vacuum.
    """

    kind: str = "number"
    a: tuple[float, ...] | float = 0.0

    def __post_init__(self):
        if self.kind not in ("number", "exponential"):
            raise ValueError(f"unknown dephasing model {self.kind!r}")

    def values(self, n: np.ndarray, site: int) -> np.ndarray:
        """Diagonal of the operator (without sqrt(kappa)) for occupations ``n``."""
        n = np.asarray(n, dtype=float)
        if self.kind == "number":
            return n
        a = self.a[site] if isinstance(self.a, tuple) else float(self.a)
        return np.where(n > 0, np.exp(a * (n - 1.0)), 0.0)


def _per_site(value, length: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(length, float(arr[0]))
    if arr.shape != (length,):
        raise ValueError(f"{name} needs {length} entries, got {arr.size}")
    return arr


@dataclass
class ModelParams:
    """Per-site parameters in rad/us (rates in 1/us).

    Scalars are broadcast; ``J`` has one entry per bond (``L - 1``).
    """

    L: int
    U: np.ndarray | float
    J: np.ndarray | float
    omega: np.ndarray | float = 0.0
    gamma: np.ndarray | float = 0.0
    kappa: np.ndarray | float = 0.0
    rotating_frame: bool = True
    dephasing: DephasingModel = field(default_factory=DephasingModel)

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        L = self.L
        self.U = _per_site(self.U, L, "U")
        self.J = _per_site(self.J, L - 1, "J") if L > 1 else np.zeros(0)
        self.omega = _per_site(self.omega, L, "omega")
        self.gamma = _per_site(self.gamma, L, "gamma")
        self.kappa = _per_site(self.kappa, L, "kappa")
        if np.any(self.U <= 0):
            raise ValueError("anharmonicities U must be positive")
        if np.any(self.gamma < 0) or np.any(self.kappa < 0):
            raise ValueError("rates must be non-negative")
        if isinstance(self.dephasing.a, tuple) and len(self.dephasing.a) != L:
            raise ValueError("dephasing exponents need one entry per site")

    @property
    def onsite_frequencies(self) -> np.ndarray:
        """Diagonal frequencies that enter H; the mean is dropped in the rotating frame."""
        if self.rotating_frame:
            return self.omega - self.omega.mean()
        return self.omega

    def dephasing_diagonal(self, occupations: np.ndarray, site: int) -> np.ndarray:
        """Diagonal entries of the site-``site`` (0-based) dephasing jump operator."""
        return np.sqrt(self.kappa[site]) * self.dephasing.values(occupations[:, site], site)

    def replace(self, **changes) -> ModelParams:
        kw = dict(
            L=self.L, U=self.U, J=self.J, omega=self.omega, gamma=self.gamma,
            kappa=self.kappa, rotating_frame=self.rotating_frame, dephasing=self.dephasing,
        )
        kw.update(changes)
        return ModelParams(**kw)


class SparseOperator:
    """CSR matrix between two bases (rows act on ``row_basis``)."""

    def __init__(self, matrix, row_basis, col_basis=None, hermitian: bool = False):
        col_basis = row_basis if col_basis is None else col_basis
        matrix = sp.csr_matrix(matrix, dtype=complex)
        if matrix.shape != (len(row_basis), len(col_basis)):
            raise ValueError(
                f"operator shape {matrix.shape} does not match bases "
                f"({len(row_basis)}, {len(col_basis)})"
            )
        self.matrix = matrix
        self.row_basis = row_basis
        self.col_basis = col_basis
        if hermitian:
            err = self.hermiticity_error()
            scale = max(abs(matrix).max() if matrix.nnz else 0.0, 1.0)
            if err > 1e-12 * scale:
                raise ValueError(f"operator claimed Hermitian but |A - A^H| = {err:.3e}")
        self.hermitian = hermitian

    @property
    def shape(self):
        return self.matrix.shape

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(abs(diff).max()) if diff.nnz else 0.0

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def element(self, bra, ket) -> complex:
        return complex(self.matrix[self.row_basis.find(bra), self.col_basis.find(ket)])

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix @ other.matrix, self.row_basis, other.col_basis)
        return self.matrix @ other

    def __repr__(self) -> str:
        return f"SparseOperator(shape={self.shape}, nnz={self.matrix.nnz})"


def _check_params(p: ModelParams, b: SectorBasis):
    if p.L != b.L:
        raise ValueError(f"parameters are for L={p.L}, basis has L={b.L}")


def _hopping_triplets(p: ModelParams, b: SectorBasis):
    rows, cols, vals = [], [], []
    for j, s in enumerate(b.states):
        for bond in range(b.L - 1):
            # a^dag_l a_{l+1} moves a boson from l+1 onto l; the Hermitian partner is added below
            nl, nr = s[bond], s[bond + 1]
            if nr == 0 or nl + 1 > b.d_max:
                continue
            t = list(s)
            t[bond] += 1
            t[bond + 1] -= 1
            i = b.index[tuple(t)]
            amp = p.J[bond] * np.sqrt((nl + 1) * nr)
            rows += [i, j]
            cols += [j, i]
            vals += [amp, amp]
    return rows, cols, vals


def build_hopping(p: ModelParams, b: SectorBasis) -> SparseOperator:
    """Nearest-neighbour hopping ``sum_l J_l (a+_l a_{l+1} + h.c.)`` on one sector."""
    _check_params(p, b)
    rows, cols, vals = _hopping_triplets(p, b)
    m = sp.coo_matrix((vals, (rows, cols)), shape=(len(b), len(b))).tocsr()
    return SparseOperator(m, b, hermitian=True)


def onsite_energies(p: ModelParams, b: SectorBasis) -> np.ndarray:
    n = b.occupations
    return n @ p.onsite_frequencies - 0.5 * (n * (n - 1)) @ p.U


def build_hamiltonian(p: ModelParams, b: SectorBasis) -> SparseOperator:
    """Bose-Hubbard Hamiltonian of one sector (hbar = 1)."""
    _check_params(p, b)
    rows, cols, vals = _hopping_triplets(p, b)
    diag = onsite_energies(p, b)
    idx = list(range(len(b)))
    m = sp.coo_matrix(
        (vals + list(diag), (rows + idx, cols + idx)), shape=(len(b), len(b))
    ).tocsr()
    m.eliminate_zeros()
    return SparseOperator(m, b, hermitian=True)


def build_number_op(site: int, b: SectorBasis) -> SparseOperator:
    if not 1 <= site <= b.L:
        raise ValueError(f"site {site} outside 1..{b.L}")
    return SparseOperator(sp.diags(b.occupations[:, site - 1].astype(complex)), b, hermitian=True)


def build_lowering_map(site: int, b_from: SectorBasis, b_to: SectorBasis) -> SparseOperator:
    """``a_site`` as a map from sector N to sector N - 1."""
    if b_from.L != b_to.L or b_to.N != b_from.N - 1:
        raise ValueError("lowering map needs a target basis with one boson fewer")
    if not 1 <= site <= b_from.L:
        raise ValueError(f"site {site} outside 1..{b_from.L}")
    k = site - 1
    rows, cols, vals = [], [], []
    for j, s in enumerate(b_from.states):
        if s[k] == 0:
            continue
        t = list(s)
        t[k] -= 1
        i = b_to.index.get(tuple(t))
        if i is None:
            raise ValueError(f"target basis lacks {tuple(t)}")
        rows.append(i)
        cols.append(j)
        vals.append(np.sqrt(s[k]))
    m = sp.coo_matrix((vals, (rows, cols)), shape=(len(b_to), len(b_from))).tocsr()
    return SparseOperator(m, b_to, b_from)


def manifold_projectors(b: SectorBasis) -> list[tuple[int, SparseOperator]]:
    """Diagonal projectors onto each anharmonicity manifold, ordered by label."""
    out = []
    for a in b.manifold_labels:
        mask = (b.labels == a).astype(complex)
        out.append((a, SparseOperator(sp.diags(mask), b, hermitian=True)))
    return out


def write_triplets(op: SparseOperator | np.ndarray, fh) -> None:
    """Write ``row col re im`` lines after a ``# rows cols nnz`` header."""
    m = sp.coo_matrix(op.matrix if isinstance(op, SparseOperator) else op)
    m.sum_duplicates()
    order = np.lexsort((m.col, m.row))
    fh.write(f"# {m.shape[0]} {m.shape[1]} {m.nnz}\n")
    for k in order:
        v = complex(m.data[k])
        fh.write(f"{m.row[k]} {m.col[k]} {v.real:.17g} {v.imag:.17g}\n")


def read_triplets(fh) -> sp.csr_matrix:
    header = fh.readline().split()
    if not header or header[0] != "#":
        raise ValueError("missing '# rows cols nnz' header")
    nr, nc, nnz = (int(x) for x in header[1:4])
    data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 4))
    if data.shape[0] != nnz:
        raise ValueError(f"expected {nnz} entries, found {data.shape[0]}")
    vals = data[:, 2] + 1j * data[:, 3]
    return sp.csr_matrix(
        (vals, (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nr, nc)
    )


def binomial_dim(L: int, N: int) -> int:
    return comb(N + L - 1, N)
