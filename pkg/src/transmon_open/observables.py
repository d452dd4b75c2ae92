"""Site occupations, sector and manifold populations, coherences and decay fits.

Observable names follow a fixed grammar used as CSV column headers::

    n_3             <n_3>, occupation of site 3
    P_N2            population of the N = 2 sector
    P_a-3           population of the a = -3 manifold (P_a0 for a = 0)
    coh_0300_0030   |<0300|rho|0030>|
    purity          Tr rho^2
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .liouville import DensityMatrix
from .model import FockSpace, FockState, SectorBasis

__all__ = [
    "Observable",
    "ObservableRequest",
    "parse_observable",
    "site_occupations",
    "sector_population_map",
    "manifold_populations",
    "purity",
    "coherence_magnitude",
    "evaluate",
    "diagonal_weights",
    "DecayFit",
    "extract_decay_rate",
]

_PATTERNS = [
    ("occupation", re.compile(r"n_(\d+)")),
    ("sector", re.compile(r"P_N(\d+)")),
    ("manifold", re.compile(r"P_a(-?\d+)")),
    ("coherence", re.compile(r"coh_(\d+)_(\d+)")),
    ("purity", re.compile(r"purity")),
]


@dataclass(frozen=True)
class Observable:
    kind: str
    arg: tuple = ()

    @property
    def name(self) -> str:
        if self.kind == "occupation":
            return f"n_{self.arg[0]}"
        if self.kind == "sector":
            return f"P_N{self.arg[0]}"
        if self.kind == "manifold":
            return f"P_a{self.arg[0]}"
        if self.kind == "coherence":
            return f"coh_{self.arg[0].digits()}_{self.arg[1].digits()}"
        return "purity"

    @property
    def diagonal(self) -> bool:
        return self.kind in ("occupation", "sector", "manifold")


def parse_observable(name: str, L: int) -> Observable:
    """Parse a column name; coherence labels must spell all ``L`` occupations."""
    for kind, pat in _PATTERNS:
        m = pat.fullmatch(name.strip())
        if not m:
            continue
        if kind == "occupation":
            site = int(m.group(1))
            if not 1 <= site <= L:
                raise ValueError(f"{name}: site outside 1..{L}")
            return Observable(kind, (site,))
        if kind in ("sector", "manifold"):
            return Observable(kind, (int(m.group(1)),))
        if kind == "coherence":
            states = []
            for g in m.groups():
                if len(g) != L:
                    raise ValueError(f"{name}: coherence labels need {L} digits")
                states.append(FockState(int(c) for c in g))
            return Observable(kind, tuple(states))
        return Observable(kind)
    raise ValueError(f"unknown observable {name!r}")


@dataclass
class ObservableRequest:
    items: list[Observable]

    @classmethod
    def parse(cls, names, L: int) -> ObservableRequest:
        return cls([parse_observable(n, L) for n in names])

    @classmethod
    def default(cls, L: int) -> ObservableRequest:
        return cls([Observable("occupation", (k,)) for k in range(1, L + 1)])

    @property
    def names(self) -> list[str]:
        return [o.name for o in self.items]

    def validate(self, space: FockSpace) -> None:
        for o in self.items:
            if o.kind == "occupation" and not 1 <= o.arg[0] <= space.L:
                raise ValueError(f"{o.name}: no such site")
            if o.kind == "coherence":
                for s in o.arg:
                    space.locate(s)


def _probabilities(state, space: FockSpace | None):
    if isinstance(state, DensityMatrix):
        return state.diagonal(), state.space
    psi = np.asarray(state)
    if space is None:
        raise ValueError("a state vector needs its space or basis")
    return np.abs(psi) ** 2, space


def site_occupations(state, space: FockSpace | SectorBasis | None = None) -> np.ndarray:
    """``<n_l>`` for a density matrix or a state vector on ``space``."""
    p, sp_ = _probabilities(state, space)
    return p @ sp_.occupations


def sector_population_map(rho: DensityMatrix) -> dict[int, float]:
    return {b.N: rho.sector_population(b.N) for b in rho.space.sectors}


def manifold_populations(rho: DensityMatrix, projectors=None) -> dict[int, float]:
    """``Tr(rho Pi_a)`` summed over sectors; ``projectors`` restricts to one sector."""
    if projectors is not None:
        if len(rho.space.sectors) != 1:
            raise ValueError("explicit projectors need a single-sector density matrix")
        blk = rho.blocks[0]
        return {a: float(np.real(np.sum(P.matrix.diagonal() * np.diag(blk)))) for a, P in projectors}
    out: dict[int, float] = {}
    p = rho.diagonal()
    labels = rho.space.labels
    for a in sorted(set(int(x) for x in labels)):
        out[a] = float(p[labels == a].sum())
    return out


def purity(rho: DensityMatrix) -> float:
    return rho.purity()


def coherence_magnitude(rho: DensityMatrix, n, m) -> float:
    return abs(rho.element(n, m))


def evaluate(rho: DensityMatrix, request: ObservableRequest) -> dict[str, float]:
    out = {}
    p = rho.diagonal()
    space = rho.space
    for o in request.items:
        if o.kind == "occupation":
            out[o.name] = float(p @ space.occupations[:, o.arg[0] - 1])
        elif o.kind == "sector":
            out[o.name] = rho.sector_population(o.arg[0])
        elif o.kind == "manifold":
            out[o.name] = float(p[space.labels == o.arg[0]].sum())
        elif o.kind == "coherence":
            out[o.name] = coherence_magnitude(rho, *o.arg)
        else:
            out[o.name] = rho.purity()
    return out


def diagonal_weights(space: FockSpace, request: ObservableRequest) -> np.ndarray:
    """Matrix ``W`` with ``p @ W`` giving every (diagonal) observable from Fock probabilities."""
    cols = []
    for o in request.items:
        if o.kind == "occupation":
            cols.append(space.occupations[:, o.arg[0] - 1].astype(float))
        elif o.kind == "sector":
            cols.append((space.totals == o.arg[0]).astype(float))
        elif o.kind == "manifold":
            cols.append((space.labels == o.arg[0]).astype(float))
        else:
            raise ValueError(f"{o.name} is not diagonal in the Fock basis")
    return np.column_stack(cols) if cols else np.zeros((space.dim, 0))


@dataclass
class DecayFit:
    rate: float
    amplitude: float
    residual: float
    t_start: float
    t_end: float
    n_points: int


def extract_decay_rate(t, y, floor_fraction: float = 1 / 20, min_points: int = 10) -> DecayFit:
    """Fit ``y ~ A exp(-K t)`` by least squares on ``log y`` where ``y > max(y) * floor_fraction``.

    The window is the leading stretch of samples above the floor, so a
    noise tail that rises again after dropping below it is ignored.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and y must be 1-D arrays of equal length")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise ValueError("decay fitting needs strictly positive data")
    above = y > y.max() * floor_fraction
    stop = int(np.argmin(above)) if not above.all() else len(y)
    if stop < min_points:
        raise ValueError(f"only {stop} points above the fit floor; need {min_points}")
    tt, ly = t[:stop], np.log(y[:stop])
    A = np.column_stack([np.ones_like(tt), -tt])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return DecayFit(
        rate=float(coef[1]),
        amplitude=float(np.exp(coef[0])),
        residual=float(np.sqrt(np.mean(resid ** 2))),
        t_start=float(tt[0]),
        t_end=float(tt[-1]),
        n_points=int(stop),
    )
