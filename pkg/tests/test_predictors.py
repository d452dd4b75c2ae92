import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from transmon_open.model import ModelParams, SectorBasis, build_hamiltonian, build_hopping, onsite_energies
from transmon_open.predictors import (
    CLOSED_FORMS,
    RateMatrix,
    closed_form_labels,
    closed_form_validity,
    dephasing_decoherence_rate,
    dissipative_decoherence_rate,
    effective_frequencies,
    manifold_rate_closed,
    manifold_rate_general,
    perturbed_stack_state,
    rate_matrix,
    sector_populations,
    solve_rate_equations,
)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 6), st.floats(0.01, 2.0))
def test_sector_law_matches_cascade_ode(N_max, gamma):
    t = np.linspace(0, 5.0 / gamma, 25)

    def rhs(_, P):
        N = np.arange(N_max + 1)
        out = -gamma * N * P
        out[:-1] += gamma * N[1:] * P[1:]
        return out

    P0 = np.zeros(N_max + 1)
    P0[-1] = 1
    sol = solve_ivp(rhs, (0, t[-1]), P0, t_eval=t, rtol=1e-11, atol=1e-13, method="DOP853")
    law = sector_populations(N_max, gamma, t)
    assert np.abs(law.values - sol.y.T).max() < 1e-8
    assert np.allclose(law.values.sum(axis=1), 1)


def test_sector_law_rejects_bad_input():
    with pytest.raises(ValueError):
        sector_populations(-1, 0.1, [0])
    with pytest.raises(ValueError):
        sector_populations(2, -0.1, [0])


def test_decoherence_rates():
    assert dephasing_decoherence_rate((0, 3, 0, 0), (0, 0, 3, 0), 2.0) == pytest.approx(9 * 2.0)
    assert dephasing_decoherence_rate((4, 0, 0, 0), (2, 2, 0, 0), 1.0) == pytest.approx(4.0)
    assert dissipative_decoherence_rate((1, 2), (3, 0), 0.5) == pytest.approx(0.5 * 3)
    assert dissipative_decoherence_rate((1, 2), (2, 1), [0.2, 0.4]) == pytest.approx(0.5 * (0.2 * 3 + 0.4 * 3))
    with pytest.raises(ValueError):
        dephasing_decoherence_rate((1, 2), (1, 2, 0), 1.0)


chains = st.tuples(st.integers(2, 5), st.integers(2, 4))


@settings(max_examples=25, deadline=None)
@given(chains, st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5), st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_pairs_and_trace_routes_agree(chain, kappa, J):
    L, N = chain
    p = ModelParams(L=L, U=5.0, J=J[: L - 1], kappa=kappa[:L])
    b = SectorBasis(L, N)
    HJ = build_hopping(p, b)
    for a in b.manifold_labels:
        for c in b.manifold_labels:
            if a == c:
                continue
            x = manifold_rate_general(a, c, b, HJ, p.kappa, p.U, "pairs")
            y = manifold_rate_general(a, c, b, HJ, p.kappa, p.U, "trace")
            assert abs(x - y) <= 1e-12 * max(abs(x), 1e-300) + 1e-300


@settings(max_examples=25, deadline=None)
@given(chains, st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5))
def test_rates_balance_with_manifold_dimensions(chain, kappa):
    L, N = chain
    p = ModelParams(L=L, U=3.0, J=0.2, kappa=kappa[:L])
    R = rate_matrix(SectorBasis(L, N), p)
    flux = R.dims[:, None] * R.matrix
    assert np.allclose(flux, flux.T, rtol=1e-12, atol=1e-300)


def test_rates_vanish_without_dephasing():
    p = ModelParams(L=4, U=3.0, J=0.2, gamma=0.1)
    R = rate_matrix(SectorBasis(4, 3), p)
    assert np.all(R.matrix == 0)


def test_rate_edge_cases():
    p = ModelParams(L=2, U=3.0, J=0.2, kappa=0.1)
    b = SectorBasis(2, 2)
    HJ = build_hopping(p, b)
    with pytest.raises(ValueError):
        manifold_rate_general(0, 0, b, HJ, p.kappa, p.U)
    with pytest.raises(ValueError):
        manifold_rate_general(-7, 0, b, HJ, p.kappa, p.U)
    assert manifold_rate_general(0, -7, b, HJ, p.kappa, p.U) == 0.0
    with pytest.raises(ValueError):
        manifold_rate_general(0, -1, b, HJ, p.kappa, [3.0, 3.5])
    with pytest.raises(ValueError):
        manifold_rate_general(0, -1, b, HJ, p.kappa, p.U, route="bogus")


def test_closed_form_labels():
    assert closed_form_labels("stack_down", 3) == (-3, -1)
    assert closed_form_labels("hardcore", 2) == (0, -1)
    # b2 = (N-2)_l 2_k
    assert closed_form_labels("b1_b2", 5) == (-6, -4)
    assert closed_form_labels("b1_b3", 4) == (-3, -1)
    with pytest.raises(ValueError):
        closed_form_labels("nope", 3)


@pytest.mark.parametrize(
    "kind,L,N,ok",
    [
        ("stack_down", 4, 1, False),
        ("stack_down", 4, 2, True),
        ("hardcore", 4, 5, False),
        ("hardcore", 4, 4, True),
        ("b1_a1", 4, 2, False),
        ("b1_b2", 4, 3, False),
        ("b1_b2", 4, 4, True),
        ("b1_b3", 4, 3, True),
        ("stack_down", 1, 3, False),
    ],
)
def test_closed_form_validity(kind, L, N, ok):
    assert (closed_form_validity(kind, L, N) is None) == ok
    if not ok:
        with pytest.raises(ValueError):
            manifold_rate_closed(kind, L, N, 1.0, 10.0, 0.1)


def test_singular_b1_b2_reason():
    assert "singular" in closed_form_validity("b1_b2", 5, 3)


def test_stack_down_value():
    J, U, k = 1.0, 10.0, 0.5
    # L = 4, N = 3: 4 k (J/U)^2 (3/4) 3/4
    assert manifold_rate_closed("stack_down", 4, 3, J, U, k) == pytest.approx(4 * k * 0.01 * 0.75 * 0.75)


@pytest.mark.parametrize("kind", CLOSED_FORMS)
def test_closed_form_matches_general_l5(kind):
    L, J, U, k = 5, 0.3, 4.0, 0.2
    for N in range(1, 6):
        if closed_form_validity(kind, L, N):
            continue
        p = ModelParams(L=L, U=U, J=J, kappa=k)
        b = SectorBasis(L, N)
        a, c = closed_form_labels(kind, N)
        g = manifold_rate_general(a, c, b, build_hopping(p, b), p.kappa, p.U)
        assert g == pytest.approx(manifold_rate_closed(kind, L, N, J, U, k), rel=1e-10, abs=1e-300)


def test_rate_equations_conserve_and_relax():
    p = ModelParams(L=4, U=3.0, J=0.4, kappa=0.3)
    R = rate_matrix(SectorBasis(4, 3), p)
    P0 = np.zeros(len(R.labels))
    P0[0] = 1
    t = np.linspace(0, 2000, 30)
    sol = solve_rate_equations(R, P0, t)
    assert np.allclose(sol.values.sum(axis=1), 1)
    assert np.allclose(sol.values[-1], R.dims / R.dims.sum(), atol=1e-6)
    assert sol.column(R.labels[0])[0] == 1


def test_rate_equations_validation():
    R = RateMatrix([0, -1], [[0, 1.0], [2.0, 0]])
    with pytest.raises(ValueError):
        solve_rate_equations(R, [0.5, 0.4], [0])
    with pytest.raises(ValueError):
        solve_rate_equations(R, [1.0], [0])
    with pytest.raises(ValueError):
        RateMatrix([0, -1], [[0, -1.0], [2.0, 0]])
    with pytest.raises(ValueError):
        RateMatrix([0, -1], [[1.0, 1.0], [2.0, 0]])
    assert R.rate(-1, 0) == 2.0


def test_effective_frequencies():
    J, U = 2.0, 30.0
    assert effective_frequencies(1, J, U).J_tilde == pytest.approx(J)
    assert effective_frequencies(3, J, U).J_tilde == pytest.approx(3 * J * (J / U) ** 2 / 2)
    assert effective_frequencies(2, J, U).Xi == pytest.approx(0.75 * J * J / U)
    with pytest.raises(ValueError):
        effective_frequencies(0, J, U)


@pytest.mark.parametrize("L,N,site", [(4, 3, 2), (4, 3, 1), (5, 4, 3), (3, 2, 3)])
def test_dressed_stack_first_order(L, N, site):
    J, U = 0.05, 5.0
    p = ModelParams(L=L, U=U, J=J)
    b = SectorBasis(L, N)
    E = onsite_energies(p, b)
    HJ = build_hopping(p, b).toarray()
    stack = [0] * L
    stack[site - 1] = N
    n = b.find(tuple(stack))
    ref = np.zeros(len(b), complex)
    ref[n] = 1
    for m in range(len(b)):
        if m != n and HJ[m, n] != 0:
            ref[m] = HJ[m, n] / (E[n] - E[m])
    ref /= np.linalg.norm(ref)
    got = perturbed_stack_state(site, N, J, U, b)
    assert abs(abs(np.vdot(ref, got)) - 1) < 1e-14
    # weight outside the stack band (the L lowest levels) is second order in J/U
    ev, V = np.linalg.eigh(build_hamiltonian(p, b).toarray())
    band = V[:, :L]
    outside = 1 - np.linalg.norm(band.conj().T @ got) ** 2
    bare = np.zeros(len(b), complex)
    bare[n] = 1
    assert outside < 1e-2 * (1 - np.linalg.norm(band.conj().T @ bare) ** 2)


def test_dressed_stack_validation():
    b = SectorBasis(3, 2)
    with pytest.raises(ValueError):
        perturbed_stack_state(1, 1, 0.1, 1.0, SectorBasis(3, 1))
    with pytest.raises(ValueError):
        perturbed_stack_state(1, 3, 0.1, 1.0, b)
    with pytest.raises(ValueError):
        perturbed_stack_state(4, 2, 0.1, 1.0, b)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_dephasing_jump_admixture(N):
    from transmon_open.model import build_number_op
    from transmon_open.trajectory import apply_jump

    L, site, J, U = 4, 2, 0.01, 5.0
    b = SectorBasis(L, N)
    c = J * np.sqrt(N) / (U * (N - 1))
    a_state = perturbed_stack_state(site, N, J, U, b)
    after = apply_jump(a_state, build_number_op(site, b))
    stack = [0] * L
    stack[site - 1] = N
    for nb in (site - 1, site + 1):
        s = [0] * L
        s[site - 1], s[nb - 1] = N - 1, 1
        dressed = np.zeros(len(b), complex)
        dressed[b.find(tuple(s))] = 1
        dressed[b.find(tuple(stack))] = c
        dressed /= np.linalg.norm(dressed)
        ratio = np.vdot(dressed, after) / np.vdot(a_state, after)
        # first order: the admixed b state enters with c / N after the jump
        assert ratio.real == pytest.approx(c / N, rel=20 * J / U)
