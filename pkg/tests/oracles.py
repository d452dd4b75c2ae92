"""Independent dense reference implementations used by the tests.

Everything here is built from scratch with Kronecker products on the full
truncated Fock space, sharing no code with the package.
"""

import itertools

import numpy as np
from scipy.linalg import expm


def local_ops(dloc):
    a = np.diag(np.sqrt(np.arange(1, dloc)), 1)
    n = np.diag(np.arange(dloc)).astype(float)
    return a, n


def site_op(op, site, L, dloc):
    mats = [np.eye(dloc)] * L
    mats = list(mats)
    mats[site] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def full_states(L, dloc):
    return list(itertools.product(range(dloc), repeat=L))


def dense_hamiltonian(L, dloc, U, J, omega=None):
    U = np.broadcast_to(np.asarray(U, dtype=float), (L,))
    J = np.broadcast_to(np.asarray(J, dtype=float), (max(L - 1, 0),))
    omega = np.zeros(L) if omega is None else np.broadcast_to(np.asarray(omega, dtype=float), (L,))
    a, n = local_ops(dloc)
    H = np.zeros((dloc ** L, dloc ** L))
    for l in range(L):
        nl = site_op(n, l, L, dloc)
        H += omega[l] * nl - 0.5 * U[l] * nl @ (nl - np.eye(len(nl)))
    for l in range(L - 1):
        hop = site_op(a.T, l, L, dloc) @ site_op(a, l + 1, L, dloc)
        H += J[l] * (hop + hop.T)
    return H


def dense_jumps(L, dloc, gamma, kappa):
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (L,))
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (L,))
    a, n = local_ops(dloc)
    ops = []
    for l in range(L):
        if gamma[l] > 0:
            ops.append(np.sqrt(gamma[l]) * site_op(a, l, L, dloc))
        if kappa[l] > 0:
            ops.append(np.sqrt(kappa[l]) * site_op(n, l, L, dloc))
    return ops


def dense_lindblad(rho, H, ops):
    out = -1j * (H @ rho - rho @ H)
    for c in ops:
        cd = c.conj().T
        out += c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c)
    return out


def dense_superoperator(H, ops):
    d = H.shape[0]
    eye = np.eye(d)
    # row-major vec: vec(A X B) = kron(A, B.T) vec(X)
    S = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for c in ops:
        cd = c.conj().T
        cdc = cd @ c
        S += np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return S


def evolve_dense(rho0, H, ops, times):
    S = dense_superoperator(H, ops)
    v = rho0.ravel()
    return [(expm(S * t) @ v).reshape(rho0.shape) for t in times]


def embed_indices(states_small, L, dloc):
    """Positions of Fock tuples inside the full ``dloc**L`` product basis."""
    return np.array([sum(n * dloc ** (L - 1 - k) for k, n in enumerate(s)) for s in states_small])
