"""Pure numpy versions of the compiled kernels (same signatures, same results)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

NAME = "python"


def lindblad_apply(y, out, boff, soff, dims, up_block, h_indptr, h_indices, h_data, w, up_idx, up_amp):
    """Block Lindblad matvec: ``out = L(y)`` on the flat block vector ``y``."""
    n_states = int(soff[-1])
    hoff = sp.csr_matrix((h_data, h_indices, h_indptr), shape=(n_states, n_states))
    np.multiply(w, y, out=out)
    for k in range(len(dims)):
        d = int(dims[k])
        if d == 0:
            continue
        s0, o = int(soff[k]), int(boff[k])
        rho = y[o:o + d * d].reshape(d, d)
        blk = out[o:o + d * d].reshape(d, d)
        hk = hoff[s0:s0 + d, s0:s0 + d]
        if hk.nnz:
            blk += -1j * (hk @ rho) + 1j * (hk.T @ rho.T).T
        ku = int(up_block[k])
        if ku < 0:
            continue
        du, su, ou = int(dims[ku]), int(soff[ku]), int(boff[ku])
        rho_up = y[ou:ou + du * du].reshape(du, du)
        for c in range(up_idx.shape[0]):
            idx = up_idx[c, s0:s0 + d]
            ok = np.nonzero(idx >= 0)[0]
            if ok.size == 0:
                continue
            loc = idx[ok] - su
            amp = up_amp[c, s0:s0 + d][ok]
            blk[np.ix_(ok, ok)] += (amp[:, None] * amp[None, :]) * rho_up[np.ix_(loc, loc)]
    return out


def chebyshev_propagate(y, coef, centre, R, boff, soff, dims, up_block, h_indptr, h_indices, h_data,
                        w, up_idx, up_amp):
    """``sum_k coef[k] T_k(X) y`` with ``X = (L - centre) / (i R)``."""
    args = (boff, soff, dims, up_block, h_indptr, h_indices, h_data, w, up_idx, up_amp)
    scale = 1.0 / (1j * R)
    tmp = np.empty_like(y)

    def x_apply(v):
        lindblad_apply(v, tmp, *args)
        return (tmp - centre * v) * scale

    t_prev = y.copy()
    acc = coef[0] * t_prev
    if len(coef) == 1:
        return acc
    t_cur = x_apply(t_prev)
    acc += coef[1] * t_cur
    for k in range(2, len(coef)):
        t_next = 2.0 * x_apply(t_cur) - t_prev
        acc += coef[k] * t_next
        t_prev, t_cur = t_cur, t_next
    return acc


# ---------------------------------------------------------------- trajectories

def _norm_at(V, lam, c, tau):
    phi = V @ (np.exp(-1j * lam * tau) * c)
    return phi, float(np.vdot(phi, phi).real)


def _find_jump_time(V, lam, gam, c, r, hi, n_hi, tol):
    """Solve ``|psi(tau)|^2 = r`` on ``[0, hi]`` given ``|psi(hi)|^2 = n_hi < r``."""
    lo, n_lo = 0.0, 1.0
    tau = lo + (hi - lo) * (n_lo - r) / max(n_lo - n_hi, 1e-300)
    for _ in range(200):
        phi, n = _norm_at(V, lam, c, tau)
        f = n - r
        if abs(f) < tol:
            return tau, phi
        if f > 0:
            lo, n_lo = tau, n
        else:
            hi, n_hi = tau, n
        dn = -float(np.dot(gam, np.abs(phi) ** 2))
        step = tau - f / dn if dn < 0 else -1.0
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        tau = step
        if hi - lo < 1e-15 * max(hi, 1.0):
            break
    phi, _ = _norm_at(V, lam, c, tau)
    return tau, phi


def run_trajectory(sectors, ch_kind, k0, psi0, t_grid, stream, tol, n_global):
    """One quantum-jump trajectory.

    ``sectors[k]`` is a tuple ``(V, Vinv, lam, gam, ch_w, ch_amp, ch_tgt,
    down, soff)`` describing the no-jump propagator ``V exp(-i lam t) Vinv``,
    the total jump rate per basis state ``gam``, per-channel weights,
    amplitudes and target indices, and the sector position one boson lower.
    ``ch_kind[c]`` is 0 for a diagonal (dephasing) channel and 1 for a
    lowering (dissipation) channel.

    Returns ``(prob, sector_of_t, jumps)`` where ``prob[i]`` is the
    normalised probability vector on the global basis at ``t_grid[i]`` and
    ``jumps`` lists ``(t, channel, k)`` events.
    """
    n_t = len(t_grid)
    prob = np.zeros((n_t, n_global))
    where = np.empty(n_t, dtype=np.int64)
    jumps = []
    k = k0
    psi = np.asarray(psi0, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    t = 0.0
    i_out = 0
    while i_out < n_t:
        V, Vinv, lam, gam, ch_w, ch_amp, ch_tgt, down, soff = sectors[k]
        c = Vinv @ psi
        r = stream.next()
        # emit grid points reached before the next jump
        while i_out < n_t:
            tau = t_grid[i_out] - t
            phi, n = _norm_at(V, lam, c, tau)
            if n <= r:
                break
            pr = np.abs(phi) ** 2
            prob[i_out, soff:soff + len(pr)] = pr / pr.sum()
            where[i_out] = k
            i_out += 1
        if i_out >= n_t:
            break
        tau, phi = _find_jump_time(V, lam, gam, c, r, t_grid[i_out] - t, n, tol)
        t += tau
        pr = np.abs(phi) ** 2
        weights = ch_w @ pr
        total = weights.sum()
        if total <= 0:
            raise RuntimeError("jump requested in a state with zero jump rate")
        u = stream.next() * total
        ch = int(np.searchsorted(np.cumsum(weights), u, side="right"))
        ch = min(ch, len(weights) - 1)
        while weights[ch] == 0:
            ch -= 1
        if ch_kind[ch] == 0:
            new = ch_amp[ch] * phi
            k_new = k
        else:
            tgt = ch_tgt[ch]
            new = np.zeros(len(sectors[down][2]), dtype=complex)
            ok = tgt >= 0
            np.add.at(new, tgt[ok], ch_amp[ch][ok] * phi[ok])
            k_new = down
        nrm = np.linalg.norm(new)
        if nrm == 0:
            raise RuntimeError("jump produced a null state")
        psi = new / nrm
        jumps.append((t, ch, k))
        k = k_new
    return prob, where, jumps
