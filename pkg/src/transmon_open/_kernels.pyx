# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: block Lindblad matvec, Chebyshev propagation, jump trajectories."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sin, fabs

cnp.import_array()

ctypedef double complex cplx

NAME = "compiled"


cdef void _apply(const cplx[::1] y, cplx[::1] out,
                 const cnp.int64_t[::1] boff, const cnp.int64_t[::1] soff,
                 const cnp.int64_t[::1] dims, const cnp.int64_t[::1] up_block,
                 const int[::1] h_indptr, const int[::1] h_indices, const cplx[::1] h_data,
                 const cplx[::1] w, const int[:, ::1] up_idx, const double[:, ::1] up_amp) noexcept nogil:
    cdef Py_ssize_t nb = dims.shape[0], n_ch = up_idx.shape[0]
    cdef Py_ssize_t k, i, j, p, kk, d, s0, o, ku, du, su, ou, c, ui, uj, ri, row
    cdef cplx r, h, mi = -1j
    cdef double ai
    for p in range(y.shape[0]):
        out[p] = w[p] * y[p]
    for k in range(nb):
        d = dims[k]
        s0 = soff[k]
        o = boff[k]
        # -i H rho
        for i in range(d):
            row = o + i * d
            for p in range(h_indptr[s0 + i], h_indptr[s0 + i + 1]):
                kk = h_indices[p] - s0
                h = mi * h_data[p]
                for j in range(d):
                    out[row + j] = out[row + j] + h * y[o + kk * d + j]
        # +i rho H
        for i in range(d):
            row = o + i * d
            for kk in range(d):
                r = y[row + kk]
                if r == 0:
                    continue
                r = -mi * r
                for p in range(h_indptr[s0 + kk], h_indptr[s0 + kk + 1]):
                    j = h_indices[p] - s0
                    out[row + j] = out[row + j] + r * h_data[p]
        ku = up_block[k]
        if ku < 0:
            continue
        du = dims[ku]
        su = soff[ku]
        ou = boff[ku]
        for c in range(n_ch):
            for i in range(d):
                ui = up_idx[c, s0 + i]
                if ui < 0:
                    continue
                ai = up_amp[c, s0 + i]
                ri = ou + (ui - su) * du - su
                row = o + i * d
                for j in range(d):
                    uj = up_idx[c, s0 + j]
                    if uj < 0:
                        continue
                    out[row + j] = out[row + j] + (ai * up_amp[c, s0 + j]) * y[ri + uj]


def lindblad_apply(const cplx[::1] y, cplx[::1] out, const cnp.int64_t[::1] boff,
                   const cnp.int64_t[::1] soff, const cnp.int64_t[::1] dims,
                   const cnp.int64_t[::1] up_block, const int[::1] h_indptr,
                   const int[::1] h_indices, const cplx[::1] h_data, const cplx[::1] w,
                   const int[:, ::1] up_idx, const double[:, ::1] up_amp):
    """Block Lindblad matvec: ``out = L(y)`` on the flat block vector ``y``."""
    with nogil:
        _apply(y, out, boff, soff, dims, up_block, h_indptr, h_indices, h_data, w, up_idx, up_amp)


def chebyshev_propagate(const cplx[::1] y, const cplx[::1] coef, double centre, double R,
                        const cnp.int64_t[::1] boff, const cnp.int64_t[::1] soff,
                        const cnp.int64_t[::1] dims, const cnp.int64_t[::1] up_block,
                        const int[::1] h_indptr, const int[::1] h_indices,
                        const cplx[::1] h_data, const cplx[::1] w,
                        const int[:, ::1] up_idx, const double[:, ::1] up_amp):
    """``sum_k coef[k] T_k(X) y`` with ``X = (L - centre) / (i R)``."""
    cdef Py_ssize_t n = y.shape[0], m = coef.shape[0], k, p
    acc_a = np.empty(n, dtype=np.complex128)
    a_a = np.array(y, dtype=np.complex128)
    b_a = np.empty(n, dtype=np.complex128)
    tmp_a = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] acc = acc_a, prev = a_a, cur = b_a, tmp = tmp_a, swap
    cdef cplx scale = 1.0 / (1j * R), cf
    with nogil:
        cf = coef[0]
        for p in range(n):
            acc[p] = cf * prev[p]
        if m > 1:
            _apply(prev, tmp, boff, soff, dims, up_block, h_indptr, h_indices, h_data, w, up_idx, up_amp)
            cf = coef[1]
            for p in range(n):
                cur[p] = (tmp[p] - centre * prev[p]) * scale
                acc[p] = acc[p] + cf * cur[p]
        for k in range(2, m):
            _apply(cur, tmp, boff, soff, dims, up_block, h_indptr, h_indices, h_data, w, up_idx, up_amp)
            cf = coef[k]
            # prev <- 2 X cur - prev, then swap roles
            for p in range(n):
                prev[p] = 2.0 * (tmp[p] - centre * cur[p]) * scale - prev[p]
                acc[p] = acc[p] + cf * prev[p]
            swap = prev
            prev = cur
            cur = swap
    return acc_a


# ---------------------------------------------------------------- trajectories

cdef double _norm_at(const cplx[:, ::1] V, const cplx[::1] lam, const cplx[::1] c,
                     double tau, cplx[::1] z, cplx[::1] phi) noexcept nogil:
    cdef Py_ssize_t d = c.shape[0], i, j
    cdef double re, im, g, nrm = 0.0
    cdef cplx s
    for j in range(d):
        # exp(-i lam tau) with lam = lr + i li
        g = exp(lam[j].imag * tau)
        re = cos(lam[j].real * tau) * g
        im = -sin(lam[j].real * tau) * g
        z[j] = (re + 1j * im) * c[j]
    for i in range(d):
        s = 0
        for j in range(d):
            s = s + V[i, j] * z[j]
        phi[i] = s
        nrm += s.real * s.real + s.imag * s.imag
    return nrm


cdef double _find_jump_time(const cplx[:, ::1] V, const cplx[::1] lam, const double[::1] gam,
                            const cplx[::1] c, double r, double hi, double n_hi, double tol,
                            cplx[::1] z, cplx[::1] phi) noexcept nogil:
    cdef double lo = 0.0, n_lo = 1.0, tau, n, f, dn, step, den
    cdef Py_ssize_t it, i, d = c.shape[0]
    den = n_lo - n_hi
    if den < 1e-300:
        den = 1e-300
    tau = lo + (hi - lo) * (n_lo - r) / den
    for it in range(200):
        n = _norm_at(V, lam, c, tau, z, phi)
        f = n - r
        if fabs(f) < tol:
            return tau
        if f > 0:
            lo = tau
            n_lo = n
        else:
            hi = tau
            n_hi = n
        dn = 0.0
        for i in range(d):
            dn -= gam[i] * (phi[i].real * phi[i].real + phi[i].imag * phi[i].imag)
        step = tau - f / dn if dn < 0 else -1.0
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        tau = step
        if hi - lo < 1e-15 * (hi if hi > 1.0 else 1.0):
            break
    _norm_at(V, lam, c, tau, z, phi)
    return tau


def run_trajectory(list sectors, const cnp.int64_t[::1] ch_kind, Py_ssize_t k0, psi0,
                   const double[::1] t_grid, stream, double tol, Py_ssize_t n_global):
    """One quantum-jump trajectory; see the pure-Python twin for the data layout."""
    cdef Py_ssize_t n_t = t_grid.shape[0], i_out = 0, k = k0, d, i, ch, n_ch, k_new, soff, down, d_low
    cdef double t = 0.0, r, n, tau, total, u, acc, sq, nrm
    cdef const cplx[:, ::1] V
    cdef const cplx[:, ::1] Vinv
    cdef const cplx[::1] lam
    cdef const double[::1] gam
    cdef const double[:, ::1] ch_w
    cdef const cplx[:, ::1] ch_amp
    cdef const cnp.int64_t[:, ::1] ch_tgt
    cdef cplx[::1] psi, c, z, phi, new
    cdef cplx s
    cdef double[::1] weights

    prob_a = np.zeros((n_t, n_global))
    where_a = np.empty(n_t, dtype=np.int64)
    cdef double[:, ::1] prob = prob_a
    cdef cnp.int64_t[::1] where = where_a
    jumps = []
    psi_a = np.array(psi0, dtype=np.complex128)
    psi_a /= np.linalg.norm(psi_a)
    psi = psi_a

    while i_out < n_t:
        sec = sectors[k]
        V = sec[0]
        Vinv = sec[1]
        lam = sec[2]
        gam = sec[3]
        ch_w = sec[4]
        ch_amp = sec[5]
        ch_tgt = sec[6]
        down = sec[7]
        soff = sec[8]
        d = lam.shape[0]
        n_ch = ch_w.shape[0]
        c = np.empty(d, dtype=np.complex128)
        z = np.empty(d, dtype=np.complex128)
        phi = np.empty(d, dtype=np.complex128)
        weights = np.empty(n_ch)
        with nogil:
            for i in range(d):
                s = 0
                for ch in range(d):
                    s = s + Vinv[i, ch] * psi[ch]
                c[i] = s
        r = stream.next()
        with nogil:
            while i_out < n_t:
                tau = t_grid[i_out] - t
                n = _norm_at(V, lam, c, tau, z, phi)
                if n <= r:
                    break
                for i in range(d):
                    prob[i_out, soff + i] = (phi[i].real * phi[i].real + phi[i].imag * phi[i].imag) / n
                where[i_out] = k
                i_out += 1
        if i_out >= n_t:
            break
        with nogil:
            tau = _find_jump_time(V, lam, gam, c, r, t_grid[i_out] - t, n, tol, z, phi)
            t += tau
            total = 0.0
            for ch in range(n_ch):
                acc = 0.0
                for i in range(d):
                    acc += ch_w[ch, i] * (phi[i].real * phi[i].real + phi[i].imag * phi[i].imag)
                weights[ch] = acc
                total += acc
        if total <= 0:
            raise RuntimeError("jump requested in a state with zero jump rate")
        u = stream.next() * total
        acc = 0.0
        ch = n_ch - 1
        for i in range(n_ch):
            acc += weights[i]
            if u < acc:
                ch = i
                break
        while weights[ch] == 0:
            ch -= 1
        if ch_kind[ch] == 0:
            new = np.empty(d, dtype=np.complex128)
            for i in range(d):
                new[i] = ch_amp[ch, i] * phi[i]
            k_new = k
        else:
            d_low = len(sectors[down][2])
            new = np.zeros(d_low, dtype=np.complex128)
            for i in range(d):
                if ch_tgt[ch, i] >= 0:
                    new[ch_tgt[ch, i]] = new[ch_tgt[ch, i]] + ch_amp[ch, i] * phi[i]
            k_new = down
        sq = 0.0
        for i in range(new.shape[0]):
            sq += new[i].real * new[i].real + new[i].imag * new[i].imag
        if sq == 0:
            raise RuntimeError("jump produced a null state")
        nrm = sq ** 0.5
        for i in range(new.shape[0]):
            new[i] = new[i] / nrm
        psi = new
        jumps.append((t, ch, k))
        k = k_new
    return prob_a, where_a, jumps
