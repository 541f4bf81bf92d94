"""Compiled inner loops of the world-line sampler.

The grid is an (L, S) int64 occupancy array with S = 2*n_beta slices.
Transfer step t -> t+1 applies the even-bond propagators when t is even
and the odd-bond propagators when t is odd; for L = 2 the single double
bond is the whole Hamiltonian and odd steps are identity transfers.

Bond propagator blocks are packed flat: block m (bond total m, shape
(m+1) x (m+1)) starts at goff[m], entry (a, c) = <a, m-a|G|c, m-c> at
goff[m] + a*(m+1) + c.

Two move types drive the chain: local corner moves, which deform a world
line across one plaquette, and spiral moves, which reroute one atom all
the way around the ring and so step between winding sectors (corner moves
alone conserve the net winding they were seeded with).

Randomness is an inline xoshiro256** stream so trajectories are
bit-reproducible for a fixed 4-word state, independent of numpy/numba
versions.
"""

import numpy as np
from numba import njit

_U5 = np.uint64(5)
_U7 = np.uint64(7)
_U9 = np.uint64(9)
_U11 = np.uint64(11)
_U17 = np.uint64(17)
_U45 = np.uint64(45)
_U64 = np.uint64(64)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (_U64 - k))


@njit(inline="always")
def _rng_next(s):
    result = _rotl(s[1] * _U5, _U7) * _U9
    t = s[1] << _U17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], _U45)
    return result


@njit(inline="always")
def _rng_uniform(s):
    return float(_rng_next(s) >> _U11) * _INV53


@njit(inline="always")
def _rng_below(s, n):
    return np.int64(_rng_uniform(s) * n)


@njit(inline="always")
def _plaq_weight(grid, gflat, goff, s, b, L, S):
    i = b
    j = b + 1 if b + 1 < L else 0
    sp = s + 1 if s + 1 < S else 0
    m = grid[i, s] + grid[j, s]
    return gflat[goff[m] + grid[i, sp] * (m + 1) + grid[i, s]]


@njit(inline="always")
def _active_bond_of(site, parity, L):
    # of the two bonds touching `site`, the one active at this step parity
    if (site & 1) == parity:
        return site
    return site - 1 if site > 0 else L - 1


@njit(fastmath=True)
def corner_move(grid, gflat, goff, k, t, dr, u):
    """Attempt one plaquette-corner move; returns (accepted, weight ratio).

    Shifts one atom from site k to the neighbor in direction dr on the two
    slices bracketed by the active steps of their shared bond, so slice
    sums and per-step bond totals are preserved by construction.  Accepts
    with probability min(1, W_new/W_old); the grid is mutated only on
    acceptance.
    """
    L, S = grid.shape
    if L == 2:
        j = 1 - k
        b = 0
        p = 0
    else:
        j = (k + dr) % L
        b = k if dr == 1 else j
        p = b & 1
    t1 = t if (t & 1) != p else (t - 1) % S
    tb = t1 + 1 if t1 + 1 < S else 0
    if grid[k, t1] == 0 or grid[k, tb] == 0:
        return False, 0.0

    s0 = t1 - 1 if t1 > 0 else S - 1
    # the <= 4 plaquettes whose entries change
    has_s2 = tb != s0
    if L >= 4:
        q = t1 & 1
        bk = _active_bond_of(k, q, L)
        bj = _active_bond_of(j, q, L)

    w0_old = _plaq_weight(grid, gflat, goff, s0, b, L, S)
    w1_old = _plaq_weight(grid, gflat, goff, tb, b, L, S) if has_s2 else 1.0
    if L >= 4:
        w2_old = _plaq_weight(grid, gflat, goff, t1, bk, L, S)
        w3_old = _plaq_weight(grid, gflat, goff, t1, bj, L, S)
    else:
        w2_old = 1.0
        w3_old = 1.0

    grid[k, t1] -= 1
    grid[j, t1] += 1
    grid[k, tb] -= 1
    grid[j, tb] += 1

    ratio = _plaq_weight(grid, gflat, goff, s0, b, L, S) / w0_old
    if has_s2:
        ratio *= _plaq_weight(grid, gflat, goff, tb, b, L, S) / w1_old
    if L >= 4:
        ratio *= _plaq_weight(grid, gflat, goff, t1, bk, L, S) / w2_old
        ratio *= _plaq_weight(grid, gflat, goff, t1, bj, L, S) / w3_old

    if u < ratio:
        return True, ratio
    grid[k, t1] += 1
    grid[j, t1] -= 1
    grid[k, tb] += 1
    grid[j, tb] -= 1
    return False, ratio


@njit(fastmath=True)
def spiral_move(grid, gflat, goff, state, gap_mean, tau, site_of, psteps, pbonds, wold):
    """Attempt one winding move: reroute an atom once around the ring.

    The crossing time of bond (k0+i, k0+i+1) is tau_i = tau_{i-1} + 1 + 2*c_i
    with private gaps c_i from a discrete exponential of mean ``gap_mean``;
    parities then always match the checkerboard.  Sign +1 sends a
    k0-resident atom on the round trip, sign -1 calls a traveling atom
    back; the two are exact inverses drawn with equal probability, so plain
    Metropolis on the weight ratio is valid.  Returns 1 on acceptance.
    """
    L, S = grid.shape
    k0 = _rng_below(state, L)
    t0 = _rng_below(state, S)
    sign = 1 if (_rng_next(state) & np.uint64(1)) == np.uint64(0) else -1
    if ((t0 ^ k0) & 1) == 1:
        t0 = (t0 + 1) % S

    tau[0] = t0
    for i in range(1, L):
        ug = _rng_uniform(state)
        c = np.int64(-gap_mean * np.log(1.0 - ug))
        tau[i] = tau[i - 1] + 1 + 2 * c
    ext = tau[L - 1] - tau[0]
    if ext > S - 1:
        return 0

    # traveler's site per slice offset within the window
    site_of[0] = k0
    pos = 1
    for off in range(1, ext + 1):
        x = tau[0] + off
        while tau[pos] < x:
            pos += 1
        site_of[off] = (k0 + pos) % L
    site_of[ext + 1] = k0

    # occupancy validity before touching the grid
    for off in range(1, ext + 1):
        sl = (tau[0] + off) % S
        if sign == 1:
            if grid[k0, sl] == 0:
                return 0
        else:
            if grid[site_of[off], sl] == 0:
                return 0

    # affected plaquettes: the resident bond of k0 plus the traveler's bonds
    cnt = 0
    for off in range(ext + 1):
        s_abs = tau[0] + off
        q = s_abs & 1  # S is even, so parity survives the mod below
        s_idx = s_abs % S
        b1 = _active_bond_of(k0, q, L)
        b2 = _active_bond_of(site_of[off], q, L)
        b3 = _active_bond_of(site_of[off + 1], q, L)
        psteps[cnt] = s_idx
        pbonds[cnt] = b1
        cnt += 1
        if b2 != b1:
            psteps[cnt] = s_idx
            pbonds[cnt] = b2
            cnt += 1
        if b3 != b1 and b3 != b2:
            psteps[cnt] = s_idx
            pbonds[cnt] = b3
            cnt += 1

    for c in range(cnt):
        wold[c] = _plaq_weight(grid, gflat, goff, psteps[c], pbonds[c], L, S)

    for off in range(1, ext + 1):
        sl = (tau[0] + off) % S
        grid[k0, sl] -= sign
        grid[site_of[off], sl] += sign

    ratio = 1.0
    for c in range(cnt):
        ratio *= _plaq_weight(grid, gflat, goff, psteps[c], pbonds[c], L, S) / wold[c]

    if _rng_uniform(state) < ratio:
        return 1
    for off in range(1, ext + 1):
        sl = (tau[0] + off) % S
        grid[k0, sl] += sign
        grid[site_of[off], sl] -= sign
    return 0


@njit(inline="always")
def _slices_conserved(grid, n_total):
    L, S = grid.shape
    for t in range(S):
        tot = 0
        for k in range(L):
            tot += grid[k, t]
        if tot != n_total:
            return False
    return True


@njit(inline="always")
def _one_sweep(grid, gflat, goff, state, L, S, debug, n_total):
    acc = 0
    for _ in range(L * S):
        k = _rng_below(state, L)
        t = _rng_below(state, S)
        dr = 1 if (_rng_next(state) & np.uint64(1)) == np.uint64(0) else -1
        u = _rng_uniform(state)
        ok, _ratio = corner_move(grid, gflat, goff, k, t, dr, u)
        if ok:
            acc += 1
        if debug and not _slices_conserved(grid, n_total):
            return acc, True
    return acc, False


@njit(cache=True, nogil=True)
def sweep_kernel(grid, gflat, goff, state, n_sweeps, n_winding, gap_mean,
                 tau, site_of, psteps, pbonds, wold, debug, n_total):
    """Full sweeps: L*S corner attempts each, then n_winding spiral attempts.

    Returns (corner accepted, corner attempted, spiral accepted, spiral
    attempted, status); status 1 flags a particle conservation violation
    found while debug-checking.
    """
    L, S = grid.shape
    acc = 0
    wacc = 0
    for _ in range(n_sweeps):
        a, bad = _one_sweep(grid, gflat, goff, state, L, S, debug, n_total)
        acc += a
        if bad:
            return acc, n_sweeps * L * S, wacc, n_sweeps * n_winding, 1
        for _ in range(n_winding):
            wacc += spiral_move(grid, gflat, goff, state, gap_mean,
                                tau, site_of, psteps, pbonds, wold)
            if debug and not _slices_conserved(grid, n_total):
                return acc, n_sweeps * L * S, wacc, n_sweeps * n_winding, 1
    return acc, n_sweeps * L * S, wacc, n_sweeps * n_winding, 0


@njit(cache=True, nogil=True)
def grid_energy(grid, gflat, goff, hgflat):
    """Estimator of <H>: sum of <s'|h G|s>/<s'|G|s> over active plaquettes
    of every step, divided by the number of full Trotter steps."""
    L, S = grid.shape
    tot = 0.0
    for s in range(S):
        q = s & 1
        if L == 2:
            if q == 1:
                continue
            tot += _plaq_weight_h(grid, gflat, goff, hgflat, s, 0, L, S)
            continue
        for b in range(q, L, 2):
            tot += _plaq_weight_h(grid, gflat, goff, hgflat, s, b, L, S)
    return tot / (S // 2)


@njit(inline="always")
def _plaq_weight_h(grid, gflat, goff, hgflat, s, b, L, S):
    i = b
    j = b + 1 if b + 1 < L else 0
    sp = s + 1 if s + 1 < S else 0
    m = grid[i, s] + grid[j, s]
    idx = goff[m] + grid[i, sp] * (m + 1) + grid[i, s]
    return hgflat[idx] / gflat[idx]


@njit(cache=True, nogil=True)
def sample_kernel(grid, gflat, goff, hgflat, state, stride, out_samples, out_energy,
                  n_winding, gap_mean, tau, site_of, psteps, pbonds, wold, debug, n_total):
    """Alternate `stride` sweeps with recording slice 0 until out_samples is full."""
    L, S = grid.shape
    acc = 0
    att = 0
    wacc = 0
    watt = 0
    m_samples = out_samples.shape[0]
    for m in range(m_samples):
        for _ in range(stride):
            a, bad = _one_sweep(grid, gflat, goff, state, L, S, debug, n_total)
            acc += a
            att += L * S
            if bad:
                return acc, att, wacc, watt, 1
            for _ in range(n_winding):
                wacc += spiral_move(grid, gflat, goff, state, gap_mean,
                                    tau, site_of, psteps, pbonds, wold)
                watt += 1
                if debug and not _slices_conserved(grid, n_total):
                    return acc, att, wacc, watt, 1
        for k in range(L):
            out_samples[m, k] = grid[k, 0]
        out_energy[m] = grid_energy(grid, gflat, goff, hgflat)
    return acc, att, wacc, watt, 0
