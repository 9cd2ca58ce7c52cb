"""Compiled Monte Carlo kernels for the replica-contour ensemble.

Everything here is plain numpy-array + scalar code compiled with numba's
``@njit(nogil=True)``; no Python objects cross the boundary, so the GIL is
released while a chain runs and chains on separate ContourStates advance in
parallel under a thread pool. The public wrappers live in
:mod:`renyiqmc.sse_engine` and :mod:`renyiqmc.contour`; tests target those.

Configuration representation (per chain)
----------------------------------------
state[c, s]      : replica c's spin configuration at its segment's level-0
                   (bra) end, values +/-1.
op_type[c, k]    : operator string slots, one of OP_* below.
op_loc[c, k]     : site index (site operators) or bond index (bond operators).
sector[c, b]     : channel sector per (replica, bond): SECTOR_S1 or SECTOR_S2.
wlab[c, b]       : shared W label of the insertion's paired W boxes,
                   +1 = identity, -1 = X_iX_j.
topo             : TOPO_JOINED (one trace over all replicas) or TOPO_SPLIT
                   (each replica traces separately; r = 2 only).

Contour geometry
----------------
Replica c's segment propagates from its level-0 end to its level-Lam end.
Between the level-Lam (ket) end and the junction slice sits the ket-side
insertion stack, bond 0 innermost; between the level-0 (bra) end and its
junction slice sits the bra-side stack, also bond 0 innermost. Per insertion:

  sigma1: both W boxes in series on the ket line  (inner) [alpha] [beta] (outer),
          net operator W^2 = identity; the bra line passes through untouched.
  sigma2: the same two ket-line boxes with the Kronecker junction spliced
          between them: (inner) [alpha] [junction] [beta] (outer). The bra
          line passes through the junction with its value unchanged. The
          junction pins all four of a site's arcs (ket alpha-to-junction,
          ket junction-to-beta, bra inner, bra outer) equal, so the net ket
          operator is again W^2 = identity and the junction enforces
          w * (ket value) == (bra value) at the layer.

Both line values are therefore layer-independent: the bra line carries
state[c, s] everywhere, the ket line carries the segment's level-Lam value
everywhere, and junction slice c equals state[c] exactly.

In the JOINED topology replica c's ket stack attaches to junction (c-1) mod r
and its bra stack to junction c; in SPLIT both attach to junction c.

Cluster update
--------------
Arcs (maximal constant-spin intervals of a site's worldline) are union-find
nodes. Site operators terminate worldlines (flipping one side toggles
SiteDiag <-> SiteFlip); bond operators union their four arcs; junctions union
their four arcs per site; W boxes union per the sampled branch: branch A
pairs in_i<->out_j and in_j<->out_i (a flip of one pair toggles W on both
paired boxes coherently), branch B pairs in/out per site (W preserved); if
the two boxes of one insertion draw different branches, all eight box legs
join one cluster (W preserved). Every cluster flips with probability 1/2 —
all rules are weight-neutral, so the update is rejection-free.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# ----------------------------------------------------------------- constants
OP_PAD = 0
OP_SITE_DIAG = 1
OP_SITE_FLIP = 2
OP_BOND_DIAG = 3

SECTOR_S1 = 1
SECTOR_S2 = 2

W_ID = 1
W_XX = -1

TOPO_JOINED = 0
TOPO_SPLIT = 1

BRANCH_A = 0
BRANCH_B = 1

RULE_BALANCED = 0
RULE_AS_PRINTED = 1

#: measurement row layout (int64): raw per-sweep scalars; the estimator layer
#: owns all normalization.
MEAS_M1 = 0  # sum_s z_s at junction slice 0
MEAS_M2 = 1  # sum_s z_s at junction slice 1 (r=2)
MEAS_Q = 2  # sum_s z^(0)_s z^(1)_s (r=2)
MEAS_C0 = 3  # sum over max-distance pairs of z_i z_j at the r=1 entry slice
MEAS_C1X2 = 4  # sum over pairs of [z_i z_j at slice 0 + same at slice 1]
MEAS_C2 = 5  # sum over pairs of z_i z_j(slice 0) * z_i z_j(slice 1)
MEAS_S2N = 6  # number of sigma2 insertions
MEAS_TOPO = 7  # topology flag at measurement time
MEAS_NOPS = 8  # total non-pad operators over all replicas
N_MEAS_COLS = 9

#: acceptance-counter layout (int64)
CNT_INS_PROP = 0
CNT_INS_ACC = 1
CNT_REM_PROP = 2
CNT_REM_ACC = 3
CNT_S12_PROP = 4  # eligible sigma1 -> sigma2 proposals
CNT_S12_ACC = 5
CNT_S21_PROP = 6  # eligible sigma2 -> sigma1 proposals
CNT_S21_ACC = 7
CNT_SECTOR_NULL = 8  # junction-incompatible visits: null updates, count as rejected
CNT_TOPO_PROP = 9
CNT_TOPO_ACC = 10
CNT_SWEEPS = 11
N_COUNTERS = 12

#: _build_graph / validation error codes
ERR_OK = 0
ERR_BOND_ANTIALIGNED = 1
ERR_JUNCTION_MISMATCH = 2
ERR_SLICE_MISMATCH = 3
ERR_WLABEL_MISMATCH = 4

_PCG_MULT = np.uint64(6364136223846793005)
_MASK32 = np.uint64(0xFFFFFFFF)
_U64_1 = np.uint64(1)
_INV32 = np.float64(2.0**-32)


# ---------------------------------------------------------------------- RNG
@njit(cache=True, nogil=True, inline="always")
def _pcg_next(rng):
    """One PCG32 (XSH-RR) step over rng = uint64[2] (state, inc); returns
    the 32-bit output widened to uint64."""
    old = rng[0]
    rng[0] = old * _PCG_MULT + rng[1]
    xorshifted = (((old >> np.uint64(18)) ^ old) >> np.uint64(27)) & _MASK32
    rot = old >> np.uint64(59)
    return ((xorshifted >> rot) | (xorshifted << ((np.uint64(32) - rot) & np.uint64(31)))) & _MASK32


@njit(cache=True, nogil=True, inline="always")
def _pcg_double(rng):
    """Uniform double in (0,1): (u32 + 0.5) * 2^-32."""
    return (np.float64(_pcg_next(rng)) + 0.5) * _INV32


@njit(cache=True, nogil=True, inline="always")
def _pcg_coin(rng):
    """Fair coin from the top bit."""
    return _pcg_next(rng) < np.uint64(0x80000000)


@njit(cache=True, nogil=True)
def pcg_init(seed, seq, rng):
    """Initialize rng = uint64[2] from (seed, sequence); mirrors rng.pcg32_init."""
    rng[1] = (np.uint64(seq) << _U64_1) | _U64_1
    rng[0] = np.uint64(0)
    _pcg_next(rng)
    rng[0] = rng[0] + np.uint64(seed)
    _pcg_next(rng)


@njit(cache=True, nogil=True)
def pcg_fill_u32(rng, out):
    """Fill out (uint64 array) with consecutive 32-bit outputs (test hook)."""
    for i in range(out.shape[0]):
        out[i] = _pcg_next(rng)


@njit(cache=True, nogil=True)
def pcg_fill_double(rng, out):
    for i in range(out.shape[0]):
        out[i] = _pcg_double(rng)


# ---------------------------------------------------------------- union-find
@njit(cache=True, nogil=True, inline="always")
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:  # path compression
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@njit(cache=True, nogil=True, inline="always")
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra != rb:
        parent[rb] = ra


# ------------------------------------------------------------------- arc ids
# Arc id space (A = r*N + 2*r*Lam + 8*r*NB):
#   [0, r*N)                       : level-0 ("base") segment arcs, id c*N+s
#   [r*N, r*N + 2*r*Lam)           : operator out-arcs, id r*N + (c*Lam+k)*2 + d
#   remainder                      : insertion-stack arcs, 8 slots per (c, b):
#     slot 0,1: ket arc leaving the alpha box at sites (i, j) — runs to the
#               beta box (sigma1) or to the junction (sigma2)
#     slot 2,3: sigma1: ket outer arc (after the beta box);
#               sigma2: ket arc between the junction and the beta box
#     slot 4,5: sigma2 ket outer arc (after the beta box)
#     slot 6,7: sigma2 bra outer arc (junction pass-through)
@njit(cache=True, nogil=True, inline="always")
def _arc_op(c, k, d, n_sites, lam):
    return n_sites + (c * lam + k) * 2 + d  # caller pre-multiplies n_sites by r


@njit(cache=True, nogil=True, inline="always")
def _arc_slot(c, b, slot, op_arc_end, n_bonds):
    return op_arc_end + (c * n_bonds + b) * 8 + slot


# --------------------------------------------------------------- SSE updates
@njit(cache=True, nogil=True)
def _diagonal_update(c, state, op_type, op_loc, cur_spin, bond_sites,
                     J, beta, n_in, rng, counters):
    """Standard SSE diagonal insert/remove sweep over replica c's slots.

    Candidates are drawn proportional to their maximum weight (site weight 1,
    bond weight 2J); antialigned bond candidates are rejected outright (zero
    weight). Insertion accepts with min{1, beta*C_tot/(Lam-n)}, removal with
    min{1, (Lam-n+1)/(beta*C_tot)}, C_tot = N + 2*J*NB.
    """
    n_sites = state.shape[1]
    n_bonds = bond_sites.shape[0]
    lam = op_type.shape[1]
    ctot = n_sites + 2.0 * J * n_bonds
    n = n_in
    for s in range(n_sites):
        cur_spin[s] = state[c, s]
    for k in range(lam):
        t = op_type[c, k]
        if t == OP_PAD:
            counters[CNT_INS_PROP] += 1
            a = beta * ctot / (lam - n)
            u = _pcg_double(rng) * ctot
            if u < n_sites:
                site = np.int64(u)
                if site >= n_sites:
                    site = n_sites - 1
                if a >= 1.0 or _pcg_double(rng) < a:
                    op_type[c, k] = OP_SITE_DIAG
                    op_loc[c, k] = site
                    n += 1
                    counters[CNT_INS_ACC] += 1
            else:
                bidx = np.int64((u - n_sites) / (2.0 * J))
                if bidx >= n_bonds:
                    bidx = n_bonds - 1
                i = bond_sites[bidx, 0]
                j = bond_sites[bidx, 1]
                if cur_spin[i] == cur_spin[j]:
                    if a >= 1.0 or _pcg_double(rng) < a:
                        op_type[c, k] = OP_BOND_DIAG
                        op_loc[c, k] = bidx
                        n += 1
                        counters[CNT_INS_ACC] += 1
        elif t == OP_SITE_FLIP:
            loc = op_loc[c, k]
            cur_spin[loc] = -cur_spin[loc]
        else:
            counters[CNT_REM_PROP] += 1
            a = (lam - n + 1) / (beta * ctot)
            if a >= 1.0 or _pcg_double(rng) < a:
                op_type[c, k] = OP_PAD
                n -= 1
                counters[CNT_REM_ACC] += 1
    return n


@njit(cache=True, nogil=True)
def _sample_branches(r, n_bonds, branches, rng):
    """Independent fair coin per W box, lexicographic (replica, bond, box) order."""
    for c in range(r):
        for b in range(n_bonds):
            branches[c, b, 0] = BRANCH_A if _pcg_coin(rng) else BRANCH_B
            branches[c, b, 1] = BRANCH_A if _pcg_coin(rng) else BRANCH_B


# -------------------------------------------------------------- arc building
@njit(cache=True, nogil=True)
def _build_graph(r, bond_sites, inc_bonds, inc_count,
                 state, op_type, op_loc, sector, wlab, topo, branches,
                 parent, arc_spin, arc_used, op_below, alpha_in,
                 top_arc, top_spin, bra_outer, ket_outer, uslices,
                 cur_arc, cur_spin, verify):
    """Build the full arc graph: spins, unions, and walk bookkeeping.

    Returns ERR_OK or the first violated-constraint error code (verify != 0
    additionally checks constraints that valid configurations satisfy by
    construction; production sweeps run them every `checks_every` sweeps).
    """
    n_sites = state.shape[1]
    n_bonds = bond_sites.shape[0]
    lam = op_type.shape[1]
    rn = r * n_sites
    op_arc_end = rn + 2 * r * lam
    n_arcs = parent.shape[0]
    for a in range(n_arcs):
        parent[a] = a
        arc_used[a] = 0

    # --- segment walks: assign segment arc spins, apply bond-op unions
    for c in range(r):
        for s in range(n_sites):
            aid = c * n_sites + s
            cur_arc[s] = aid
            cur_spin[s] = state[c, s]
            arc_spin[aid] = state[c, s]
            arc_used[aid] = 1
        for k in range(lam):
            t = op_type[c, k]
            if t == OP_PAD:
                continue
            loc = op_loc[c, k]
            if t == OP_BOND_DIAG:
                i = bond_sites[loc, 0]
                j = bond_sites[loc, 1]
                if verify != 0 and cur_spin[i] != cur_spin[j]:
                    return ERR_BOND_ANTIALIGNED
                ai = _arc_op(c, k, 0, rn, lam)
                aj = _arc_op(c, k, 1, rn, lam)
                arc_spin[ai] = cur_spin[i]
                arc_spin[aj] = cur_spin[j]
                arc_used[ai] = 1
                arc_used[aj] = 1
                _union(parent, cur_arc[i], cur_arc[j])
                _union(parent, cur_arc[i], ai)
                _union(parent, cur_arc[i], aj)
                cur_arc[i] = ai
                cur_arc[j] = aj
            else:
                a0 = _arc_op(c, k, 0, rn, lam)
                op_below[c, k] = cur_arc[loc]
                if t == OP_SITE_FLIP:
                    arc_spin[a0] = -cur_spin[loc]
                else:
                    arc_spin[a0] = cur_spin[loc]
                arc_used[a0] = 1
                # site vertices terminate worldlines: no union
                cur_arc[loc] = a0
                cur_spin[loc] = arc_spin[a0]
        for s in range(n_sites):
            top_arc[c, s] = cur_arc[s]
            top_spin[c, s] = cur_spin[s]

    # --- bra-side stack walks (bond 0 innermost): only sigma2 layers act
    for c in range(r):
        for s in range(n_sites):
            ca = c * n_sites + s
            csp = state[c, s]
            for t_idx in range(inc_count[s]):
                b = inc_bonds[s, t_idx]
                if sector[c, b] == SECTOR_S2:
                    pos = 0 if bond_sites[b, 0] == s else 1
                    s_mid1 = _arc_slot(c, b, 0 + pos, op_arc_end, n_bonds)
                    s_mid2 = _arc_slot(c, b, 2 + pos, op_arc_end, n_bonds)
                    s_bout = _arc_slot(c, b, 6 + pos, op_arc_end, n_bonds)
                    # Kronecker junction: rank-4 equality at this site; the
                    # bra line passes through with its value unchanged
                    _union(parent, s_mid1, s_mid2)
                    _union(parent, s_mid1, ca)
                    _union(parent, s_mid1, s_bout)
                    arc_spin[s_bout] = csp
                    arc_used[s_bout] = 1
                    ca = s_bout
            bra_outer[c, s] = ca
            uslices[c, s] = csp

    # --- ket-side stack walks (bond 0 innermost)
    for c in range(r):
        for s in range(n_sites):
            ca = top_arc[c, s]
            csp = top_spin[c, s]
            for t_idx in range(inc_count[s]):
                b = inc_bonds[s, t_idx]
                pos = 0 if bond_sites[b, 0] == s else 1
                s_mid1 = _arc_slot(c, b, 0 + pos, op_arc_end, n_bonds)
                s_mid2 = _arc_slot(c, b, 2 + pos, op_arc_end, n_bonds)
                w = wlab[c, b]
                alpha_in[c, b, pos] = ca
                if sector[c, b] == SECTOR_S1:
                    arc_spin[s_mid1] = w * csp
                    arc_spin[s_mid2] = csp
                    ca = s_mid2
                else:
                    # junction equality: w * (ket value) == (bra value)
                    if verify != 0:
                        s_bout = _arc_slot(c, b, 6 + pos, op_arc_end, n_bonds)
                        if arc_spin[s_bout] != w * csp:
                            return ERR_JUNCTION_MISMATCH
                    s_kout = _arc_slot(c, b, 4 + pos, op_arc_end, n_bonds)
                    arc_spin[s_mid1] = w * csp
                    arc_spin[s_mid2] = w * csp
                    arc_spin[s_kout] = csp
                    arc_used[s_kout] = 1
                    ca = s_kout
                arc_used[s_mid1] = 1
                arc_used[s_mid2] = 1
            ket_outer[c, s] = ca

    # --- W-box unions per insertion (branch-dependent)
    for c in range(r):
        for b in range(n_bonds):
            a_in_i = alpha_in[c, b, 0]
            a_in_j = alpha_in[c, b, 1]
            a_out_i = _arc_slot(c, b, 0, op_arc_end, n_bonds)
            a_out_j = _arc_slot(c, b, 1, op_arc_end, n_bonds)
            if sector[c, b] == SECTOR_S1:
                b_in_i = a_out_i
                b_in_j = a_out_j
                b_out_i = _arc_slot(c, b, 2, op_arc_end, n_bonds)
                b_out_j = _arc_slot(c, b, 3, op_arc_end, n_bonds)
            else:
                b_in_i = _arc_slot(c, b, 2, op_arc_end, n_bonds)
                b_in_j = _arc_slot(c, b, 3, op_arc_end, n_bonds)
                b_out_i = _arc_slot(c, b, 4, op_arc_end, n_bonds)
                b_out_j = _arc_slot(c, b, 5, op_arc_end, n_bonds)
            br_alpha = branches[c, b, 0]
            br_beta = branches[c, b, 1]
            if br_alpha == BRANCH_A:
                _union(parent, a_in_i, a_out_j)
                _union(parent, a_in_j, a_out_i)
            else:
                _union(parent, a_in_i, a_out_i)
                _union(parent, a_in_j, a_out_j)
            if br_beta == BRANCH_A:
                _union(parent, b_in_i, b_out_j)
                _union(parent, b_in_j, b_out_i)
            else:
                _union(parent, b_in_i, b_out_i)
                _union(parent, b_in_j, b_out_j)
            if br_alpha != br_beta:
                # mixed branches: all eight box legs join one cluster
                _union(parent, a_in_i, a_in_j)
                _union(parent, a_in_i, a_out_i)
                _union(parent, a_in_i, a_out_j)
                _union(parent, a_in_i, b_in_i)
                _union(parent, a_in_i, b_in_j)
                _union(parent, a_in_i, b_out_i)
                _union(parent, a_in_i, b_out_j)

    # --- slice wiring per topology
    for g in range(r):
        ck = (g + 1) % r if topo == TOPO_JOINED else g
        for s in range(n_sites):
            if verify != 0 and arc_spin[bra_outer[g, s]] != arc_spin[ket_outer[ck, s]]:
                return ERR_SLICE_MISMATCH
            _union(parent, bra_outer[g, s], ket_outer[ck, s])

    return ERR_OK


@njit(cache=True, nogil=True)
def _flip_clusters(parent, arc_spin, arc_used, flip_mark, rng):
    """Independent fair coin per cluster root; flip member arc spins."""
    n_arcs = parent.shape[0]
    for a in range(n_arcs):
        if arc_used[a] != 0 and parent[a] == a:
            flip_mark[a] = 1 if _pcg_coin(rng) else 0
    for a in range(n_arcs):
        if arc_used[a] != 0:
            if flip_mark[_find(parent, a)] != 0:
                arc_spin[a] = -arc_spin[a]


@njit(cache=True, nogil=True)
def _write_back(r, bond_sites, state, op_type, op_loc, sector, wlab,
                parent, arc_spin, op_below, alpha_in, verify):
    """Fold flipped arc spins back into the stored configuration."""
    n_sites = state.shape[1]
    n_bonds = bond_sites.shape[0]
    lam = op_type.shape[1]
    rn = r * n_sites
    op_arc_end = rn + 2 * r * lam
    for c in range(r):
        for s in range(n_sites):
            state[c, s] = arc_spin[c * n_sites + s]
        for k in range(lam):
            t = op_type[c, k]
            if t == OP_SITE_DIAG or t == OP_SITE_FLIP:
                below = arc_spin[op_below[c, k]]
                above = arc_spin[_arc_op(c, k, 0, rn, lam)]
                op_type[c, k] = OP_SITE_DIAG if below == above else OP_SITE_FLIP
        for b in range(n_bonds):
            w_i = arc_spin[alpha_in[c, b, 0]] * arc_spin[_arc_slot(c, b, 0, op_arc_end, n_bonds)]
            if verify != 0:
                w_j = arc_spin[alpha_in[c, b, 1]] * arc_spin[_arc_slot(c, b, 1, op_arc_end, n_bonds)]
                if w_i != w_j:
                    return ERR_WLABEL_MISMATCH
            wlab[c, b] = w_i
    return ERR_OK


# -------------------------------------------------------------- sector moves
@njit(cache=True, nogil=True)
def _sector_pass(r, bond_sites, inc_bonds, inc_count, state, sector, wlab,
                 topo, p, sector_rule, rng, counters):
    """Metropolis sector toggles per (replica, bond).

    The bra line carries state[c, s] at every layer and the ket line carries
    the value of the junction slice its stack attaches to, state[ck, s], so
    a toggle (which keeps every stored label fixed) is proposable
    sigma1 -> sigma2 exactly where the would-be junction equality
    w * state[ck, s] == state[c, s] already holds on both bond sites;
    incompatible visits are null updates counted as rejections.
    sigma2 -> sigma1 drops the junction constraint and is always proposable.
    """
    if p <= 0.0 or p >= 1.0:
        return  # sectors frozen at the endpoints
    n_bonds = bond_sites.shape[0]
    if sector_rule == RULE_BALANCED:
        acc12 = 2.0 * p / (1.0 - p)
        acc21 = (1.0 - p) / (2.0 * p)
    else:
        acc12 = (1.0 - p) / (2.0 * p)
        acc21 = 2.0 * p / (1.0 - p)
    for c in range(r):
        ck = (c - 1) % r if topo == TOPO_JOINED else c
        for b in range(n_bonds):
            if sector[c, b] == SECTOR_S1:
                w = wlab[c, b]
                i = bond_sites[b, 0]
                j = bond_sites[b, 1]
                if w * state[ck, i] != state[c, i] or w * state[ck, j] != state[c, j]:
                    counters[CNT_SECTOR_NULL] += 1
                    continue
                counters[CNT_S12_PROP] += 1
                if acc12 >= 1.0 or _pcg_double(rng) < acc12:
                    sector[c, b] = SECTOR_S2
                    counters[CNT_S12_ACC] += 1
            else:
                counters[CNT_S21_PROP] += 1
                if acc21 >= 1.0 or _pcg_double(rng) < acc21:
                    sector[c, b] = SECTOR_S1
                    counters[CNT_S21_ACC] += 1


@njit(cache=True, nogil=True)
def _derive_slices(r, bond_sites, state, sector, wlab, uslices):
    """uslices[c, s] = junction-slice spin of junction c (replica c's bra side).

    The bra line passes through every junction unchanged, so the slice value
    is the stored level-0 state itself."""
    n_sites = state.shape[1]
    for c in range(r):
        for s in range(n_sites):
            uslices[c, s] = state[c, s]


@njit(cache=True, nogil=True)
def _topology_move(r, bond_sites, state, sector, wlab, uslices, topo, counters):
    """JOINED <-> SPLIT swap; weight-neutral exactly when the two junction
    slices agree elementwise, so the move is deterministic (no RNG)."""
    counters[CNT_TOPO_PROP] += 1
    _derive_slices(r, bond_sites, state, sector, wlab, uslices)
    n_sites = state.shape[1]
    for s in range(n_sites):
        if uslices[0, s] != uslices[1, s]:
            return topo
    counters[CNT_TOPO_ACC] += 1
    return TOPO_SPLIT if topo == TOPO_JOINED else TOPO_JOINED


# -------------------------------------------------------------- measurements
@njit(cache=True, nogil=True)
def _measure(r, bond_sites, pair_sites, state, sector, wlab, topo,
             n_ops, uslices, out_row):
    """Fill one raw measurement row (see MEAS_* layout)."""
    n_sites = state.shape[1]
    n_bonds = bond_sites.shape[0]
    n_pairs = pair_sites.shape[0]
    for col in range(N_MEAS_COLS):
        out_row[col] = 0
    if r == 1:
        # entry slice == stored state (worldlines close through the stacks)
        m = np.int64(0)
        for s in range(n_sites):
            m += state[0, s]
        out_row[MEAS_M1] = m
        c0 = np.int64(0)
        for q in range(n_pairs):
            c0 += state[0, pair_sites[q, 0]] * state[0, pair_sites[q, 1]]
        out_row[MEAS_C0] = c0
    else:
        _derive_slices(r, bond_sites, state, sector, wlab, uslices)
        m0 = np.int64(0)
        m1 = np.int64(0)
        qq = np.int64(0)
        for s in range(n_sites):
            m0 += uslices[0, s]
            m1 += uslices[1, s]
            qq += uslices[0, s] * uslices[1, s]
        out_row[MEAS_M1] = m0
        out_row[MEAS_M2] = m1
        out_row[MEAS_Q] = qq
        c1 = np.int64(0)
        c2 = np.int64(0)
        for q in range(n_pairs):
            i = pair_sites[q, 0]
            j = pair_sites[q, 1]
            z0 = uslices[0, i] * uslices[0, j]
            z1 = uslices[1, i] * uslices[1, j]
            c1 += z0 + z1
            c2 += z0 * z1
        out_row[MEAS_C1X2] = c1
        out_row[MEAS_C2] = c2
    s2n = np.int64(0)
    for c in range(r):
        for b in range(n_bonds):
            if sector[c, b] == SECTOR_S2:
                s2n += 1
    out_row[MEAS_S2N] = s2n
    out_row[MEAS_TOPO] = topo
    nops = np.int64(0)
    for c in range(r):
        nops += n_ops[c]
    out_row[MEAS_NOPS] = nops


# ------------------------------------------------------------- fused driver
@njit(cache=True, nogil=True)
def run_chunk(r, J, beta, p, sector_rule, purity_mode, cycles, checks_every,
              bond_sites, inc_bonds, inc_count, pair_sites,
              state, op_type, op_loc, sector, wlab, n_ops, topo_box, rng,
              parent, arc_spin, arc_used, flip_mark, op_below, alpha_in,
              branches, top_arc, top_spin, bra_outer, ket_outer, uslices,
              cur_arc, cur_spin, out, counters, sweep_offset):
    """Run out.shape[0] sweeps, one measurement row per sweep.

    One sweep = `cycles` repetitions of (diagonal updates -> branch sampling
    -> arc build -> cluster flips -> write-back -> sector pass -> optional
    topology move), then one measurement. Graph validity is re-verified
    every `checks_every` sweeps (and on the first sweep of the chunk).

    Returns (error_code, max_n_ops_seen).
    """
    n_bonds = bond_sites.shape[0]
    n_sweeps = out.shape[0]
    max_n = np.int64(0)
    for c in range(r):
        if n_ops[c] > max_n:
            max_n = n_ops[c]
    for sweep in range(n_sweeps):
        global_sweep = sweep_offset + sweep
        do_check = 1 if (checks_every > 0 and global_sweep % checks_every == 0) else 0
        for _cycle in range(cycles):
            for c in range(r):
                n_ops[c] = _diagonal_update(c, state, op_type, op_loc, cur_spin,
                                            bond_sites, J, beta, n_ops[c], rng, counters)
                if n_ops[c] > max_n:
                    max_n = n_ops[c]
            _sample_branches(r, n_bonds, branches, rng)
            err = _build_graph(r, bond_sites, inc_bonds, inc_count,
                               state, op_type, op_loc, sector, wlab,
                               topo_box[0], branches,
                               parent, arc_spin, arc_used, op_below, alpha_in,
                               top_arc, top_spin, bra_outer, ket_outer, uslices,
                               cur_arc, cur_spin, do_check)
            if err != ERR_OK:
                return err, max_n
            _flip_clusters(parent, arc_spin, arc_used, flip_mark, rng)
            err = _write_back(r, bond_sites, state, op_type, op_loc, sector, wlab,
                              parent, arc_spin, op_below, alpha_in, do_check)
            if err != ERR_OK:
                return err, max_n
            _sector_pass(r, bond_sites, inc_bonds, inc_count, state, sector, wlab,
                         topo_box[0], p, sector_rule, rng, counters)
            if purity_mode != 0 and r == 2:
                topo_box[0] = _topology_move(r, bond_sites, state, sector, wlab,
                                             uslices, topo_box[0], counters)
        _measure(r, bond_sites, pair_sites, state, sector, wlab, topo_box[0],
                 n_ops, uslices, out[sweep])
        counters[CNT_SWEEPS] += 1
    return ERR_OK, max_n


@njit(cache=True, nogil=True)
def validate_graph(r, bond_sites, inc_bonds, inc_count,
                   state, op_type, op_loc, sector, wlab, topo, branches,
                   parent, arc_spin, arc_used, op_below, alpha_in,
                   top_arc, top_spin, bra_outer, ket_outer, uslices,
                   cur_arc, cur_spin):
    """Full wiring/weight-positivity validation of the stored configuration.

    Builds the arc graph in verify mode (no flips, no RNG) and returns the
    first error code, or ERR_OK.
    """
    return _build_graph(r, bond_sites, inc_bonds, inc_count,
                        state, op_type, op_loc, sector, wlab, topo, branches,
                        parent, arc_spin, arc_used, op_below, alpha_in,
                        top_arc, top_spin, bra_outer, ket_outer, uslices,
                        cur_arc, cur_spin, 1)
