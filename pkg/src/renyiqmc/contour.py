"""Extended-ensemble contour for Tr(rho) and Tr(rho^2) under bond dephasing.

The sampled object is a closed imaginary-time contour with r in {1, 2}
replicas. Each replica owns one SSE propagation segment (an operator string
for one e^{-betaH} factor) and, per bond, one channel insertion consisting of
two paired W boxes (W in {identity, X_iX_j}, always equal on the pair) in one
of two sectors:

  sigma1 (weight (1-p)/2 per W assignment): both boxes sit in series on the
      ket side of the replica's insertion stack; their product is W^2 = 1,
      so the label is a pure two-fold degeneracy.
  sigma2 (weight p): the insertion activates a Kronecker junction — a rank-4
      equality vertex per bond site — spliced between the same two ket-side
      boxes, while the bra line passes through the junction with its value
      unchanged. The net ket operator is again W^2 = 1; the junction pins
      w * (ket value) == (bra value) at the layer. Both line values are
      layer-independent, so junction slice c always equals replica c's
      stored level-0 state.

Insertion stacks are bond-ordered and flank the junction slices: replica c's
bra-side stack meets junction slice c, its ket-side stack meets junction
slice (c-1) mod r in the joined topology (or its own slice c in the split
topology used for purity estimation). Every reachable configuration has
strictly positive weight; all updates (SSE diagonal, rejection-free clusters,
sector toggles, topology swaps) preserve that.

Sector-move acceptance: the configuration-weight ratio between a sigma2
insertion and the matched sigma1 configuration at equal spins is
p / ((1-p)/2) = 2p/(1-p), so the default "balanced" rule accepts
sigma1->sigma2 with min{1, 2p/(1-p)} and sigma2->sigma1 with
min{1, (1-p)/(2p)}. The widely quoted alternative assigns those two formulas
to the opposite directions; it is available as sector_rule="as_printed" and
demonstrably violates detailed balance on enumerable instances (see the
tests). Both rules agree at p = 1/3 where the ratio is exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import rng as rng_mod
from .ed_oracle import ModelParams
from .lattice import LatticeSpec, build_square_lattice, pair_array
from .sse_engine import OperatorString

__all__ = [
    "Sector",
    "WValue",
    "ChannelInsertion",
    "ContourState",
    "ContourError",
    "SweepDiagnostics",
    "ClusterRule",
    "init_contour",
    "sector_update",
    "sample_branchings",
    "channel_cluster_rules",
    "sweep",
    "run_sweeps",
    "equilibrate",
    "dump_contour",
    "parse_contour",
]

DUMP_FORMAT = "renyiqmc-contour"
DUMP_VERSION = 1

#: sector enum values (string-valued for readable dumps/configs)
S1 = "S1"
S2 = "S2"
Sector = (S1, S2)

W_IDENTITY = "Identity"
W_XX = "XX"
WValue = (W_IDENTITY, W_XX)

ERR_ARRAYS = -1  # malformed state arrays, caught before the compiled checks

_ERR_NAMES = {
    ERR_ARRAYS: "malformed state arrays",
    K.ERR_BOND_ANTIALIGNED: "bond vertex on antialigned spins",
    K.ERR_JUNCTION_MISMATCH: "sigma2 junction four-direction equality violated",
    K.ERR_SLICE_MISMATCH: "junction-slice spins disagree across the seam",
    K.ERR_WLABEL_MISMATCH: "paired W boxes disagree",
}


class ContourError(RuntimeError):
    """Wiring-consistency failure; carries a full plain-text contour dump."""

    def __init__(self, code: int, contour: "ContourState | None" = None,
                 detail: str | None = None):
        self.code = int(code)
        try:
            self.dump = dump_contour(contour) if contour is not None else None
        except Exception:  # a malformed contour must still report cleanly
            self.dump = None
        detail = detail or _ERR_NAMES.get(self.code, f"error code {code}")
        msg = f"contour wiring consistency failure: {detail}"
        if self.dump is not None:
            msg += " (offending contour attached as .dump)"
        super().__init__(msg)


@dataclass(frozen=True)
class ChannelInsertion:
    """One bond's channel insertion on one replica.

    contour_positions gives the two fixed stack layers the W pair occupies,
    as (side, bond-ordered layer) pairs — both on the replica's ket-side
    stack; layers are assigned at init and never move — updates only toggle
    `sector` and `w`. In sector S2 the Kronecker junction is active between
    the two boxes: for each of the bond's sites, the spins on all four
    junction time-directions are equal.
    """

    bond: int
    replica: int
    sector: str
    w: str
    contour_positions: tuple[tuple[str, int], tuple[str, int]]

    def __post_init__(self):
        if self.sector not in Sector:
            raise ValueError(f"sector must be one of {Sector}, got {self.sector!r}")
        if self.w not in WValue:
            raise ValueError(f"w must be one of {WValue}, got {self.w!r}")


@dataclass
class SweepDiagnostics:
    """Move statistics accumulated over one sweep (or one batch of sweeps)."""

    insert_proposals: int
    insert_accepts: int
    remove_proposals: int
    remove_accepts: int
    s12_proposals: int
    s12_accepts: int
    s21_proposals: int
    s21_accepts: int
    sector_nulls: int
    topo_proposals: int
    topo_accepts: int
    n_ops: tuple[int, ...]
    cutoff: int
    max_n_ops: int

    @classmethod
    def from_counter_delta(cls, delta: np.ndarray, n_ops, cutoff, max_n) -> "SweepDiagnostics":
        return cls(
            insert_proposals=int(delta[K.CNT_INS_PROP]),
            insert_accepts=int(delta[K.CNT_INS_ACC]),
            remove_proposals=int(delta[K.CNT_REM_PROP]),
            remove_accepts=int(delta[K.CNT_REM_ACC]),
            s12_proposals=int(delta[K.CNT_S12_PROP]),
            s12_accepts=int(delta[K.CNT_S12_ACC]),
            s21_proposals=int(delta[K.CNT_S21_PROP]),
            s21_accepts=int(delta[K.CNT_S21_ACC]),
            sector_nulls=int(delta[K.CNT_SECTOR_NULL]),
            topo_proposals=int(delta[K.CNT_TOPO_PROP]),
            topo_accepts=int(delta[K.CNT_TOPO_ACC]),
            n_ops=tuple(int(n) for n in np.atleast_1d(n_ops)),
            cutoff=int(cutoff),
            max_n_ops=int(max_n),
        )


@dataclass
class ContourState:
    """Complete state of one Markov chain over the replica contour.

    The array attributes are the authoritative state; `segments`,
    `junction_slices` and `insertions` are typed snapshot views derived on
    access. The chain is strictly sequential and owns all its buffers —
    never share one ContourState between threads.
    """

    spec: LatticeSpec
    params: ModelParams
    r: int
    cutoff: int
    state: np.ndarray  # int8[r, N]
    op_type: np.ndarray  # uint8[r, cutoff]
    op_loc: np.ndarray  # int32[r, cutoff]
    n_ops: np.ndarray  # int64[r]
    sector_arr: np.ndarray  # uint8[r, NB]
    wlab: np.ndarray  # int8[r, NB]
    topo_box: np.ndarray  # int64[1]
    rng_state: np.ndarray  # uint64[2]
    sector_rule: str = "balanced"
    purity_mode: bool = False
    cycles_per_sweep: int = 1
    checks_every: int = 64
    sweep_index: int = 0
    counters: np.ndarray = field(default=None, repr=False)
    _scratch: dict = field(default=None, repr=False)
    _branches: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.r not in (1, 2):
            raise ValueError(f"replica count must be 1 or 2, got {self.r}")
        if self.sector_rule not in ("balanced", "as_printed"):
            raise ValueError(f"unknown sector_rule {self.sector_rule!r}")
        if self.purity_mode and self.r != 2:
            raise ValueError("purity_mode requires r = 2 (topology swaps)")
        if self.counters is None:
            self.counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
        if self._branches is None:
            self._branches = np.zeros((self.r, self.spec.n_bonds, 2), dtype=np.uint8)
        if self._scratch is None:
            self._realloc_scratch()

    # ------------------------------------------------------------ geometry
    @property
    def topo(self) -> int:
        return int(self.topo_box[0])

    @property
    def sector_rule_code(self) -> int:
        return K.RULE_BALANCED if self.sector_rule == "balanced" else K.RULE_AS_PRINTED

    def incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """(inc_bonds, inc_count): per-site incident bond indices, ascending."""
        return self._scratch["inc_bonds"], self._scratch["inc_count"]

    def _realloc_scratch(self):
        n = self.spec.n_sites
        nb = self.spec.n_bonds
        r = self.r
        lam = self.cutoff
        n_arcs = r * n + 2 * r * lam + 8 * r * nb
        bonds = self.spec.bond_array()
        deg = np.zeros(n, dtype=np.int32)
        for b in range(nb):
            deg[bonds[b, 0]] += 1
            deg[bonds[b, 1]] += 1
        max_deg = int(deg.max()) if nb else 0
        inc_bonds = np.zeros((n, max(max_deg, 1)), dtype=np.int32)
        inc_count = np.zeros(n, dtype=np.int32)
        for b in range(nb):  # ascending bond order by construction
            for s in (bonds[b, 0], bonds[b, 1]):
                inc_bonds[s, inc_count[s]] = b
                inc_count[s] += 1
        self._scratch = {
            "bond_sites": bonds,
            "pair_sites": pair_array(self.spec),
            "inc_bonds": inc_bonds,
            "inc_count": inc_count,
            "parent": np.zeros(n_arcs, dtype=np.int32),
            "arc_spin": np.zeros(n_arcs, dtype=np.int8),
            "arc_used": np.zeros(n_arcs, dtype=np.uint8),
            "flip_mark": np.zeros(n_arcs, dtype=np.uint8),
            "op_below": np.zeros((r, lam), dtype=np.int32),
            "alpha_in": np.zeros((r, nb, 2), dtype=np.int32),
            "top_arc": np.zeros((r, n), dtype=np.int32),
            "top_spin": np.zeros((r, n), dtype=np.int8),
            "bra_outer": np.zeros((r, n), dtype=np.int32),
            "ket_outer": np.zeros((r, n), dtype=np.int32),
            "uslices": np.zeros((r, n), dtype=np.int8),
            "cur_arc": np.zeros(n, dtype=np.int32),
            "cur_spin": np.zeros(n, dtype=np.int8),
        }

    def grow_cutoff(self, new_cutoff: int):
        """Extend the operator strings with identity pads (equilibration only)."""
        if new_cutoff <= self.cutoff:
            return
        r, pad = self.r, new_cutoff - self.cutoff
        self.op_type = np.concatenate(
            [self.op_type, np.zeros((r, pad), dtype=np.uint8)], axis=1)
        self.op_loc = np.concatenate(
            [self.op_loc, np.zeros((r, pad), dtype=np.int32)], axis=1)
        self.cutoff = int(new_cutoff)
        self._realloc_scratch()

    # ------------------------------------------------------------ typed views
    @property
    def segments(self) -> tuple[OperatorString, ...]:
        """Snapshot of the r operator strings (one e^{-betaH} factor each)."""
        return tuple(OperatorString.from_arrays(self.op_type[c], self.op_loc[c])
                     for c in range(self.r))

    @property
    def junction_slices(self) -> np.ndarray:
        """int8[r, N]: junction slice c = where replica c's bra meets replica
        (c+1) mod r's ket (joined topology) or its own ket (split)."""
        s = self._scratch
        K._derive_slices(self.r, s["bond_sites"], self.state,
                         self.sector_arr, self.wlab, s["uslices"])
        return s["uslices"].copy()

    @property
    def insertions(self) -> tuple[ChannelInsertion, ...]:
        """Snapshot of all r*NB channel insertions, ordered (replica, bond)."""
        out = []
        for c in range(self.r):
            for b in range(self.spec.n_bonds):
                sec = S1 if self.sector_arr[c, b] == K.SECTOR_S1 else S2
                w = W_IDENTITY if self.wlab[c, b] == K.W_ID else W_XX
                out.append(ChannelInsertion(
                    bond=b, replica=c, sector=sec, w=w,
                    contour_positions=(("ket", b), ("ket", b))))
        return tuple(out)

    @property
    def rng_stream(self) -> np.ndarray:
        """The chain's deterministic generator state (PCG32, uint64[2])."""
        return self.rng_state

    # ------------------------------------------------------------ kernels
    def _kernel_args(self):
        s = self._scratch
        return (s["bond_sites"], s["inc_bonds"], s["inc_count"], s["pair_sites"])

    def _build_flip_writeback(self, rng: np.ndarray, verify: int = 0) -> int:
        """One cluster pass with the currently stored branch assignment."""
        s = self._scratch
        err = K._build_graph(self.r, s["bond_sites"], s["inc_bonds"], s["inc_count"],
                             self.state, self.op_type, self.op_loc,
                             self.sector_arr, self.wlab, self.topo_box[0],
                             self._branches,
                             s["parent"], s["arc_spin"], s["arc_used"],
                             s["op_below"], s["alpha_in"],
                             s["top_arc"], s["top_spin"], s["bra_outer"],
                             s["ket_outer"], s["uslices"],
                             s["cur_arc"], s["cur_spin"], verify)
        if err != K.ERR_OK:
            return err
        K._flip_clusters(s["parent"], s["arc_spin"], s["arc_used"], s["flip_mark"], rng)
        return K._write_back(self.r, s["bond_sites"], self.state, self.op_type,
                             self.op_loc, self.sector_arr, self.wlab,
                             s["parent"], s["arc_spin"], s["op_below"],
                             s["alpha_in"], verify)

    def _check_arrays(self):
        """Array-level sanity: shapes, value ranges, location bounds.

        Runs before the compiled wiring check so that malformed input (a
        tampered dump, a corrupted checkpoint) is refused with a clear error
        instead of reaching the kernels, which index without bounds checks.
        """
        def fail(msg: str):
            raise ContourError(ERR_ARRAYS, self, detail=msg)

        n, nb, r, lam = self.spec.n_sites, self.spec.n_bonds, self.r, self.cutoff
        if self.state.shape != (r, n) or not np.all(np.abs(self.state) == 1):
            fail("slice states must be +/-1 arrays of shape (r, n_sites)")
        if self.op_type.shape != (r, lam) or self.op_loc.shape != (r, lam):
            fail("operator arrays do not match (r, cutoff)")
        if not np.all(self.op_type <= K.OP_BOND_DIAG):
            fail("unknown vertex type code")
        site_ops = (self.op_type == K.OP_SITE_DIAG) | (self.op_type == K.OP_SITE_FLIP)
        bond_ops = self.op_type == K.OP_BOND_DIAG
        if np.any(self.op_loc[site_ops] < 0) or np.any(self.op_loc[site_ops] >= n):
            fail("site vertex location out of range")
        if np.any(self.op_loc[bond_ops] < 0) or np.any(self.op_loc[bond_ops] >= nb):
            fail("bond vertex location out of range")
        real = (self.op_type != K.OP_PAD).sum(axis=1)
        if self.n_ops.shape != (r,) or not np.array_equal(real, self.n_ops):
            fail("n_ops disagrees with the non-pad vertex count")
        if (self.sector_arr.shape != (r, nb)
                or not np.all(np.isin(self.sector_arr, (K.SECTOR_S1, K.SECTOR_S2)))):
            fail("sector table malformed")
        if self.wlab.shape != (r, nb) or not np.all(np.abs(self.wlab) == 1):
            fail("W-label table malformed")
        if self.topo not in (K.TOPO_JOINED, K.TOPO_SPLIT):
            fail("unknown topology flag")
        if self.topo == K.TOPO_SPLIT and not self.purity_mode:
            fail("split topology outside purity mode")

    def validate(self):
        """Full wiring/weight-positivity check; raises ContourError on failure."""
        self._check_arrays()
        s = self._scratch
        err = K.validate_graph(self.r, s["bond_sites"], s["inc_bonds"], s["inc_count"],
                               self.state, self.op_type, self.op_loc,
                               self.sector_arr, self.wlab, self.topo_box[0],
                               self._branches,
                               s["parent"], s["arc_spin"], s["arc_used"],
                               s["op_below"], s["alpha_in"],
                               s["top_arc"], s["top_spin"], s["bra_outer"],
                               s["ket_outer"], s["uslices"],
                               s["cur_arc"], s["cur_spin"])
        if err != K.ERR_OK:
            raise ContourError(err, self)

    def measure_row(self) -> np.ndarray:
        """Raw measurement row (int64[N_MEAS_COLS]) for the current state."""
        s = self._scratch
        row = np.zeros(K.N_MEAS_COLS, dtype=np.int64)
        K._measure(self.r, s["bond_sites"], s["pair_sites"], self.state,
                   self.sector_arr, self.wlab, self.topo_box[0],
                   self.n_ops, s["uslices"], row)
        return row


# ---------------------------------------------------------------- operations
def default_cutoff(spec: LatticeSpec, params: ModelParams) -> int:
    """Initial cutoff comfortably above the expected operator number
    beta * (N + 2*J*NB)."""
    expected = params.beta * (spec.n_sites + 2.0 * params.J * spec.n_bonds)
    return max(8, int(1.3 * expected) + 8)


def cycles_for(spec: LatticeSpec, params: ModelParams) -> int:
    """Cycles per sweep so one sweep's work tracks the spacetime volume
    max{beta, N} * N rather than beta * N (cluster passes cost ~beta*N each)."""
    return max(1, round(max(params.beta, float(spec.n_sites)) / params.beta))


def init_contour(spec: LatticeSpec, params: ModelParams, r: int, seed: int,
                 *, sector_rule: str = "balanced", purity_mode: bool = False,
                 checks_every: int = 64) -> ContourState:
    """Fresh all-spins-up contour: empty operator strings, every insertion
    in sigma1 with W = identity (p < 1) or sigma2 with W = identity (p = 1),
    joined topology; the RNG stream is derived deterministically from seed."""
    if r not in (1, 2):
        raise ValueError(f"replica count must be 1 or 2, got {r}")
    lam = default_cutoff(spec, params)
    n, nb = spec.n_sites, spec.n_bonds
    stream_seed, stream_seq = rng_mod.derive_stream_seeds(seed, 1)[0]
    sector_code = K.SECTOR_S2 if params.p >= 1.0 else K.SECTOR_S1
    contour = ContourState(
        spec=spec,
        params=params,
        r=r,
        cutoff=lam,
        state=np.ones((r, n), dtype=np.int8),
        op_type=np.zeros((r, lam), dtype=np.uint8),
        op_loc=np.zeros((r, lam), dtype=np.int32),
        n_ops=np.zeros(r, dtype=np.int64),
        sector_arr=np.full((r, nb), sector_code, dtype=np.uint8),
        wlab=np.full((r, nb), K.W_ID, dtype=np.int8),
        topo_box=np.array([K.TOPO_JOINED], dtype=np.int64),
        rng_state=rng_mod.pcg32_init(stream_seed, stream_seq),
        sector_rule=sector_rule,
        purity_mode=purity_mode,
        cycles_per_sweep=cycles_for(spec, params),
        checks_every=checks_every,
    )
    contour.validate()
    return contour


def sample_branchings(contour: ContourState, rng: np.ndarray | None = None) -> np.ndarray:
    """Draw one independent fair A/B coin per W box (two per insertion),
    in (replica, bond, box) order; stored on the contour for the next
    cluster update and returned (uint8[r, NB, 2], A=0, B=1)."""
    if rng is None:
        rng = contour.rng_state
    K._sample_branches(contour.r, contour.spec.n_bonds, contour._branches, rng)
    return contour._branches.copy()


@dataclass(frozen=True)
class ClusterRule:
    """Leg-joining directive for one insertion's pair of W boxes.

    Legs are named (box, port, site) with box in {"alpha", "beta"}, port in
    {"in", "out"} (in = segment side), site in {"i", "j"}. `joins` lists the
    pairs united within each box; when `merge_all` is set the eight legs of
    both boxes join a single cluster instead. `toggles_w`: whether flipping
    a resulting cluster toggles the shared W value on both boxes (true only
    for the (A, A) branch pair). In sector S2 the junction additionally
    absorbs all four directions of each bond site into one cluster; that
    equality joining is structural and not part of this directive.
    """

    joins: tuple[tuple[tuple[str, str, str], tuple[str, str, str]], ...]
    merge_all: bool
    toggles_w: bool


def channel_cluster_rules(insertion: ChannelInsertion, branches) -> ClusterRule:
    """Joining topology for one insertion given its two sampled branches.

    branches: the pair for this insertion — any two-element sequence of
    "A"/"B" (or kernel codes 0/1). Cases: (A, A) -> up to two independent
    clusters whose flip toggles W on both boxes coherently; (B, B) -> up to
    two site-line clusters passing straight through; mixed -> all eight legs
    one cluster, W invariant.
    """
    def norm(x) -> str:
        if isinstance(x, str):
            if x.upper() in ("A", "B"):
                return x.upper()
            raise ValueError(f"branch must be 'A' or 'B', got {x!r}")
        return "A" if int(x) == K.BRANCH_A else "B"

    br = tuple(norm(x) for x in branches)
    if len(br) != 2:
        raise ValueError("exactly two branch choices expected (alpha, beta)")
    if br[0] != br[1]:
        return ClusterRule(joins=(), merge_all=True, toggles_w=False)
    joins = []
    for box, branch in zip(("alpha", "beta"), br):
        if branch == "A":
            joins.append(((box, "in", "i"), (box, "out", "j")))
            joins.append(((box, "in", "j"), (box, "out", "i")))
        else:
            joins.append(((box, "in", "i"), (box, "out", "i")))
            joins.append(((box, "in", "j"), (box, "out", "j")))
    return ClusterRule(joins=tuple(joins), merge_all=False,
                       toggles_w=(br == ("A", "A")))


def _acceptances(p: float, rule: str) -> tuple[float, float]:
    """(P_accept sigma1->sigma2, P_accept sigma2->sigma1) before capping."""
    if rule == "balanced":
        return 2.0 * p / (1.0 - p), (1.0 - p) / (2.0 * p)
    return (1.0 - p) / (2.0 * p), 2.0 * p / (1.0 - p)


def sector_update(contour: ContourState, insertion: ChannelInsertion,
                  rng: np.ndarray | None = None) -> ContourState:
    """Metropolis sector toggle for one insertion (all spins held fixed).

    The bra line carries state[c, s] at every stack layer and the ket line
    carries the value of the junction slice its stack attaches to,
    state[ck, s], so sigma1 -> sigma2 is proposable exactly where the
    would-be junction equality w * state[ck, s] == state[c, s] already holds
    on both bond sites; otherwise the visit is a null update counted as a
    rejected proposal. sigma2 -> sigma1 drops the junction constraint and is
    always proposable. At p = 0 sigma2 is never proposed; at p = 1 sigma1 is
    never proposed.
    """
    if rng is None:
        rng = contour.rng_state
    c, b = insertion.replica, insertion.bond
    p = contour.params.p
    counters = contour.counters
    if p <= 0.0 or p >= 1.0:
        counters[K.CNT_SECTOR_NULL] += 1
        return contour
    acc12, acc21 = _acceptances(p, contour.sector_rule)
    bonds = contour.spec.bond_array()
    if contour.sector_arr[c, b] == K.SECTOR_S1:
        ck = (c - 1) % contour.r if contour.topo == K.TOPO_JOINED else c
        w = int(contour.wlab[c, b])
        for pos in range(2):
            s = int(bonds[b, pos])
            if w * int(contour.state[ck, s]) != int(contour.state[c, s]):
                counters[K.CNT_SECTOR_NULL] += 1
                return contour
        counters[K.CNT_S12_PROP] += 1
        if acc12 >= 1.0 or rng_mod.pcg32_double(rng) < acc12:
            contour.sector_arr[c, b] = K.SECTOR_S2
            counters[K.CNT_S12_ACC] += 1
    else:
        counters[K.CNT_S21_PROP] += 1
        if acc21 >= 1.0 or rng_mod.pcg32_double(rng) < acc21:
            contour.sector_arr[c, b] = K.SECTOR_S1
            counters[K.CNT_S21_ACC] += 1
    return contour


def sweep(contour: ContourState, rng: np.ndarray | None = None
          ) -> tuple[ContourState, SweepDiagnostics]:
    """One full Monte Carlo sweep: cycles_per_sweep repetitions of
    (diagonal updates on all segments -> branch sampling -> cluster build ->
    cluster flips -> sector pass -> topology move when enabled), then one
    measurement. Returns the contour and the sweep's move statistics."""
    diag = run_sweeps(contour, 1, rng=rng, _want_diag=True)
    return contour, diag


def run_sweeps(contour: ContourState, n_sweeps: int,
               rng: np.ndarray | None = None, _want_diag: bool = False):
    """Batch driver: n_sweeps sweeps through the fused kernel, one raw
    measurement row per sweep (int64[n_sweeps, N_MEAS_COLS])."""
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    if rng is None:
        rng = contour.rng_state
    s = contour._scratch
    out = np.zeros((n_sweeps, K.N_MEAS_COLS), dtype=np.int64)
    before = contour.counters.copy()
    err, max_n = K.run_chunk(
        contour.r, float(contour.params.J), float(contour.params.beta),
        float(contour.params.p), contour.sector_rule_code,
        1 if contour.purity_mode else 0, contour.cycles_per_sweep,
        contour.checks_every,
        s["bond_sites"], s["inc_bonds"], s["inc_count"], s["pair_sites"],
        contour.state, contour.op_type, contour.op_loc, contour.sector_arr,
        contour.wlab, contour.n_ops, contour.topo_box, rng,
        s["parent"], s["arc_spin"], s["arc_used"], s["flip_mark"],
        s["op_below"], s["alpha_in"], contour._branches,
        s["top_arc"], s["top_spin"], s["bra_outer"], s["ket_outer"],
        s["uslices"], s["cur_arc"], s["cur_spin"], out, contour.counters,
        contour.sweep_index)
    if err != K.ERR_OK:
        raise ContourError(int(err), contour)
    contour.sweep_index += n_sweeps
    contour._last_max_n = int(max_n)
    if _want_diag:
        delta = contour.counters - before
        return SweepDiagnostics.from_counter_delta(
            delta, contour.n_ops, contour.cutoff, max_n)
    return out


def equilibrate(contour: ContourState, n_sweeps: int, chunk: int = 128) -> int:
    """Thermalization driver: run sweeps in chunks, growing the cutoff to
    >= 1.25x the maximum observed operator number between chunks (growth is
    confined to equilibration; measurement runs keep the cutoff frozen).
    Returns the final cutoff."""
    done = 0
    while done < n_sweeps:
        step = min(chunk, n_sweeps - done)
        run_sweeps(contour, step)
        done += step
        target = int(1.25 * contour._last_max_n) + 1
        if target > contour.cutoff:
            contour.grow_cutoff(target)
    return contour.cutoff


# ------------------------------------------------------------- plain-text dump
def dump_contour(contour: ContourState) -> str:
    """Versioned plain-text serialization (lossless round-trip)."""
    lines = [f"{DUMP_FORMAT} {DUMP_VERSION}"]
    lines.append(f"lattice {contour.spec.Lx} {contour.spec.Ly}")
    p = contour.params
    lines.append(f"params {p.J!r} {p.beta!r} {p.p!r}")
    lines.append(f"r {contour.r}")
    lines.append(f"topo {contour.topo}")
    lines.append(f"sector_rule {contour.sector_rule}")
    lines.append(f"purity_mode {1 if contour.purity_mode else 0}")
    lines.append(f"cycles {contour.cycles_per_sweep}")
    lines.append(f"checks_every {contour.checks_every}")
    lines.append(f"sweep_index {contour.sweep_index}")
    lines.append(f"cutoff {contour.cutoff}")
    lines.append(f"rng {int(contour.rng_state[0])} {int(contour.rng_state[1])}")
    lines.append("nops " + " ".join(str(int(n)) for n in contour.n_ops))
    for c in range(contour.r):
        spins = "".join("+" if v > 0 else "-" for v in contour.state[c])
        lines.append(f"state {c} {spins}")
    for c in range(contour.r):
        ops = [(k, int(contour.op_type[c, k]), int(contour.op_loc[c, k]))
               for k in range(contour.cutoff) if contour.op_type[c, k] != K.OP_PAD]
        lines.append(f"ops {c} {len(ops)}")
        for k, t, loc in ops:
            lines.append(f"{k} {t} {loc}")
    for c in range(contour.r):
        lines.append(f"channels {c}")
        for b in range(contour.spec.n_bonds):
            sec = "S1" if contour.sector_arr[c, b] == K.SECTOR_S1 else "S2"
            w = int(contour.wlab[c, b])
            lines.append(f"{b} {sec} {w:+d}")
    lines.append("counters " + " ".join(str(int(x)) for x in contour.counters))
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_contour(text: str) -> ContourState:
    """Rebuild a ContourState from dump_contour output; refuses unknown
    versions and malformed input."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    it = iter(lines)

    def next_row(what: str) -> str:
        try:
            return next(it)
        except StopIteration:
            raise ValueError(f"contour dump truncated inside {what!r}") from None

    def next_fields(expect: str) -> list[str]:
        ln = next_row(expect)
        parts = ln.split()
        if parts[0] != expect:
            raise ValueError(f"expected {expect!r} line, got {ln!r}")
        return parts[1:]

    head = lines[0].split()
    if len(head) != 2 or head[0] != DUMP_FORMAT:
        raise ValueError("not a contour dump")
    next(it)
    if int(head[1]) != DUMP_VERSION:
        raise ValueError(f"unsupported contour dump version {head[1]}")
    lx, ly = (int(x) for x in next_fields("lattice"))
    spec = build_square_lattice(lx, ly)
    J, beta, p = (float(x) for x in next_fields("params"))
    params = ModelParams(J=J, beta=beta, p=p)
    r = int(next_fields("r")[0])
    topo = int(next_fields("topo")[0])
    sector_rule = next_fields("sector_rule")[0]
    purity_mode = bool(int(next_fields("purity_mode")[0]))
    cycles = int(next_fields("cycles")[0])
    checks_every = int(next_fields("checks_every")[0])
    sweep_index = int(next_fields("sweep_index")[0])
    cutoff = int(next_fields("cutoff")[0])
    rng_words = next_fields("rng")
    rng_state = np.array([int(rng_words[0]), int(rng_words[1])], dtype=np.uint64)
    n_ops = np.array([int(x) for x in next_fields("nops")], dtype=np.int64)
    if len(n_ops) != r:
        raise ValueError("nops count does not match replica count")
    state = np.zeros((r, spec.n_sites), dtype=np.int8)
    for c in range(r):
        fields = next_fields("state")
        if int(fields[0]) != c or len(fields[1]) != spec.n_sites:
            raise ValueError(f"malformed state line for replica {c}")
        state[c] = [1 if ch == "+" else -1 for ch in fields[1]]
    op_type = np.zeros((r, cutoff), dtype=np.uint8)
    op_loc = np.zeros((r, cutoff), dtype=np.int32)
    for c in range(r):
        fields = next_fields("ops")
        if int(fields[0]) != c:
            raise ValueError(f"malformed ops header for replica {c}")
        count = int(fields[1])
        for _ in range(count):
            k, t, loc = (int(x) for x in next_row("ops").split())
            loc_cap = spec.n_bonds if t == K.OP_BOND_DIAG else spec.n_sites
            if not (0 <= k < cutoff) or t not in (1, 2, 3) or not (0 <= loc < loc_cap):
                raise ValueError(f"malformed op line ({k} {t} {loc})")
            op_type[c, k] = t
            op_loc[c, k] = loc
        if int((op_type[c] != K.OP_PAD).sum()) != n_ops[c]:
            raise ValueError(f"replica {c} op count disagrees with nops")
    sector_arr = np.zeros((r, spec.n_bonds), dtype=np.uint8)
    wlab = np.zeros((r, spec.n_bonds), dtype=np.int8)
    for c in range(r):
        fields = next_fields("channels")
        if int(fields[0]) != c:
            raise ValueError(f"malformed channels header for replica {c}")
        for _ in range(spec.n_bonds):
            b_s, sec_s, w_s = next_row("channels").split()
            b, w = int(b_s), int(w_s)
            if not (0 <= b < spec.n_bonds) or sec_s not in ("S1", "S2") or w not in (1, -1):
                raise ValueError(f"malformed channel line ({b_s} {sec_s} {w_s})")
            sector_arr[c, b] = K.SECTOR_S1 if sec_s == "S1" else K.SECTOR_S2
            wlab[c, b] = w
    counters = np.array([int(x) for x in next_fields("counters")], dtype=np.int64)
    if counters.shape[0] != K.N_COUNTERS:
        raise ValueError("counter vector has wrong length")
    next_fields("end")
    contour = ContourState(
        spec=spec, params=params, r=r, cutoff=cutoff, state=state,
        op_type=op_type, op_loc=op_loc, n_ops=n_ops,
        sector_arr=sector_arr, wlab=wlab,
        topo_box=np.array([topo], dtype=np.int64), rng_state=rng_state,
        sector_rule=sector_rule, purity_mode=purity_mode,
        cycles_per_sweep=cycles, checks_every=checks_every,
        sweep_index=sweep_index, counters=counters)
    contour.validate()
    return contour
