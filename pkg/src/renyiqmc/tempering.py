"""Replica exchange along the coupling J and the channel strength p.

Deep in the ordered region (large J, large beta) the junction pattern of
a single chain freezes: slices align, the junction equality holds almost
everywhere, nearly every insertion sits in sector 2, and the integrated
autocorrelation time of the cross-slice diagnostics grows by orders of
magnitude.  Lowering p does not open an escape route — at strong
coupling the whole p axis is ordered — but lowering J does: in the
small-J column the slices disorder and every weld pattern re-randomizes
within a few sweeps.  A ladder of chains whose rungs interpolate in J
(and, when useful, in p) restores mixing by carrying configurations on
round trips through the disordered end.

The exchange move is exact and cheap.  A configuration's statistical
weight factorizes as

    w(C; J, p) = J^{nb(C)} * p^{n2(C)} * ((1 - p) / 2)^{n1(C)} * w0(C),

where nb counts diagonal bond operators (each carries one factor of J),
n2/n1 count sector-2/sector-1 insertions with n1 + n2 = r * NB fixed by
the lattice, and w0 collects every (J, p)-independent factor: site
operators, spins, junction deltas, the topology label, and the padded
operator-string combinatorics (those depend only on each chain's own
cutoff, which travels with the configuration, so they cancel from the
exchange ratio).  Exchanging the (J, p) labels of two configurations
i and j is therefore a Metropolis move with acceptance

    A = min{1, (J_j / J_i)^(nb_i - nb_j)
              * [p_j (1 - p_i) / (p_i (1 - p_j))]^(n2_i - n2_j)},

computable from the operator and sector tables alone.  Because every
other factor cancels, the move preserves each rung's stationary
distribution exactly; the toy-lattice enumeration tests check this
against closed-form joint probabilities for both axes.

Chains at all rungs advance with the ordinary sweep kernel; a swap pass
alternates even and odd neighbour pairs along the rung sequence.  All
chains share one operator-string cutoff, sized for the largest rung and
re-grown between thermalization chunks exactly like a single chain's
warm-up (measurement keeps it frozen), so a configuration sized at the
small-J end never saturates after swapping to the large-J end.
Measurement rows are credited to the rung — the (J, p) pair — not to
the underlying chain object, so per-rung row arrays look exactly like
single-chain output and feed the same estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from renyiqmc import _kernels as K
from renyiqmc import rng as rng_mod
from renyiqmc.contour import (ContourState, default_cutoff, init_contour,
                              run_sweeps)
from renyiqmc.ed_oracle import ModelParams
from renyiqmc.lattice import LatticeSpec

__all__ = ["LadderResult", "run_tempered_ladder", "swap_log_ratio"]

#: during thermalization the shared cutoff grows to this multiple of the
#: largest observed operator count, mirroring a single chain's warm-up
GROW_FACTOR = 1.25


@dataclass
class LadderResult:
    """Per-rung measurement rows plus swap statistics.

    Attributes
    ----------
    rungs : tuple of (J, p) pairs
        The rung parameters, in the order given to the driver.
    rows : list of ndarray
        One int64[measure_sweeps, N_MEAS_COLS] array per rung, aligned
        with `rungs`; same layout as single-chain `run_sweeps` output.
    swap_attempts, swap_accepts : ndarray
        int64[n_rungs - 1], counts for each adjacent pair (k, k + 1)
        over both thermalization and measurement.
    """

    rungs: tuple
    rows: list
    swap_attempts: np.ndarray
    swap_accepts: np.ndarray

    def rows_for(self, J: float, p: float) -> np.ndarray:
        for (j, q), arr in zip(self.rungs, self.rows):
            if j == J and q == p:
                return arr
        raise KeyError(f"no rung at (J, p) = ({J!r}, {p!r})")

    def swap_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.swap_accepts / np.maximum(self.swap_attempts, 1)


def swap_log_ratio(rung_lo, rung_hi, counts_lo, counts_hi) -> float:
    """log of the weight ratio for exchanging the rung labels of two chains.

    `rung_lo`/`rung_hi` are (J, p) pairs; `counts_lo`/`counts_hi` are the
    corresponding chains' (bond-operator count, sector-2 count).  Positive
    means the exchange raises the joint weight (always accepted).
    """
    (j_lo, p_lo), (j_hi, p_hi) = rung_lo, rung_hi
    (nb_lo, n2_lo), (nb_hi, n2_hi) = counts_lo, counts_hi
    ln_a = 0.0
    if j_lo != j_hi:
        ln_a += (nb_lo - nb_hi) * math.log(j_hi / j_lo)
    if p_lo != p_hi:
        lam = math.log(p_hi * (1.0 - p_lo)) - math.log(p_lo * (1.0 - p_hi))
        ln_a += lam * (n2_lo - n2_hi)
    return ln_a


def _counts(contour: ContourState) -> tuple:
    return (int(np.count_nonzero(contour.op_type == K.OP_BOND_DIAG)),
            int(np.count_nonzero(contour.sector_arr == K.SECTOR_S2)))


def run_tempered_ladder(spec: LatticeSpec, *, beta: float, rungs, r: int,
                        seed: int, therm_sweeps: int, measure_sweeps: int,
                        chunk: int = 8, sector_rule: str = "balanced",
                        observer=None) -> LadderResult:
    """Run one replica-exchange ladder and return per-rung rows.

    `rungs` is a sequence of (J, p) pairs; adjacent entries are the swap
    pairs, so order them along a sensible interpolation path.  Every
    rung advances `chunk` sweeps between swap passes.  Rows from the
    thermalization phase are discarded; the measurement phase
    contributes exactly `measure_sweeps` rows per rung.  The run is
    deterministic in `seed`: each rung's chain gets its own derived
    stream and the swap coin flips use one extra stream.  `observer`,
    if given, is called as observer(rung_index, contour) after each
    measurement chunk at that rung (every sweep when chunk = 1), for
    streaming diagnostics that need more than the measurement rows.
    """
    rungs = tuple((float(j), float(p)) for j, p in rungs)
    if len(rungs) < 1:
        raise ValueError("ladder needs at least one rung")
    for j, p in rungs:
        if j <= 0.0:
            raise ValueError(f"ladder rungs need J > 0, got {j}")
        if not 0.0 < p < 1.0:
            raise ValueError(f"ladder rungs need p strictly in (0, 1), got {p}")
    if len(set(rungs)) != len(rungs):
        raise ValueError("ladder rungs must be distinct")
    if therm_sweeps < 0 or measure_sweeps < 1:
        raise ValueError("need therm_sweeps >= 0 and measure_sweeps >= 1")
    if chunk < 1:
        raise ValueError("chunk must be >= 1")

    n_rungs = len(rungs)
    streams = rng_mod.derive_stream_seeds(seed, n_rungs + 1)
    swap_rng = rng_mod.pcg32_init(*streams[n_rungs])
    rung_params = [ModelParams(J=j, beta=beta, p=p) for j, p in rungs]
    contours = [init_contour(spec, rung_params[k], r, streams[k][0],
                             sector_rule=sector_rule)
                for k in range(n_rungs)]
    cutoff = max(default_cutoff(spec, prm) for prm in rung_params)
    for ct in contours:
        ct.grow_cutoff(cutoff)

    attempts = np.zeros(n_rungs - 1, dtype=np.int64)
    accepts = np.zeros_like(attempts)
    buffers = [[] for _ in range(n_rungs)]

    def swap_pass(parity: int) -> None:
        for k in range(parity, n_rungs - 1, 2):
            attempts[k] += 1
            ln_a = swap_log_ratio(rungs[k], rungs[k + 1],
                                  _counts(contours[k]),
                                  _counts(contours[k + 1]))
            if ln_a >= 0.0 or rng_mod.pcg32_double(swap_rng) < math.exp(ln_a):
                accepts[k] += 1
                contours[k], contours[k + 1] = contours[k + 1], contours[k]
                contours[k].params = rung_params[k]
                contours[k + 1].params = rung_params[k + 1]

    parity = 0
    done_therm = 0
    while done_therm < therm_sweeps:
        step = min(chunk, therm_sweeps - done_therm)
        for ct in contours:
            run_sweeps(ct, step)
        done_therm += step
        swap_pass(parity)
        parity ^= 1
        target = GROW_FACTOR * max(ct._last_max_n for ct in contours)
        if target > cutoff:
            cutoff = int(target) + 1
            for ct in contours:
                ct.grow_cutoff(cutoff)
    done = 0
    while done < measure_sweeps:
        step = min(chunk, measure_sweeps - done)
        for k, ct in enumerate(contours):
            buffers[k].append(run_sweeps(ct, step))
            if observer is not None:
                observer(k, ct)
        done += step
        swap_pass(parity)
        parity ^= 1

    rows = [np.concatenate(b, axis=0) if len(b) > 1 else b[0] for b in buffers]
    return LadderResult(rungs=rungs, rows=rows, swap_attempts=attempts,
                        swap_accepts=accepts)
