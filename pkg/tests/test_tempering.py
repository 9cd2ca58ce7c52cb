"""Replica-exchange ladder: exact stationary law, determinism, mixing payoff.

The central checks drive two-rung ladders on the two-site toy lattice —
one pair differing in p, one differing in J — with a swap attempt after
every sweep, and compare each rung's full joint distribution over
(sector, W, slice spins) against the closed-form enumeration; any error
in either factor of the swap acceptance would distort both rungs'
marginals.  [DERIVED]
"""

import math

import numpy as np
import pytest

from renyiqmc import _kernels as K
from renyiqmc.contour import init_contour, run_sweeps
from renyiqmc.ed_oracle import ModelParams, dephased_gibbs, oracle_diagnostics
from renyiqmc.estimators import correlation_distance_pairs
from renyiqmc.lattice import build_square_lattice
from renyiqmc.tempering import run_tempered_ladder, swap_log_ratio

from toy_exact import assert_joint_matches, exact_joint_r2, key_r2


def make_joint_observer(n_rungs, n_bins, bin_len, key_fn):
    """Observer collecting per-rung binned occupancy counts, keyed by key_fn."""
    counts = [dict() for _ in range(n_rungs)]
    seen = [0] * n_rungs

    def observe(k, contour):
        b = seen[k] // bin_len
        seen[k] += 1
        key = key_fn(contour)
        arr = counts[k].get(key)
        if arr is None:
            arr = counts[k][key] = np.zeros(n_bins, dtype=np.int64)
        arr[b] += 1

    return counts, observe


class TestSwapLogRatio:
    def test_matches_brute_force_weight_ratio(self):
        # w(nb, n2; J, p) = J^nb * p^n2 * ((1-p)/2)^(slots - n2); the exchange
        # ratio the driver uses must equal the one computed from these weights.
        slots = 12
        lo, hi = (0.25, 0.3), (0.6, 0.7)

        def logw(nb, n2, jp):
            j, p = jp
            return (nb * math.log(j) + n2 * math.log(p)
                    + (slots - n2) * math.log((1.0 - p) / 2.0))

        for nb_lo, n2_lo in ((40, 0), (55, 3), (71, 12)):
            for nb_hi, n2_hi in ((38, 0), (90, 5), (130, 12)):
                direct = (logw(nb_lo, n2_lo, hi) + logw(nb_hi, n2_hi, lo)
                          - logw(nb_lo, n2_lo, lo) - logw(nb_hi, n2_hi, hi))
                got = swap_log_ratio(lo, hi, (nb_lo, n2_lo), (nb_hi, n2_hi))
                assert got == pytest.approx(direct, abs=1e-12)

    def test_sign_convention(self):
        # Moving the operator-rich, sector-2-rich configuration to the larger
        # (J, p) raises the weight; balanced counts are neutral.
        lo, hi = (0.2, 0.2), (0.5, 0.8)
        assert swap_log_ratio(lo, hi, (80, 10), (30, 2)) > 0
        assert swap_log_ratio(lo, hi, (30, 2), (80, 10)) < 0
        assert swap_log_ratio(lo, hi, (50, 5), (50, 5)) == 0.0

    def test_single_axis_reductions(self):
        # Equal J leaves only the p factor and vice versa.
        p_only = swap_log_ratio((0.3, 0.2), (0.3, 0.7), (99, 4), (12, 9))
        lam = math.log(0.7 * 0.8 / (0.2 * 0.3))
        assert p_only == pytest.approx(lam * (4 - 9), abs=1e-12)
        j_only = swap_log_ratio((0.2, 0.5), (0.45, 0.5), (60, 4), (90, 9))
        assert j_only == pytest.approx((60 - 90) * math.log(0.45 / 0.2),
                                       abs=1e-12)


class TestToyEnumeration:
    @pytest.mark.parametrize("rungs, seed", [
        (((0.5, 0.3), (0.5, 0.8)), 424242),   # p-axis exchange
        (((0.25, 0.6), (0.7, 0.6)), 905905),  # J-axis exchange
    ])
    def test_two_rung_ladder_matches_exact_joint(self, rungs, seed):
        # [DERIVED] two-site lattice, r = 2: each rung's stationary joint
        # must match the closed-form table despite per-sweep swaps.
        beta = 1.2
        n_bins, bin_len = 60, 1000
        spec = build_square_lattice(1, 2)
        counts, observe = make_joint_observer(len(rungs), n_bins, bin_len,
                                              key_r2)
        res = run_tempered_ladder(
            spec, beta=beta, rungs=rungs, r=2, seed=seed,
            therm_sweeps=500, measure_sweeps=n_bins * bin_len, chunk=1,
            observer=observe)
        assert res.swap_attempts.sum() > 0
        assert res.swap_accepts.sum() > 0  # ladder actually exchanges
        for k, (J, p) in enumerate(rungs):
            exact, _ = exact_joint_r2(beta, p, J)
            assert_joint_matches(counts[k], exact, n_bins, bin_len)


class TestLadderMechanics:
    def test_deterministic_in_seed(self):
        spec = build_square_lattice(2, 2)
        kw = dict(beta=2.0, rungs=((0.2, 0.5), (0.5, 0.5)), r=2, seed=99,
                  therm_sweeps=50, measure_sweeps=200, chunk=8)
        a = run_tempered_ladder(spec, **kw)
        b = run_tempered_ladder(spec, **kw)
        for ra, rb in zip(a.rows, b.rows):
            assert np.array_equal(ra, rb)
        assert np.array_equal(a.swap_attempts, b.swap_attempts)
        assert np.array_equal(a.swap_accepts, b.swap_accepts)

    def test_single_rung_equals_plain_chain(self):
        # With one rung there is nothing to swap; from a cold start (no
        # thermalization, so neither path regrows the cutoff) the rows must
        # be bit-identical to an ordinary chain seeded with the rung's
        # derived stream head.
        from renyiqmc import rng as rng_mod

        spec = build_square_lattice(2, 2)
        seed, measure = 1234, 300
        res = run_tempered_ladder(spec, beta=1.0, rungs=((0.3, 0.5),), r=2,
                                  seed=seed, therm_sweeps=0,
                                  measure_sweeps=measure, chunk=8)
        streams = rng_mod.derive_stream_seeds(seed, 2)
        ct = init_contour(spec, ModelParams(J=0.3, beta=1.0, p=0.5), 2,
                          streams[0][0])
        plain = run_sweeps(ct, measure)
        assert np.array_equal(res.rows[0], plain)
        assert res.swap_attempts.shape == (0,)

    def test_rows_for_lookup(self):
        spec = build_square_lattice(2, 2)
        res = run_tempered_ladder(spec, beta=1.0,
                                  rungs=((0.3, 0.2), (0.3, 0.8)), r=2,
                                  seed=3, therm_sweeps=8, measure_sweeps=40,
                                  chunk=8)
        assert res.rows_for(0.3, 0.8).shape == (40, K.N_MEAS_COLS)
        with pytest.raises(KeyError):
            res.rows_for(0.3, 0.5)

    @pytest.mark.parametrize("bad_kw, message", [
        (dict(rungs=()), "at least one rung"),
        (dict(rungs=((0.0, 0.5), (0.3, 0.5))), "J > 0"),
        (dict(rungs=((0.3, 0.0), (0.3, 0.5))), "strictly in"),
        (dict(rungs=((0.3, 0.5), (0.3, 1.0))), "strictly in"),
        (dict(rungs=((0.3, 0.5), (0.3, 0.5))), "distinct"),
        (dict(measure_sweeps=0), "measure_sweeps >= 1"),
        (dict(therm_sweeps=-1), "therm_sweeps >= 0"),
        (dict(chunk=0), "chunk must be >= 1"),
    ])
    def test_validation(self, bad_kw, message):
        spec = build_square_lattice(2, 2)
        kw = dict(beta=1.0, rungs=((0.3, 0.2), (0.3, 0.8)), r=2, seed=1,
                  therm_sweeps=8, measure_sweeps=16, chunk=4)
        kw.update(bad_kw)
        with pytest.raises(ValueError, match=message):
            run_tempered_ladder(spec, **kw)


class TestMixingPayoff:
    def test_strong_coupling_corner_matches_dense_oracle(self):
        # [DERIVED] 2x3 at beta = 4, p = 0.8: a single chain at J >= 0.3 has
        # an autocorrelation time of thousands of sweeps and fails this
        # budget; round trips through the disordered small-J end of the
        # ladder restore mixing for every rung.
        spec = build_square_lattice(2, 3)
        p = 0.8
        ladder_js = (0.1, 0.15, 0.2, 0.25, 0.3, 0.36, 0.43, 0.5)
        res = run_tempered_ladder(spec, beta=4.0,
                                  rungs=[(j, p) for j in ladder_js], r=2,
                                  seed=20240818, therm_sweeps=2000,
                                  measure_sweeps=16000, chunk=4)
        assert (res.swap_rates() > 0.05).all()
        n_pairs = len(correlation_distance_pairs(spec))
        n_bins = 40
        for J in (0.1, 0.3, 0.5):
            oracle = oracle_diagnostics(
                dephased_gibbs(spec, ModelParams(J=J, beta=4.0, p=p)), spec)
            series = res.rows_for(J, p)[:, K.MEAS_C1X2] / (2.0 * n_pairs)
            bins = series.reshape(n_bins, -1).mean(axis=1)
            est = bins.mean()
            err = bins.std(ddof=1) / math.sqrt(n_bins)
            assert abs(est - oracle["C1"]) <= 4.0 * err, (
                f"J={J}: C1 {est:.4f}+-{err:.4f} vs oracle {oracle['C1']:.4f}")
