"""Release acceptance suite: one test per acceptance criterion.

Each ``test_criterion_*`` function enforces one release criterion at its
stated tolerance, so ``pytest -v`` prints one PASS/FAIL line per
criterion.  The heavyweight sampling criterion (the full oracle grid)
runs last and writes a per-cell report to ``acceptance_report.txt`` in
the repository root.

Oracle provenance tags used below:
  [DERIVED] frozen expected value computed by an independent dense
            linear-algebra oracle (see ed_oracle / toy_exact)
  [PAPER]   closed-form expected value checked against the published
            formula it implements
  [TRIVIAL] identity that must hold exactly by construction
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from renyiqmc import _kernels as K
from renyiqmc.contour import dump_contour, equilibrate, init_contour, run_sweeps
from renyiqmc.ed_oracle import (
    FIXTURE_VERSION,
    DensityMatrix,
    ModelParams,
    _zz_values,
    apply_bond_channel,
    apply_full_channel,
    bond_channel_sectors,
    build_hamiltonian,
    counterexample_state,
    dephased_gibbs,
    gibbs_state,
    linear_correlator,
    oracle_diagnostics,
    renyi2_linear_correlator,
)
from renyiqmc.estimators import bin_and_jackknife, binder_transform, odds_transform
from renyiqmc.lattice import build_square_lattice, correlation_distance_pairs
from renyiqmc.runner import (
    RunConfig,
    benchmark_sweep_seconds,
    checkpoint,
    restore,
    run_point,
)
from renyiqmc.scaling_analysis import RatioCurve, collapse_fit
from renyiqmc.tempering import run_tempered_ladder
from toy_exact import assert_joint_matches, collect_joint, exact_joint_r1, key_r1, toy_contour

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURE_PATH = Path(__file__).resolve().parent / "fixtures" / "oracle_grid.json"
REPORT_PATH = REPO_ROOT / "acceptance_report.txt"

GRID_LATTICES = ((2, 2), (2, 3), (3, 3))
GRID_JS = (0.1, 0.3, 0.5)
GRID_PS = (0.2, 0.5, 0.8)
GRID_BETAS = (1.0, 4.0)
N_SEEDS = 20
Z_GATE = 3.0
PASS_FRACTION_GATE = 0.95
RUNTIME_BUDGET_SECONDS = 1800.0
SIGMA_TARGET = 0.005  # sampling-precision target; reported, not gated

# Replica-exchange rung schedules.  Grid cells served by a ladder must be
# literal members of its rung list so measurement rows can be read off
# directly.
JR6 = (0.1, 0.17, 0.24, 0.3, 0.4, 0.5)
P5 = (0.2, 0.35, 0.5, 0.65, 0.8)  # full dephasing column, small lattices
P7 = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)  # 3x3 needs finer spacing
P4LOW = (0.2, 0.3, 0.4, 0.5)  # dephasing arm up to the mid column
P4HIGH = (0.5, 0.6, 0.7, 0.8)  # dephasing arm rooted at the mid column


def _seed_for(*parts) -> int:
    """Deterministic 64-bit seed derived from a structured label."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") or 1


def _chain_jobs(ps, therm, meas, js=GRID_JS):
    return [("chain", J, p, therm, meas) for p in ps for J in js]


def _jladder(p, rungs_j, therm, meas):
    rungs = tuple((j, p) for j in rungs_j)
    served = tuple((J, p) for J in GRID_JS)
    return ("ladder", rungs, therm, meas, served)


def _pladder(J, rungs_p, therm, meas, served_ps=GRID_PS):
    rungs = tuple((J, p) for p in rungs_p)
    served = tuple((J, p) for p in served_ps if p in rungs_p)
    return ("ladder", rungs, therm, meas, served)


# Sampling plan for the r=2 sector ensemble, shaped by measured mixing
# behaviour.  Two slow modes drive the schedule: (a) the cross-slice
# sector pattern relaxes glacially once dephasing is strong, so plain
# chains started from a fresh state plateau away from equilibrium with
# deceptively tight seed scatter; (b) cross-slice disagreement events
# become rare at strong dephasing, so the tail diagnostics need enough
# pooled samples to observe them at their equilibrium rate.  Exchange
# ladders along the dephasing axis, rooted in the fast-mixing weak
# column, cure (a): every rung is refreshed by round trips through the
# bottom rung.  Rung spacing is set by swap acceptance, which tightens
# with bond count (0.15 steps suffice up to 2x3; 3x3 needs 0.10).
# Measured disagreement-event rates size the budgets for (b); the two
# 3x3 cells at (J,p) = (0.5,0.8) sit beyond any budget that fits the
# runtime limit (their equilibrium event rates are ~2e-6 per sweep
# against oracle deficits of ~1e-6, five orders below the sampling
# precision target), so they run as honest plain-chain attempts and are
# expected to land outside the 3-sigma window.  The pass-fraction gate
# absorbs exactly these two.
R2_PLAN = {
    (2, 2, 4.0): [_pladder(J, P5, 4000, 9000) for J in GRID_JS],
    (2, 2, 1.0): [_pladder(J, P5, 4000, 9000) for J in GRID_JS],
    (2, 3, 4.0): [_pladder(J, P5, 5000, 10000) for J in GRID_JS],
    (2, 3, 1.0): _chain_jobs((0.2,), 3000, 9000)
    + [_jladder(0.5, JR6, 2500, 7000), _jladder(0.8, JR6, 2500, 7000)],
    (3, 3, 4.0): [
        _pladder(0.1, P7, 6000, 12000),
        _pladder(0.3, P7, 8000, 16000),
        _pladder(0.5, P4LOW, 4000, 10000, served_ps=(0.2, 0.5)),
        ("chain", 0.5, 0.8, 3000, 8000),
    ],
    (3, 3, 1.0): _chain_jobs((0.2,), 2500, 8000, js=(0.1, 0.3))
    + [
        ("chain", 0.1, 0.5, 10000, 20000),
        ("chain", 0.3, 0.5, 10000, 20000),
        _pladder(0.5, P4LOW, 3500, 8000, served_ps=(0.2, 0.5)),
        _pladder(0.1, P4HIGH, 4000, 12000, served_ps=(0.8,)),
        ("chain", 0.3, 0.8, 6000, 42000),
        ("chain", 0.5, 0.8, 3000, 8000),
    ],
}

# r=1 chains supply the linear correlator C0 for every cell.  The same
# fresh-state plateau affects the single-replica ensemble at small
# volume and strong dephasing, so those cells carry longer warm-ups.
R1_BUDGETS = {4.0: (2000, 8000), 1.0: (1200, 5000)}
R1_OVERRIDES = {
    (2, 2, 1.0): {"ps": (0.5, 0.8), "budget": (12000, 12000)},
    (2, 2, 4.0): {"ps": (0.5, 0.8), "budget": (6000, 8000)},
    (3, 3, 4.0): {"ps": (0.8,), "budget": (6000, 8000)},
}

QUANTITIES = ("C0", "C1", "C2", "R1", "R2")


def _load_fixture_doc() -> dict:
    with open(FIXTURE_PATH, encoding="utf-8") as fh:
        return json.load(fh)


def _oracle_map(doc: dict) -> dict:
    out = {}
    for ent in doc["entries"]:
        key = (ent["Lx"], ent["Ly"], float(ent["beta"]), float(ent["J"]), float(ent["p"]))
        out[key] = ent
    return out


def _reduce_r2(pool: dict, rows: np.ndarray, n_pairs: int) -> None:
    """Append this seed's sample means to the cell pool (rows discarded)."""
    m1 = rows[:, K.MEAS_M1].astype(float)
    m2 = rows[:, K.MEAS_M2].astype(float)
    q = rows[:, K.MEAS_Q].astype(float)
    a = m1 * m1
    b = m2 * m2
    s2 = q * q
    pool["c1"].append(float(rows[:, K.MEAS_C1X2].mean() / (2.0 * n_pairs)))
    pool["c2"].append(float(rows[:, K.MEAS_C2].mean() / n_pairs))
    pool["r1num"].append(float((0.5 * (a * a + b * b)).mean()))
    pool["r1den"].append(float((0.5 * (a + b)).mean()))
    pool["r2num"].append(float((s2 * s2).mean()))
    pool["r2den"].append(float(s2.mean()))


def _pooled_mean(vals) -> tuple[float, float]:
    arr = np.asarray(vals, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def _pooled_binder(nums, dens) -> tuple[float, float]:
    cols = np.column_stack([nums, dens])
    est = bin_and_jackknife(cols, 1, transform=binder_transform, min_bins=16)
    return float(est.value), float(est.stderr)


def _z_score(est: float, err: float, target: float) -> float:
    if err == 0.0:
        return 0.0 if est == target else math.inf
    return (est - target) / err


def _run_grid(pools: dict, sources: dict, n_seeds: int) -> None:
    """Execute the sampling plan, filling per-cell pools of seed means."""
    for (Lx, Ly, beta), jobs in R2_PLAN.items():
        spec = build_square_lattice(Lx, Ly)
        n_pairs = len(correlation_distance_pairs(spec))
        for job in jobs:
            if job[0] == "chain":
                _, J, p, therm, meas = job
                cell = (Lx, Ly, beta, J, p)
                sources[cell] = "chain"
                for k in range(n_seeds):
                    seed = _seed_for("grid-r2", Lx, Ly, beta, J, p, k)
                    ct = init_contour(spec, ModelParams(J=J, beta=beta, p=p), 2, seed)
                    equilibrate(ct, therm)
                    rows = run_sweeps(ct, meas)
                    _reduce_r2(pools[cell], rows, n_pairs)
            else:
                _, rungs, therm, meas, served = job
                for (J, p) in served:
                    sources[(Lx, Ly, beta, J, p)] = f"ladder{len(rungs)}"
                for k in range(n_seeds):
                    seed = _seed_for("grid-ladder", Lx, Ly, beta, repr(rungs), k)
                    res = run_tempered_ladder(
                        spec,
                        beta=beta,
                        rungs=rungs,
                        r=2,
                        seed=seed,
                        therm_sweeps=therm,
                        measure_sweeps=meas,
                        chunk=4,
                    )
                    for (J, p) in served:
                        rows = res.rows[rungs.index((J, p))]
                        _reduce_r2(pools[(Lx, Ly, beta, J, p)], rows, n_pairs)
        # r=1 chains for the linear correlator
        override = R1_OVERRIDES.get((Lx, Ly, beta))
        for J in GRID_JS:
            for p in GRID_PS:
                cell = (Lx, Ly, beta, J, p)
                therm1, meas1 = R1_BUDGETS[beta]
                if override is not None and p in override["ps"]:
                    therm1, meas1 = override["budget"]
                for k in range(n_seeds):
                    seed = _seed_for("grid-r1", Lx, Ly, beta, J, p, k)
                    ct = init_contour(spec, ModelParams(J=J, beta=beta, p=p), 1, seed)
                    equilibrate(ct, therm1)
                    rows = run_sweeps(ct, meas1)
                    pools[cell]["c0"].append(float(rows[:, K.MEAS_C0].mean() / n_pairs))


def _finish_cell(pool: dict) -> dict:
    out = {}
    out["C0"] = _pooled_mean(pool["c0"])
    out["C1"] = _pooled_mean(pool["c1"])
    out["C2"] = _pooled_mean(pool["c2"])
    out["R1"] = _pooled_binder(pool["r1num"], pool["r1den"])
    out["R2"] = _pooled_binder(pool["r2num"], pool["r2den"])
    return out


def _format_report(cell_rows, n_pass, elapsed, err_stats) -> str:
    lines = []
    lines.append("QMC-vs-oracle grid acceptance report")
    lines.append(
        f"generated: {time.strftime('%Y-%m-%d %H:%M:%S')}  "
        f"elapsed: {elapsed:.1f} s (budget {RUNTIME_BUDGET_SECONDS:.0f} s, single-threaded)"
    )
    n_cells = len(cell_rows)
    lines.append(
        f"cells passing all five 3-sigma checks: {n_pass}/{n_cells}"
        f" = {100.0 * n_pass / n_cells:.1f}% (gate: >= {100 * PASS_FRACTION_GATE:.0f}%)"
    )
    lines.append("")
    lines.append(
        f"achieved stderr by quantity over passing cells "
        f"(sampling-precision target {SIGMA_TARGET}; reported, not gated):"
    )
    for name in QUANTITIES:
        med, mx, n_over = err_stats[name]
        lines.append(
            f"  {name}: median {med:.4f}, max {mx:.4f}, cells above target: {n_over}"
        )
    lines.append("")
    header = (
        f"{'cell':>20} {'src':>8} "
        + " ".join(f"{name + ' est':>10} {'z':>7}" for name in QUANTITIES)
        + "  verdict"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for row in cell_rows:
        (Lx, Ly, beta, J, p), src, ests, zs, ok = row
        cell_s = f"{Lx}x{Ly} b={beta:g} J={J:g} p={p:g}"
        body = " ".join(
            f"{ests[name][0]:>10.4f} {zs[name]:>7.2f}" for name in QUANTITIES
        )
        lines.append(f"{cell_s:>20} {src:>8} {body}  {'pass' if ok else 'FAIL'}")
    lines.append("")
    lines.append(
        "notes: at the two 3x3 (J,p)=(0.5,0.8) cells the oracle's cross-slice\n"
        "tail deficits are ~1e-6 -- five orders below the sampling-precision\n"
        "target -- while the equilibrium rate of the disagreement events that\n"
        "carry them is ~2e-6 per sweep, so resolving them would need millions\n"
        "of sweeps per seed, several times the whole runtime budget per cell.\n"
        "A sample that never observes a disagreement event reports exactly the\n"
        "boundary value with zero spread, and the comparison counts that as a\n"
        "failed check rather than masking it with a synthetic error bar; the\n"
        "pass-fraction gate absorbs exactly these two cells.  Other strongly\n"
        "dephased cells are serviced by replica exchange along the dephasing\n"
        "axis (rung spacing set by measured swap acceptance) with budgets\n"
        "sized so pooled disagreement-event counts stay at or above ~5.\n"
        "The sweep kernel releases the GIL, so a multi-core laptop can run\n"
        "seeds in threads; this report was produced strictly serially."
    )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# criterion 2: bond-channel algebra
# --------------------------------------------------------------------------
def test_criterion_2_bond_channel_algebra_exact():
    spec = build_square_lattice(2, 3)
    n = spec.n_sites
    dim = 2**n
    rng = np.random.default_rng(_seed_for("channel-algebra"))
    ps_cycle = (0.0, 0.2, 0.5, 0.8, 1.0)

    def random_state() -> DensityMatrix:
        A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        data = A @ A.conj().T
        data /= np.trace(data).real
        return DensityMatrix(data, n)

    # [TRIVIAL] Kraus completeness: (1-p) I + p P+ + p P- == I
    for bond in spec.bonds:
        g = _zz_values(n, *bond)
        p_plus = np.diag((g > 0).astype(float))
        p_minus = np.diag((g < 0).astype(float))
        for p in ps_cycle:
            total = (1.0 - p) * np.eye(dim) + p * (p_plus + p_minus)
            assert np.max(np.abs(total - np.eye(dim))) <= 1e-12

    # channel action equals its explicit Kraus decomposition [TRIVIAL]
    for k in range(10):
        rho = random_state()
        p = ps_cycle[k % len(ps_cycle)]
        bond = spec.bonds[k % len(spec.bonds)]
        g = _zz_values(n, *bond)
        plus = (g > 0).astype(float)
        out = apply_bond_channel(rho, bond, p)
        kraus_sum = (1.0 - p) * rho.data + p * (
            np.outer(plus, plus) * rho.data
            + np.outer(1.0 - plus, 1.0 - plus) * rho.data
        )
        assert np.max(np.abs(out.data - kraus_sum)) <= 1e-12

    # trace preservation and Hermiticity on 100 random mixed states [TRIVIAL]
    for k in range(100):
        rho = random_state()
        p = ps_cycle[k % len(ps_cycle)]
        out = apply_full_channel(rho, spec, p)
        assert abs(np.trace(out.data) - np.trace(rho.data)) <= 1e-12
        assert np.max(np.abs(out.data - out.data.conj().T)) <= 1e-12

    # bond-order independence: commuting diagonal Kraus factors [TRIVIAL]
    bonds = list(spec.bonds)
    for k in range(5):
        rho = random_state()
        p = 0.37
        reference = None
        for shuffle in range(3):
            order = list(bonds)
            rng.shuffle(order)
            cur = rho
            for bond in order:
                cur = apply_bond_channel(cur, bond, p)
            if reference is None:
                reference = cur.data
            else:
                assert np.max(np.abs(cur.data - reference)) <= 1e-12

    # sector decomposition recombines to the full channel [TRIVIAL]
    for p in (0.2, 0.5, 0.8):
        rho = random_state()
        bond = spec.bonds[0]
        s1, s2 = bond_channel_sectors(rho, bond, p)
        whole = apply_bond_channel(rho, bond, p)
        assert np.max(np.abs((s1 + s2) - whole.data)) <= 1e-12

    # a maximally mixed input is a fixed point [TRIVIAL]
    eye = DensityMatrix(np.eye(dim, dtype=complex) / dim, n)
    out = apply_full_channel(eye, spec, 0.63)
    assert np.max(np.abs(out.data - eye.data)) <= 1e-12


# --------------------------------------------------------------------------
# criterion 3: planted counterexample correlators
# --------------------------------------------------------------------------
def test_criterion_3_planted_counterexample_correlators():
    spec = build_square_lattice(3, 3)
    i, j = correlation_distance_pairs(spec)[0]
    for M in (1, 2, 5, 20):
        rho = counterexample_state(M, spec)
        # [PAPER] the planted family has a vanishing linear correlator ...
        assert abs(linear_correlator(rho, i, j)) <= 1e-12
        # [PAPER] ... while its squared-overlap correlator equals (M-1)/(M+1)
        expected = (M - 1) / (M + 1)
        assert abs(renyi2_linear_correlator(rho, i, j) - expected) <= 1e-12


# --------------------------------------------------------------------------
# criterion 4: exact toy enumeration + sector-swap acceptance law
# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_4_toy_joint_enumeration_and_sector_acceptance():
    # [DERIVED] exact joint distribution of (sector, W, spin) for the
    # decoupled two-site toy at J=0, via dense transfer-matrix enumeration
    ct = toy_contour(1, p=0.45, seed=_seed_for("toy-joint"))
    counts = collect_joint(ct, key_r1, 100, 10_000)  # 1e6 sweeps total
    exact = exact_joint_r1(0.7, 0.45)
    assert_joint_matches(counts, exact, 100, 10_000, z_max=4.0)

    # [DERIVED] sector-swap acceptance min{1, (1-p)/(2p)}:
    # exactly 1 at p=1/3, so every eligible proposal must be accepted
    ct = toy_contour(1, p=1.0 / 3.0, seed=_seed_for("toy-acc-third"))
    run_sweeps(ct, 200_000)
    c = ct.counters
    assert c[K.CNT_S21_PROP] > 0
    assert c[K.CNT_S21_ACC] == c[K.CNT_S21_PROP]

    # ... and 1/2 at p=1/2, within binomial counting error (coin flips
    # against a constant threshold are independent Bernoulli trials)
    ct = toy_contour(1, p=0.5, seed=_seed_for("toy-acc-half"))
    run_sweeps(ct, 200_000)
    c = ct.counters
    prop = int(c[K.CNT_S21_PROP])
    acc = int(c[K.CNT_S21_ACC])
    assert prop > 10_000
    rate = acc / prop
    assert abs(rate - 0.5) <= 4.0 * math.sqrt(0.25 / prop)


# --------------------------------------------------------------------------
# criterion 5: vanishing dephasing reduces to Gibbs purity
# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_5_decoherence_free_purity_matches_gibbs():
    budgets = {(2, 2): (1000, 5000), (2, 3): (1500, 6000), (3, 3): (2500, 8000)}
    n_seeds = 16
    failures = []
    for (Lx, Ly) in GRID_LATTICES:
        spec = build_square_lattice(Lx, Ly)
        therm, meas = budgets[(Lx, Ly)]
        for J in GRID_JS:
            H = build_hamiltonian(spec, J)
            for beta in GRID_BETAS:
                # [DERIVED] dense Gibbs purity oracle
                g = gibbs_state(H, beta)
                target = float(np.real(np.trace(g.data @ g.data)))
                fracs = []
                for k in range(n_seeds):
                    seed = _seed_for("purity-p0", Lx, Ly, beta, J, k)
                    ct = init_contour(
                        spec,
                        ModelParams(J=J, beta=beta, p=0.0),
                        2,
                        seed,
                        purity_mode=True,
                    )
                    equilibrate(ct, therm)
                    rows = run_sweeps(ct, meas)
                    fracs.append(float((rows[:, K.MEAS_TOPO] == K.TOPO_JOINED).mean()))
                est = bin_and_jackknife(
                    np.asarray(fracs), 1, transform=odds_transform, min_bins=16
                )
                z = _z_score(est.value, est.stderr, target)
                if not abs(z) <= Z_GATE:
                    failures.append(
                        f"{Lx}x{Ly} J={J} beta={beta}: purity {est.value:.5f} "
                        f"+- {est.stderr:.5f} vs exact {target:.5f} (z={z:+.2f})"
                    )
    assert not failures, "purity mismatches at p=0:\n" + "\n".join(failures)


# --------------------------------------------------------------------------
# criterion 6: data-collapse machinery recovers planted exponents
# --------------------------------------------------------------------------
def test_criterion_6_collapse_recovers_planted_exponents():
    # [DERIVED] synthetic crossing families with a planted exponent; the
    # fitter must recover nu within 5% for a scan of target exponents
    sizes = (4, 8, 16)
    xs = np.linspace(0.30, 0.42, 13)
    x_c = 0.355
    sigma = 0.005
    for nu in (1.0, 2.0 / 3.0, 1.70):
        rng = np.random.default_rng(_seed_for("collapse", f"{nu:.6f}"))
        curves = []
        for L in sizes:
            u = (xs - x_c) * float(L) ** (1.0 / nu)
            R = 2.0 + np.tanh(u) + rng.normal(0.0, sigma, xs.size)
            curves.append(
                RatioCurve(
                    L=L,
                    points=tuple(
                        (float(x), float(v), sigma) for x, v in zip(xs, R)
                    ),
                )
            )
        fit = collapse_fit(curves, 0.34, nu * 1.25, n_bootstrap=0)
        assert fit.converged
        assert abs(fit.nu - nu) / nu <= 0.05, f"planted nu={nu}, fitted {fit.nu}"


@pytest.mark.skipif(
    os.environ.get("RENYIQMC_STRETCH") != "1",
    reason="hours-long sampled crossing study; set RENYIQMC_STRETCH=1 to run",
)
def test_criterion_6_stretch_sampled_crossing_study():
    """Locate the dephasing-driven crossing from sampled data end to end."""
    J = 0.1
    sizes = (4, 6, 8)
    ps = np.linspace(0.30, 0.42, 7)
    n_seeds = 6
    curves = []
    for L in sizes:
        beta = 2.0 * L
        spec = build_square_lattice(L, L)
        pts = []
        for p in ps:
            nums, dens = [], []
            for k in range(n_seeds):
                seed = _seed_for("stretch", L, f"{p:.4f}", k)
                ct = init_contour(spec, ModelParams(J=J, beta=beta, p=float(p)), 2, seed)
                equilibrate(ct, 4000)
                rows = run_sweeps(ct, 12000)
                m1 = rows[:, K.MEAS_M1].astype(float)
                m2 = rows[:, K.MEAS_M2].astype(float)
                a = m1 * m1
                b = m2 * m2
                nums.append(float((0.5 * (a * a + b * b)).mean()))
                dens.append(float((0.5 * (a + b)).mean()))
            est = bin_and_jackknife(
                np.column_stack([nums, dens]), 1, transform=binder_transform, min_bins=4
            )
            pts.append((float(p), float(est.value), max(float(est.stderr), 1e-6)))
        curves.append(RatioCurve(L=L, points=tuple(pts)))
    fit = collapse_fit(
        curves, 0.355, 1.0, n_bootstrap=100, seed=_seed_for("stretch-fit")
    )
    assert 0.30 <= fit.x_c <= 0.42, f"crossing left the scan window: {fit.x_c}"
    assert 0.8 <= fit.nu <= 1.2, f"fitted exponent out of window: {fit.nu}"


# --------------------------------------------------------------------------
# criterion 7: sweep cost scaling
# --------------------------------------------------------------------------
def test_criterion_7_sweep_cost_scaling():
    # doubling L with beta = 2L should multiply the per-sweep cost by
    # about 2**4; accept a factor-two band around that
    secs = [benchmark_sweep_seconds(L, 0.1, 0.35) for L in (4, 8, 16)]
    assert all(s > 0.0 for s in secs)
    for lo, hi in zip(secs, secs[1:]):
        ratio = hi / lo
        assert 8.0 <= ratio <= 32.0, f"per-doubling cost ratio {ratio:.1f} outside [8, 32]"


# --------------------------------------------------------------------------
# criterion 8: determinism and checkpointing
# --------------------------------------------------------------------------
def test_criterion_8_determinism_and_checkpoint_restore(tmp_path):
    # identical configs with identical seeds must produce byte-identical
    # measurement CSVs and identical summary estimates
    def config(out):
        return RunConfig(
            Lx=2,
            Ly=3,
            J=0.3,
            p=0.2,
            beta=1.0,
            r=2,
            therm_sweeps=300,
            measure_sweeps=1500,
            chains=2,
            seed=90210,
            output_dir=str(out),
            min_bins=8,
        )

    dir_a = run_point(config(tmp_path / "a"))
    dir_b = run_point(config(tmp_path / "b"))
    csvs_a = sorted(f.name for f in dir_a.glob("chain_*.csv"))
    csvs_b = sorted(f.name for f in dir_b.glob("chain_*.csv"))
    assert csvs_a and csvs_a == csvs_b
    for name in csvs_a:
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()
    with open(dir_a / "summary.json", encoding="utf-8") as fh:
        sum_a = json.load(fh)
    with open(dir_b / "summary.json", encoding="utf-8") as fh:
        sum_b = json.load(fh)
    assert sum_a["estimates"] == sum_b["estimates"]

    # checkpoint/restore must reproduce the continuation bit for bit
    spec = build_square_lattice(2, 3)
    params = ModelParams(J=0.3, beta=2.0, p=0.5)
    ct = init_contour(spec, params, 2, _seed_for("checkpoint"))
    run_sweeps(ct, 137)
    ck = checkpoint(ct, tmp_path / "state.ck")
    rows_a = run_sweeps(ct, 100)
    ct2, _ = restore(ck)
    rows_b = run_sweeps(ct2, 100)
    assert np.array_equal(rows_a, rows_b)
    assert dump_contour(ct) == dump_contour(ct2)


# --------------------------------------------------------------------------
# oracle fixture integrity (supports criterion 1)
# --------------------------------------------------------------------------
def test_oracle_fixture_matches_live_recomputation():
    doc = _load_fixture_doc()
    assert doc["fixture_version"] == FIXTURE_VERSION
    oracle = _oracle_map(doc)
    assert len(oracle) == 54
    # [DERIVED] spot-check frozen entries against a live dense recomputation
    for (Lx, Ly, J, beta, p) in ((2, 2, 0.3, 1.0, 0.5), (2, 2, 0.5, 4.0, 0.2)):
        spec = build_square_lattice(Lx, Ly)
        rho = dephased_gibbs(spec, ModelParams(J=J, beta=beta, p=p))
        live = oracle_diagnostics(rho, spec)
        ent = oracle[(Lx, Ly, beta, J, p)]
        for name in ("purity", "C0", "C1", "C2", "R0", "R1", "R2"):
            assert abs(live[name] - ent[name]) <= 1e-10, (name, Lx, Ly, J, beta, p)


# --------------------------------------------------------------------------
# criterion 1: full estimator grid against the dense oracle
# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_1_grid_estimates_match_oracle_within_3sigma():
    oracle = _oracle_map(_load_fixture_doc())
    cells = [
        (Lx, Ly, beta, J, p)
        for (Lx, Ly) in GRID_LATTICES
        for beta in GRID_BETAS
        for J in GRID_JS
        for p in GRID_PS
    ]
    assert set(cells) == set(oracle), "fixture grid does not match the sampling grid"

    pools = {cell: {k: [] for k in ("c0", "c1", "c2", "r1num", "r1den", "r2num", "r2den")} for cell in cells}
    sources = {}
    t0 = time.perf_counter()
    _run_grid(pools, sources, N_SEEDS)
    for cell, pool in pools.items():
        assert all(len(v) == N_SEEDS for v in pool.values()), (
            f"cell {cell} was not fed by exactly one source per seed"
        )

    cell_rows = []
    n_pass = 0
    err_lists = {name: [] for name in QUANTITIES}
    for cell in cells:
        ests = _finish_cell(pools[cell])
        ent = oracle[cell]
        zs = {name: _z_score(*ests[name], float(ent[name])) for name in QUANTITIES}
        ok = all(abs(z) <= Z_GATE for z in zs.values())
        n_pass += ok
        if ok:
            for name in QUANTITIES:
                err_lists[name].append(ests[name][1])
        cell_rows.append((cell, sources[cell], ests, zs, ok))
    elapsed = time.perf_counter() - t0

    err_stats = {}
    for name in QUANTITIES:
        errs = np.asarray(err_lists[name])
        err_stats[name] = (
            float(np.median(errs)),
            float(errs.max()),
            int((errs > SIGMA_TARGET).sum()),
        )

    report = _format_report(cell_rows, n_pass, elapsed, err_stats)
    REPORT_PATH.write_text(report, encoding="utf-8")
    print()
    print(report)

    frac = n_pass / len(cells)
    assert frac >= PASS_FRACTION_GATE, (
        f"only {n_pass}/{len(cells)} cells inside 3 sigma "
        f"(= {100 * frac:.1f}%, gate {100 * PASS_FRACTION_GATE:.0f}%); see {REPORT_PATH}"
    )
    assert elapsed <= RUNTIME_BUDGET_SECONDS, (
        f"grid sampling took {elapsed:.0f} s, over the {RUNTIME_BUDGET_SECONDS:.0f} s budget"
    )
