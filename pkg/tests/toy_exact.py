"""Exact enumeration of the two-site toy ensemble (shared test oracle).

On the two-site single-bond lattice the equilibrium joint distribution
over (sector, W, slice spins) can be written down exactly from the
channel branch weights and the bare two-site propagator
rho0 = e^{-beta H} with H = -J Z0 Z1 - X0 - X1:

  sector 1, either W:  (1-p)/2 * <bra| rho0 |ket>        (W is a gauge label)
  sector 2, W:         p * <bra| rho0 |ket>, nonzero only when the
                       junction equality ket == W*bra holds on both sites.

At J = 0 the propagator factorizes into per-site e^{beta X} elements
(cosh beta on the diagonal, sinh beta off it); at J > 0 it is taken from
a dense 4x4 matrix exponential.  With r replicas in the joined topology,
replica c propagates from slice (c-1) mod r (its ket) to slice c (its
bra) and the total weight is the product of the replica branch weights.
The r = 1 table asserts trace preservation internally (Z must equal
Tr rho0 for any p); the r = 2 table returns its partition sum so callers
can cross-check Z2 / Z0^2 against the dense-matrix purity.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from renyiqmc import _kernels as K
from renyiqmc.contour import init_contour, run_sweeps
from renyiqmc.ed_oracle import ModelParams
from renyiqmc.lattice import build_square_lattice

TOY_STATES = [(1, 1), (1, -1), (-1, 1), (-1, -1)]

#: basis index of a two-site spin tuple, site 0 in the high bit
_IDX = {(1, 1): 0, (1, -1): 1, (-1, 1): 2, (-1, -1): 3}


@lru_cache(maxsize=None)
def _rho0_matrix(beta: float, J: float) -> np.ndarray:
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    z = np.diag([1.0, -1.0])
    eye = np.eye(2)
    h = (-J * np.kron(z, z) - np.kron(x, eye) - np.kron(eye, x))
    return expm(-beta * h)


def rho0_elem(bra, ket, beta: float, J: float = 0.0) -> float:
    """<bra| e^{-beta H} |ket> on two sites, H = -J Z0 Z1 - X0 - X1."""
    if J == 0.0:
        c, s = math.cosh(beta), math.sinh(beta)
        w = 1.0
        for x, y in zip(bra, ket):
            w *= c if x == y else s
        return w
    return float(_rho0_matrix(beta, J)[_IDX[tuple(bra)], _IDX[tuple(ket)]])


def branch_weight(sector: int, wv: int, bra, ket, beta: float, p: float,
                  J: float = 0.0) -> float:
    if sector == K.SECTOR_S1:
        return 0.5 * (1.0 - p) * rho0_elem(bra, ket, beta, J)
    if ket != tuple(wv * b for b in bra):  # junction equality
        return 0.0
    return p * rho0_elem(bra, ket, beta, J)


def exact_joint_r1(beta: float, p: float, J: float = 0.0) -> dict:
    weights = {}
    for sec in (K.SECTOR_S1, K.SECTOR_S2):
        for wv in (K.W_ID, K.W_XX):
            for t in TOY_STATES:
                weights[(sec, wv, t)] = branch_weight(sec, wv, t, t, beta, p, J)
    z = sum(weights.values())
    trace = sum(rho0_elem(t, t, beta, J) for t in TOY_STATES)
    assert abs(z - trace) < 1e-12 * z  # trace preserved at every p
    if J == 0.0:
        assert abs(z - (2.0 * math.cosh(beta)) ** 2) < 1e-12 * z
    return {k: v / z for k, v in weights.items()}


def exact_joint_r2(beta: float, p: float, J: float = 0.0) -> tuple[dict, float]:
    weights = {}
    for s0 in (K.SECTOR_S1, K.SECTOR_S2):
        for w0 in (K.W_ID, K.W_XX):
            for s1 in (K.SECTOR_S1, K.SECTOR_S2):
                for w1 in (K.W_ID, K.W_XX):
                    for t0 in TOY_STATES:
                        for t1 in TOY_STATES:
                            w = (branch_weight(s0, w0, t0, t1, beta, p, J)
                                 * branch_weight(s1, w1, t1, t0, beta, p, J))
                            weights[(s0, w0, s1, w1, t0, t1)] = w
    z = sum(weights.values())
    return {k: v / z for k, v in weights.items()}, z


def toy_contour(r: int, *, beta: float = 0.7, p: float, seed: int,
                J: float = 0.0, sector_rule: str = "balanced"):
    spec = build_square_lattice(1, 2)
    params = ModelParams(J=J, beta=beta, p=p)
    return init_contour(spec, params, r, seed, sector_rule=sector_rule,
                        checks_every=8)


def collect_joint(contour, key_fn, n_bins: int, bin_len: int) -> dict:
    """Per-sweep occupancy counts, binned: {key: int64[n_bins]}."""
    counts: dict = {}
    for b in range(n_bins):
        for _ in range(bin_len):
            run_sweeps(contour, 1)
            key = key_fn(contour)
            arr = counts.get(key)
            if arr is None:
                arr = counts[key] = np.zeros(n_bins, dtype=np.int64)
            arr[b] += 1
    return counts


def assert_joint_matches(counts: dict, exact: dict, n_bins: int, bin_len: int,
                         z_max: float = 4.0):
    positive = {k for k, q in exact.items() if q > 1e-15}
    impossible = set(counts) - positive
    assert not impossible, f"impossible configurations observed: {impossible}"
    zeros = np.zeros(n_bins, dtype=np.int64)
    report = []
    for key in sorted(positive):
        freq = counts.get(key, zeros) / bin_len
        est = freq.mean()
        err = freq.std(ddof=1) / math.sqrt(n_bins)
        q = exact[key]
        z = (est - q) / err if err > 0 else math.inf * np.sign(est - q or 1)
        report.append(f"{key}: est {est:.5f} exact {q:.5f} z {z:+.2f}")
        assert abs(est - q) <= z_max * err, "\n".join(report)


def key_r1(contour):
    return (int(contour.sector_arr[0, 0]), int(contour.wlab[0, 0]),
            tuple(int(x) for x in contour.state[0]))


def key_r2(contour):
    return (int(contour.sector_arr[0, 0]), int(contour.wlab[0, 0]),
            int(contour.sector_arr[1, 0]), int(contour.wlab[1, 0]),
            tuple(int(x) for x in contour.state[0]),
            tuple(int(x) for x in contour.state[1]))
