"""Dense exact reference for small systems (N <= 12 spins).

Builds the transverse-field Ising Hamiltonian, the Gibbs state e^{-beta H},
applies the bond ZZ-dephasing channel exactly, and evaluates every diagnostic
in closed form. This module is the ground truth that the Monte Carlo engine
is tested against.

Basis convention: tensor-product Z basis with site 0 the least significant
bit of the basis-state integer; z_i(s) = +1 when bit i of s is 0 ("up").
All operators here are real in this basis, so matrices are stored as float64
(a real symmetric matrix is a special Hermitian matrix; complex input is
accepted wherever a DensityMatrix is consumed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeSpec, correlation_distance_pairs

#: Default memory guard: 2^N x 2^N doubles at N=12 is ~134 MB per matrix.
DEFAULT_SITE_CAP = 12

#: Schema version of the fixture JSON emitted by :func:`emit_fixtures`.
FIXTURE_VERSION = 1


@dataclass(frozen=True)
class ModelParams:
    """Model parameters; the transverse field is fixed to 1 by convention.

    Attributes
    ----------
    J : float
        Ising coupling >= 0, in units of the transverse field.
    beta : float
        Inverse temperature > 0.
    p : float
        Decoherence strength per bond, in [0, 1].
    """

    J: float
    beta: float
    p: float

    def __post_init__(self):
        if self.J < 0:
            raise ValueError(f"J must be >= 0, got {self.J}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p must lie in [0, 1], got {self.p}")


@dataclass
class DensityMatrix:
    """Dense density matrix in the Z product basis (site 0 least significant).

    Attributes
    ----------
    data : np.ndarray
        (2^N, 2^N) Hermitian matrix (float64 or complex128).
    n_sites : int
        Number of spins N.
    """

    data: np.ndarray
    n_sites: int

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def purity(self) -> float:
        """Tr(rho^2) (no normalization applied)."""
        d = self.data
        return float(np.sum(d * d.conj().T).real)

    def validate(self, normalized: bool = True) -> None:
        """Assert Hermiticity (1e-12), positivity (>= -1e-10) and trace.

        Raises ValueError on violation.
        """
        d = self.data
        if d.shape != (self.dim, self.dim):
            raise ValueError(f"shape {d.shape} does not match n_sites={self.n_sites}")
        herm = np.max(np.abs(d - d.conj().T))
        if herm > 1e-12:
            raise ValueError(f"not Hermitian: max |rho - rho^dagger| = {herm:.3e}")
        wmin = float(np.linalg.eigvalsh(d if np.iscomplexobj(d) else d.astype(float)).min())
        if wmin < -1e-10:
            raise ValueError(f"not positive semidefinite: min eigenvalue = {wmin:.3e}")
        if normalized and abs(self.trace() - 1.0) > 1e-12:
            raise ValueError(f"trace = {self.trace():.15f} differs from 1")


def _check_cap(n_sites: int, site_cap: int) -> None:
    if n_sites > site_cap:
        raise ValueError(
            f"N={n_sites} exceeds the dense-oracle cap of {site_cap} sites; "
            f"pass site_cap explicitly to override"
        )


def _z_values(n_sites: int, site: int) -> np.ndarray:
    """Vector of z_site(s) = +/-1 over all basis states s."""
    idx = np.arange(2**n_sites)
    return 1.0 - 2.0 * ((idx >> site) & 1)


def _zz_values(n_sites: int, i: int, j: int) -> np.ndarray:
    return _z_values(n_sites, i) * _z_values(n_sites, j)


def build_hamiltonian(spec: LatticeSpec, J: float, site_cap: int = DEFAULT_SITE_CAP) -> np.ndarray:
    """H = -J sum_bonds Z_i Z_j - sum_i X_i as a dense real symmetric matrix."""
    n = spec.n_sites
    _check_cap(n, site_cap)
    dim = 2**n
    H = np.zeros((dim, dim))
    diag = np.zeros(dim)
    for (i, j) in spec.bonds:
        diag -= J * _zz_values(n, i, j)
    H[np.arange(dim), np.arange(dim)] = diag
    idx = np.arange(dim)
    for i in range(n):
        H[idx, idx ^ (1 << i)] -= 1.0
    return H


def gibbs_state(H: np.ndarray, beta: float) -> DensityMatrix:
    """Normalized e^{-beta H} / Tr via eigendecomposition (overflow-shifted)."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if np.max(np.abs(H - H.conj().T)) > 1e-12:
        raise ValueError("Hamiltonian must be Hermitian")
    w, v = np.linalg.eigh(H)
    e = np.exp(-beta * (w - w.min()))
    rho = (v * e) @ v.conj().T
    rho /= np.trace(rho).real
    n_sites = int(round(np.log2(H.shape[0])))
    return DensityMatrix(data=rho, n_sites=n_sites)


def apply_bond_channel(rho: DensityMatrix, bond: tuple[int, int], p: float) -> DensityMatrix:
    """One bond's dephasing: (1 - p/2) rho + (p/2) Z_i Z_j rho Z_i Z_j.

    Kraus form: M0 = sqrt(1-p) * identity, M1 = sqrt(p) * P_plus,
    M2 = sqrt(p) * P_minus with P_pm the Z_iZ_j parity projectors; trace and
    Hermiticity are preserved exactly.
    """
    i, j = bond
    n = rho.n_sites
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"bond {bond} outside lattice with {n} sites")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must lie in [0, 1], got {p}")
    g = _zz_values(n, i, j)
    data = (1 - p / 2) * rho.data + (p / 2) * (g[:, None] * rho.data * g[None, :])
    return DensityMatrix(data=data, n_sites=n)


def apply_full_channel(rho: DensityMatrix, spec: LatticeSpec, p: float) -> DensityMatrix:
    """Sequential application of every bond channel in the fixed bond order.

    The result is bond-order independent (Z-diagonal Kraus operators all
    commute); the fixed order only standardizes the graphical layout.
    """
    out = rho
    for bond in spec.bonds:
        out = apply_bond_channel(out, bond, p)
    return out


def bond_channel_sectors(
    rho: DensityMatrix, bond: tuple[int, int], p: float
) -> tuple[np.ndarray, np.ndarray]:
    """The two weight branches (sigma1, sigma2) of one bond insertion.

    sigma1 = (1-p) * rho. In the sampled ensemble this branch carries a
    two-valued bond label W in {1, X_iX_j} at weight (1-p)/2 each; the two
    W boxes sit in series on the ket line, so their product is W^2 = 1 and
    the label is a pure gauge doubling -- the operator content is rho for
    either value.

    sigma2 = p * (P_plus rho P_plus + P_minus rho P_minus): keep exactly the
    elements rho_{st} whose bond parities agree, g_s = g_t. Eligible (s, t)
    satisfy s|_bond = W * t|_bond for exactly one W in {1, X_iX_j}, which is
    the same label realized as a junction constraint instead of a gauge.

    sigma1 + sigma2 equals the channel output exactly; tests pin this
    algebra because the Monte Carlo contour samples these two branches.
    """
    i, j = bond
    n = rho.n_sites
    d = rho.data
    sigma1 = (1 - p) * d.copy()
    g = _zz_values(n, i, j)
    proj = (g[:, None] == g[None, :])
    sigma2 = p * np.where(proj, d, 0.0)
    return sigma1, sigma2


def linear_correlator(rho: DensityMatrix, i: int, j: int) -> float:
    """C0(i,j) = Tr(rho Z_i Z_j) / Tr(rho); channel-invariant."""
    g = _zz_values(rho.n_sites, i, j)
    d = np.diag(rho.data).real
    return float((d @ g) / d.sum())


def renyi2_linear_correlator(rho: DensityMatrix, i: int, j: int) -> float:
    """C1(i,j) = Tr(rho^2 Z_i Z_j) / Tr(rho^2)."""
    g = _zz_values(rho.n_sites, i, j)
    d2 = np.einsum("sk,ks->s", rho.data, rho.data).real  # diag of rho^2
    tr2 = d2.sum()
    if tr2 <= 0:
        raise ValueError("Tr(rho^2) must be positive")
    return float((d2 @ g) / tr2)


def renyi2_correlator(rho: DensityMatrix, i: int, j: int) -> float:
    """C2(i,j) = Tr(rho Z_iZ_j rho Z_iZ_j) / Tr(rho^2)."""
    n = rho.n_sites
    g = _zz_values(n, i, j)
    d = rho.data
    tr2 = float(np.sum(d * d.conj().T).real)
    if tr2 <= 0:
        raise ValueError("Tr(rho^2) must be positive")
    num = float(np.sum((g[:, None] * d * g[None, :]) * d.conj().T).real)
    return num / tr2


def _magnetization_vector(n_sites: int) -> np.ndarray:
    idx = np.arange(2**n_sites)
    m = np.zeros(2**n_sites)
    for i in range(n_sites):
        m += 1.0 - 2.0 * ((idx >> i) & 1)
    return m


def exact_binder_ratios(rho: DensityMatrix, site_cap: int = DEFAULT_SITE_CAP) -> tuple[float, float, float]:
    """Summed Binder ratios (R0, R1, R2) with all-tuple sums.

    Sums over site tuples include coincident indices (the moments arise as
    powers of total-spin sums). Moments are normalized by Tr(rho^2) for
    R1/R2 and by Tr(rho) for R0:

        R2 = <q^4> / <q^2>^2 under P(s,s') = |rho_{ss'}|^2 / Tr(rho^2),
             q(s,s') = sum_i z_i(s) z_i(s')
        R1 = <m(s)^4> / <m(s)^2>^2 under the same joint weight
        R0 = <m^4> / <m^2>^2 under diag(rho) / Tr(rho)
    """
    n = rho.n_sites
    _check_cap(n, site_cap)
    d = rho.data
    P = (d * d.conj()).real  # |rho_{ss'}|^2
    tr2 = P.sum()
    if tr2 <= 0:
        raise ValueError("Tr(rho^2) must be positive")
    idx = np.arange(2**n)
    zbits = np.empty((2**n, n))
    for i in range(n):
        zbits[:, i] = 1.0 - 2.0 * ((idx >> i) & 1)
    q = zbits @ zbits.T
    q2 = float((P * q**2).sum() / tr2)
    q4 = float((P * q**4).sum() / tr2)
    m = zbits.sum(axis=1)
    m2 = float((P @ (m**2)).sum() / tr2)  # sum_{ss'} P m(s')^2 == symmetric average
    m4 = float((P @ (m**4)).sum() / tr2)
    dd = np.diag(d).real
    tr1 = dd.sum()
    m2_0 = float(dd @ m**2 / tr1)
    m4_0 = float(dd @ m**4 / tr1)
    R2 = q4 / q2**2
    R1 = m4 / m2**2
    R0 = m4_0 / m2_0**2
    return (R0, R1, R2)


def counterexample_state(M: int, spec: LatticeSpec, psi_choice: int = 0) -> DensityMatrix:
    """Diagonal state with C0 = 0 exactly and C1 = (M-1)/(M+1) on the probed pair.

        rho = 1/4 (|0...0><0...0| + |1...1><1...1|)
            + 1/(4M) sum_{a=1..M} (|psi_a><psi_a| + X|psi_a><psi_a|X)

    where the |psi_a> are distinct Z-basis states antialigned on the probed
    pair (the first max-distance pair), chosen so their global-X orbits are
    disjoint from each other and from the ferromagnetic pair. The state is
    weakly Z2-symmetric (X rho X = rho) but the strong symmetry is broken at
    the Renyi-2 level. `psi_choice` seeds the deterministic selection of the
    M representatives.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    n = spec.n_sites
    _check_cap(n, DEFAULT_SITE_CAP)
    dim = 2**n
    i, j = correlation_distance_pairs(spec)[0]
    flip_all = dim - 1
    candidates = []
    taken = set()
    for s in range(dim):
        if ((s >> i) & 1) != ((s >> j) & 1) and s not in taken:
            candidates.append(s)
            taken.add(s)
            taken.add(s ^ flip_all)
    if len(candidates) < M:
        raise ValueError(
            f"lattice admits only {len(candidates)} disjoint antialigned orbits, "
            f"fewer than requested M={M}"
        )
    rng = np.random.default_rng(psi_choice)
    order = rng.permutation(len(candidates))
    chosen = [candidates[k] for k in order[:M]]
    d = np.zeros(dim)
    d[0] += 0.25
    d[flip_all] += 0.25
    for s in chosen:
        d[s] += 1.0 / (4 * M)
        d[s ^ flip_all] += 1.0 / (4 * M)
    return DensityMatrix(data=np.diag(d), n_sites=n)


def oracle_diagnostics(rho: DensityMatrix, spec: LatticeSpec) -> dict:
    """All scalar diagnostics at the max-distance pairs (pair-averaged)."""
    pairs = correlation_distance_pairs(spec)
    c0 = float(np.mean([linear_correlator(rho, i, j) for i, j in pairs]))
    c1 = float(np.mean([renyi2_linear_correlator(rho, i, j) for i, j in pairs]))
    c2 = float(np.mean([renyi2_correlator(rho, i, j) for i, j in pairs]))
    r0, r1, r2 = exact_binder_ratios(rho)
    return {
        "purity": rho.purity(),
        "C0": c0,
        "C1": c1,
        "C2": c2,
        "R0": r0,
        "R1": r1,
        "R2": r2,
    }


def dephased_gibbs(spec: LatticeSpec, params: ModelParams, site_cap: int = DEFAULT_SITE_CAP) -> DensityMatrix:
    """Convenience pipeline: E[e^{-beta H}/Tr] for the given lattice/params."""
    H = build_hamiltonian(spec, params.J, site_cap=site_cap)
    rho = gibbs_state(H, params.beta)
    return apply_full_channel(rho, spec, params.p)


def emit_fixtures(
    path,
    lattices: tuple[tuple[int, int], ...] = ((2, 2), (2, 3), (3, 3)),
    Js: tuple[float, ...] = (0.1, 0.3, 0.5),
    betas: tuple[float, ...] = (1.0, 4.0),
    ps: tuple[float, ...] = (0.2, 0.5, 0.8),
) -> dict:
    """Write the oracle fixture JSON consumed by the QMC test suite.

    Schema: {"fixture_version": int, "entries": [{Lx, Ly, J, beta, p,
    purity, C0, C1, C2, R0, R1, R2}, ...]} with correlators averaged over
    the max-distance pair set.
    """
    from .lattice import build_square_lattice

    entries = []
    for (lx, ly) in lattices:
        spec = build_square_lattice(lx, ly)
        for J in Js:
            for beta in betas:
                for p in ps:
                    params = ModelParams(J=J, beta=beta, p=p)
                    rho = dephased_gibbs(spec, params)
                    row = {"Lx": lx, "Ly": ly, "J": J, "beta": beta, "p": p}
                    row.update(oracle_diagnostics(rho, spec))
                    entries.append(row)
    doc = {"fixture_version": FIXTURE_VERSION, "entries": entries}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return doc
