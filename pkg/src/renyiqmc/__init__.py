"""Replica quantum Monte Carlo for bond-dephased transverse-field Ising states.

The package simulates the 2D transverse-field Ising model

    H = -J sum_<ij> Z_i Z_j - sum_i X_i

on an Lx x Ly periodic square lattice, subjected to a bond ZZ-dephasing
channel E[rho] = prod_b [(1 - p/2) rho + (p/2) Z_i Z_j rho Z_i Z_j], and
estimates linear and Renyi-2 diagnostics

    C0 = Tr(rho ZZ) / Tr(rho)
    C1 = Tr(rho^2 ZZ) / Tr(rho^2)
    C2 = Tr(rho ZZ rho ZZ) / Tr(rho^2)

together with summed Binder ratios R0/R1/R2, via a stochastic series
expansion (SSE) sampler extended with per-bond channel sectors, paired W
operators, Kronecker junctions and Swendsen-Wang-style cluster updates.

Modules
-------
lattice           periodic square lattice, bonds, max-distance pairs
ed_oracle         dense exact reference for small systems (N <= 12)
sse_engine        SSE operator strings, diagonal update, cluster machinery
contour           extended-ensemble contour for Tr(rho) / Tr(rho^2)
estimators        diagonal measurements, binning + jackknife errors
scaling_analysis  crossing finder, data collapse, exponent fits
runner            CLI, config, seeding, sweeps, checkpoints
"""

__version__ = "0.1.0"

from .lattice import LatticeSpec, build_square_lattice, correlation_distance_pairs, site_index
from .ed_oracle import (
    DensityMatrix,
    ModelParams,
    apply_bond_channel,
    apply_full_channel,
    build_hamiltonian,
    counterexample_state,
    exact_binder_ratios,
    gibbs_state,
    linear_correlator,
    renyi2_correlator,
    renyi2_linear_correlator,
)

__all__ = [
    "__version__",
    "LatticeSpec",
    "build_square_lattice",
    "site_index",
    "correlation_distance_pairs",
    "DensityMatrix",
    "ModelParams",
    "build_hamiltonian",
    "gibbs_state",
    "apply_bond_channel",
    "apply_full_channel",
    "linear_correlator",
    "renyi2_linear_correlator",
    "renyi2_correlator",
    "exact_binder_ratios",
    "counterexample_state",
]
