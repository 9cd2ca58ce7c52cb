"""Periodic Lx x Ly square lattice: sites, nearest-neighbor bonds, index maps.

Sites are labeled row-major: site = y * Lx + x. The bond list is generated by
visiting sites in row-major order and emitting the +x bond before the +y bond
for each site, dropping self-pairs (possible when a dimension is 1) and
duplicate unordered pairs (wrap bonds coincide when a dimension is 2). The
resulting order is deterministic, which fixes the graphical layout of the
dephasing-channel insertions; the channel value itself is bond-order
independent because all its Kraus operators are Z-diagonal and commute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LatticeSpec:
    """Immutable lattice description shared by the QMC engine and the oracle.

    Attributes
    ----------
    Lx, Ly : int
        Linear dimensions (positive).
    n_sites : int
        Lx * Ly.
    bonds : tuple[tuple[int, int], ...]
        Ordered nearest-neighbor bonds; each unordered pair appears exactly
        once and endpoints are distinct.
    """

    Lx: int
    Ly: int
    n_sites: int
    bonds: tuple[tuple[int, int], ...]
    _bond_array: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def bond_array(self) -> np.ndarray:
        """Bonds as an int32 array of shape (n_bonds, 2)."""
        if self._bond_array is None:
            arr = np.array(self.bonds, dtype=np.int32).reshape(self.n_bonds, 2)
            object.__setattr__(self, "_bond_array", arr)
        return self._bond_array


def build_square_lattice(Lx: int, Ly: int) -> LatticeSpec:
    """Construct the periodic square lattice.

    Parameters
    ----------
    Lx, Ly : int
        Dimensions, each >= 1 with Lx * Ly >= 2 (a single site has no bonds
        and the bond channel would be undefined).

    Returns
    -------
    LatticeSpec
        With deterministic row-major bond order (+x before +y per site).
    """
    if not (isinstance(Lx, (int, np.integer)) and isinstance(Ly, (int, np.integer))):
        raise TypeError("Lx and Ly must be integers")
    if Lx < 1 or Ly < 1:
        raise ValueError(f"dimensions must be positive, got {Lx}x{Ly}")
    if Lx * Ly < 2:
        raise ValueError("lattice must contain at least 2 sites (no bonds otherwise)")
    bonds: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for y in range(Ly):
        for x in range(Lx):
            s = y * Lx + x
            for (nx, ny) in (((x + 1) % Lx, y), (x, (y + 1) % Ly)):
                t = ny * Lx + nx
                if s == t:
                    continue  # dimension-1 wrap onto itself
                pair = (min(s, t), max(s, t))
                if pair in seen:
                    continue  # dimension-2 wrap duplicates the forward bond
                seen.add(pair)
                bonds.append(pair)
    return LatticeSpec(Lx=int(Lx), Ly=int(Ly), n_sites=int(Lx * Ly), bonds=tuple(bonds))


def site_index(x: int, y: int, spec: LatticeSpec) -> int:
    """Row-major site index of coordinates (x, y); rejects out-of-range input."""
    if not (0 <= x < spec.Lx and 0 <= y < spec.Ly):
        raise ValueError(f"coordinates ({x},{y}) outside {spec.Lx}x{spec.Ly} lattice")
    return y * spec.Lx + x


def correlation_distance_pairs(spec: LatticeSpec) -> list[tuple[int, int]]:
    """All site pairs at the maximal torus displacement (Lx//2, Ly//2).

    For even dimensions this is the (Lx/2, Ly/2) displacement; for odd
    dimensions the floor is the largest available separation along that
    axis. When the displacement doubled wraps to zero the pair (s, s+d)
    coincides with (s+d, s), so unordered deduplication halves the count
    (e.g. 4x4 -> 8 pairs, 2x2 -> 2 pairs, 1x2 -> the single pair (0, 1)).
    Deterministic sorted order.
    """
    dx, dy = spec.Lx // 2, spec.Ly // 2
    pairs: set[tuple[int, int]] = set()
    for y in range(spec.Ly):
        for x in range(spec.Lx):
            s = y * spec.Lx + x
            t = ((y + dy) % spec.Ly) * spec.Lx + (x + dx) % spec.Lx
            if s == t:
                continue
            pairs.add((min(s, t), max(s, t)))
    return sorted(pairs)


def pair_array(spec: LatticeSpec) -> np.ndarray:
    """Max-distance pairs as an int32 array of shape (n_pairs, 2)."""
    return np.array(correlation_distance_pairs(spec), dtype=np.int32)
