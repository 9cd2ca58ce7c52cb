"""Stochastic-series-expansion engine for the TFIM propagation segments.

Weight convention (transverse field fixed to 1): a site-diagonal vertex
carries weight 1, a site-flip vertex weight 1, and a bond-diagonal vertex
weight J(1 + z_i z_j) — zero on antialigned bonds, 2J on aligned ones. Under
this constant-shifted form every cluster flip is weight-neutral, so clusters
flip with probability 1/2, and the energy estimator is

    <H> = -<n_ops>/beta + N + J * n_bonds.

The compiled inner loops live in :mod:`renyiqmc._kernels`; this module owns
the typed views (:class:`Vertex`, :class:`OperatorString`, :class:`LegLinks`)
and the public update operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .ed_oracle import ModelParams
from .lattice import LatticeSpec

__all__ = [
    "Vertex",
    "OperatorString",
    "LegLinks",
    "WiringError",
    "diagonal_update",
    "build_leg_links",
    "cluster_update",
]

_KIND_BY_CODE = {
    K.OP_PAD: "IdentityPad",
    K.OP_SITE_DIAG: "SiteDiag",
    K.OP_SITE_FLIP: "SiteFlip",
    K.OP_BOND_DIAG: "BondDiag",
}
_CODE_BY_KIND = {v: k for k, v in _KIND_BY_CODE.items()}


class WiringError(RuntimeError):
    """Internal consistency panic: the contour's leg wiring is broken."""


@dataclass(frozen=True)
class Vertex:
    """One operator-string slot.

    kind is one of ``IdentityPad``, ``SiteDiag``, ``SiteFlip`` (2 legs, acting
    on ``site``) or ``BondDiag`` (4 legs, acting on ``bond``). SiteFlip is the
    only kind that flips the spin between its in-leg and out-leg.
    """

    kind: str
    site: int | None = None
    bond: int | None = None

    def __post_init__(self):
        if self.kind not in _CODE_BY_KIND:
            raise ValueError(f"unknown vertex kind {self.kind!r}")
        if self.kind in ("SiteDiag", "SiteFlip"):
            if self.site is None or self.bond is not None:
                raise ValueError(f"{self.kind} vertex must carry a site only")
        elif self.kind == "BondDiag":
            if self.bond is None or self.site is not None:
                raise ValueError("BondDiag vertex must carry a bond only")
        elif self.site is not None or self.bond is not None:
            raise ValueError("IdentityPad carries no location")

    @property
    def legs(self) -> int:
        """Leg count: 2 for site vertices, 4 for bond vertices, 0 for pads."""
        if self.kind == "BondDiag":
            return 4
        if self.kind == "IdentityPad":
            return 0
        return 2


@dataclass
class OperatorString:
    """Fixed-cutoff SSE operator sequence for one imaginary-time segment."""

    cutoff: int
    slots: list[Vertex]
    n_ops: int

    def __post_init__(self):
        if len(self.slots) != self.cutoff:
            raise ValueError(
                f"slot count {len(self.slots)} != cutoff {self.cutoff}")
        real = sum(1 for v in self.slots if v.kind != "IdentityPad")
        if real != self.n_ops:
            raise ValueError(f"n_ops {self.n_ops} != non-pad count {real}")

    @classmethod
    def from_arrays(cls, op_type: np.ndarray, op_loc: np.ndarray) -> "OperatorString":
        slots = []
        for t, loc in zip(op_type.tolist(), op_loc.tolist()):
            kind = _KIND_BY_CODE[t]
            if kind == "IdentityPad":
                slots.append(Vertex(kind))
            elif kind == "BondDiag":
                slots.append(Vertex(kind, bond=loc))
            else:
                slots.append(Vertex(kind, site=loc))
        n_ops = sum(1 for v in slots if v.kind != "IdentityPad")
        return cls(cutoff=len(slots), slots=slots, n_ops=n_ops)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        op_type = np.zeros(self.cutoff, dtype=np.uint8)
        op_loc = np.zeros(self.cutoff, dtype=np.int32)
        for k, v in enumerate(self.slots):
            op_type[k] = _CODE_BY_KIND[v.kind]
            if v.kind == "BondDiag":
                op_loc[k] = v.bond
            elif v.kind != "IdentityPad":
                op_loc[k] = v.site
        return op_type, op_loc

    def propagate(self, spins: np.ndarray) -> np.ndarray:
        """Exit configuration from propagating `spins` through all vertices."""
        out = np.asarray(spins, dtype=np.int8).copy()
        for v in self.slots:
            if v.kind == "SiteFlip":
                out[v.site] = -out[v.site]
        return out


def diagonal_update(string: OperatorString, spins: np.ndarray,
                    params: ModelParams, rng: np.ndarray,
                    spec: LatticeSpec, segment_beta: float | None = None) -> OperatorString:
    """One diagonal insert/remove pass over the string's slots.

    Candidates are drawn proportional to maximum vertex weight (site 1, bond
    2J); insertion accepts with min{1, beta*C_tot/(cutoff - n_ops)}, removal
    with the reciprocal expression, C_tot = N + 2*J*n_bonds. Off-diagonal
    vertices only propagate the running configuration. `rng` is a PCG32
    state vector (uint64[2]), advanced in place.
    """
    beta = params.beta if segment_beta is None else segment_beta
    op_type, op_loc = string.to_arrays()
    op_type = op_type.reshape(1, -1)
    op_loc = op_loc.reshape(1, -1)
    state = np.asarray(spins, dtype=np.int8).reshape(1, -1).copy()
    if state.shape[1] != spec.n_sites:
        raise ValueError("spin configuration does not match the lattice")
    cur = np.empty(spec.n_sites, dtype=np.int8)
    counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
    K._diagonal_update(0, state, op_type, op_loc, cur, spec.bond_array(),
                       float(params.J), float(beta), np.int64(string.n_ops),
                       rng, counters)
    return OperatorString.from_arrays(op_type[0], op_loc[0])


# ------------------------------------------------------------------ leg links
@dataclass(frozen=True)
class Leg:
    """One vertex attachment point on a single site's contour line.

    kind names the vertex class: Hamiltonian vertices (``SiteDiag``,
    ``SiteFlip``, ``BondDiag``), channel boxes (``alpha_box``, ``beta_box``),
    the sigma2 equality vertex visited once per line side (``junction_ket``,
    ``junction_bra``), or ``time_circle`` for a line with no attachments.
    key identifies the vertex instance: (replica, slot) for Hamiltonian
    vertices, (replica, bond) for channel vertices. side is "in" (toward the
    preceding link) or "out" (toward the following link).
    """

    site: int
    kind: str
    key: tuple
    side: str


@dataclass
class LegLinks:
    """Doubly linked leg table for one contour configuration.

    ``link[leg]`` is the matched partner leg along the same site line (each
    matched pair is one spin arc, possibly crossing a junction slice); the
    matching is perfect — every leg appears in exactly one pair. ``next_leg``
    / ``prev_leg`` give the doubly linked traversal that alternates matching
    links with vertex crossings (in-leg to out-leg of the same vertex visit),
    so following ``next_leg`` from any leg returns to it.
    """

    legs: list[Leg]
    link: np.ndarray
    next_leg: np.ndarray
    prev_leg: np.ndarray

    @property
    def n_legs(self) -> int:
        return len(self.legs)

    def cycles(self) -> list[list[int]]:
        """Closure cycles of the next_leg permutation (each leg exactly once)."""
        seen = np.zeros(self.n_legs, dtype=bool)
        out = []
        for start in range(self.n_legs):
            if seen[start]:
                continue
            cyc = []
            leg = start
            while not seen[leg]:
                seen[leg] = True
                cyc.append(leg)
                leg = int(self.next_leg[leg])
            if leg != start:
                raise WiringError("next_leg walk re-entered a cycle off its start")
            out.append(cyc)
        return out

    def validate(self) -> None:
        """Panic (WiringError) unless the link table is a perfect matching and
        the traversal is a permutation covering every leg."""
        n = self.n_legs
        if n == 0:
            return
        for arr, name in ((self.link, "link"), (self.next_leg, "next_leg"),
                          (self.prev_leg, "prev_leg")):
            if arr.shape != (n,):
                raise WiringError(f"{name} table has wrong shape")
            if np.any(arr < 0) or np.any(arr >= n):
                raise WiringError(f"dangling {name} entry")
        for leg in range(n):
            partner = int(self.link[leg])
            if partner == leg and self.legs[leg].kind != "time_circle":
                raise WiringError(f"leg {leg} matched to itself")
            if int(self.link[partner]) != leg:
                raise WiringError(f"link not symmetric at leg {leg}")
            if self.legs[partner].site != self.legs[leg].site:
                raise WiringError(f"link at leg {leg} jumps between sites")
            if int(self.prev_leg[int(self.next_leg[leg])]) != leg:
                raise WiringError(f"next/prev inconsistent at leg {leg}")
        self.cycles()


def _site_events(contour, loop_replicas: list[int], site: int) -> list[tuple[str, tuple]]:
    """Vertex visits on `site`'s line, in contour order around one closed loop."""
    events: list[tuple[str, tuple]] = []
    sector = contour.sector_arr
    bonds = contour.spec.bond_array()
    incident = [b for b in range(contour.spec.n_bonds)
                if site in (int(bonds[b, 0]), int(bonds[b, 1]))]
    for c in loop_replicas:
        # bra stack, outer -> inner: sigma2 junction pass-throughs only
        for b in sorted(incident, reverse=True):
            if sector[c, b] == K.SECTOR_S2:
                events.append(("junction_bra", (c, b)))
        # segment, slot order
        for k in range(contour.cutoff):
            t = int(contour.op_type[c, k])
            loc = int(contour.op_loc[c, k])
            if t in (K.OP_SITE_DIAG, K.OP_SITE_FLIP) and loc == site:
                events.append((_KIND_BY_CODE[t], (c, k)))
            elif t == K.OP_BOND_DIAG and site in (int(bonds[loc, 0]), int(bonds[loc, 1])):
                events.append(("BondDiag", (c, k)))
        # ket stack, inner -> outer: alpha box, then (sigma2) the junction
        # spliced between the boxes, then beta box
        for b in sorted(incident):
            events.append(("alpha_box", (c, b)))
            if sector[c, b] == K.SECTOR_S2:
                events.append(("junction_ket", (c, b)))
            events.append(("beta_box", (c, b)))
    return events


def build_leg_links(contour) -> LegLinks:
    """Enumerate every vertex leg and link consecutive legs along each site line.

    The contour closes through the junction slices: with r replicas in the
    joined topology one loop traverses all replicas (junction c feeds replica
    c's bra side; replica c's ket side exits to junction (c-1) mod r), while
    the split topology closes each replica on itself. Channel boxes and
    sigma2 junction vertices appear as leg-bearing vertices exactly like
    Hamiltonian vertices; a site line with no attachments is represented by a
    single time_circle pseudo-vertex whose two legs match each other.
    """
    if contour.topo == K.TOPO_JOINED:
        # junction g receives replica (g+1)'s ket and feeds replica g's bra,
        # so one loop visits the replicas in ascending order
        loops = [list(range(contour.r))]
    else:
        loops = [[c] for c in range(contour.r)]
    legs: list[Leg] = []
    pairs: list[tuple[int, int]] = []
    for loop in loops:
        for site in range(contour.spec.n_sites):
            events = _site_events(contour, loop, site)
            if not events:
                events = [("time_circle", (loop[0], site))]
            first_in = None
            prev_out = None
            for kind, key in events:
                leg_in = len(legs)
                legs.append(Leg(site, kind, key, "in"))
                leg_out = len(legs)
                legs.append(Leg(site, kind, key, "out"))
                if prev_out is None:
                    first_in = leg_in
                else:
                    pairs.append((prev_out, leg_in))
                prev_out = leg_out
            pairs.append((prev_out, first_in))  # wrap arc closing the loop
    n = len(legs)
    link = np.full(n, -1, dtype=np.int64)
    next_leg = np.full(n, -1, dtype=np.int64)
    prev_leg = np.full(n, -1, dtype=np.int64)
    for a, b in pairs:
        link[a] = b
        link[b] = a
        next_leg[a] = b
        prev_leg[b] = a
    for leg in range(n):
        rec = legs[leg]
        if rec.side == "in":
            # crossing the vertex: in-leg -> out-leg of the same visit
            next_leg[leg] = leg + 1
            prev_leg[leg + 1] = leg
    links = LegLinks(legs=legs, link=link, next_leg=next_leg, prev_leg=prev_leg)
    links.validate()
    return links


def cluster_update(contour, links: LegLinks | None, rng: np.ndarray):
    """Swendsen-Wang-style rejection-free cluster pass over the whole contour.

    Decomposes all spin arcs into clusters — bond vertices union their four
    legs, site vertices terminate growth (a flipped terminal toggles
    SiteDiag <-> SiteFlip), W boxes branch per the pre-sampled A/B choices,
    sigma2 junctions union all four of a site's directions — then flips each
    cluster with probability 1/2 and folds the result back into the contour.

    `links` is accepted for contract parity with build_leg_links (the
    compiled path re-derives the same wiring internally); pass None to skip
    the cross-check.
    """
    if links is not None:
        links.validate()
    err = contour._build_flip_writeback(rng)
    if err != K.ERR_OK:
        from .contour import ContourError  # local import: avoid module cycle
        raise ContourError(err, contour)
    return contour
