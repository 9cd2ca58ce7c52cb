"""Lattice construction, bond ordering, and max-distance pair enumeration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renyiqmc.lattice import (
    build_square_lattice,
    correlation_distance_pairs,
    pair_array,
    site_index,
)


class TestBuildSquareLattice:
    def test_2x2_has_4_bonds_after_duplicate_removal(self):
        spec = build_square_lattice(2, 2)
        assert spec.n_sites == 4
        assert spec.n_bonds == 4
        assert spec.bonds == ((0, 1), (0, 2), (1, 3), (2, 3))

    def test_4x4_has_32_bonds(self):
        spec = build_square_lattice(4, 4)
        assert spec.n_sites == 16
        assert spec.n_bonds == 32

    def test_1x2_single_bond(self):
        spec = build_square_lattice(1, 2)
        assert spec.n_sites == 2
        assert spec.bonds == ((0, 1),)

    def test_single_site_rejected(self):
        with pytest.raises(ValueError):
            build_square_lattice(1, 1)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            build_square_lattice(0, 4)

    def test_bond_order_row_major_x_before_y(self):
        spec = build_square_lattice(3, 3)
        # site 0 emits (0,1) then (0,3); site 1 emits (1,2) then (1,4); ...
        assert spec.bonds[0] == (0, 1)
        assert spec.bonds[1] == (0, 3)
        assert spec.bonds[2] == (1, 2)
        assert spec.bonds[3] == (1, 4)

    def test_endpoints_distinct_and_unique(self):
        for (lx, ly) in [(1, 2), (2, 2), (2, 3), (3, 3), (4, 4), (1, 8)]:
            spec = build_square_lattice(lx, ly)
            assert all(i != j for i, j in spec.bonds)
            assert len(set(spec.bonds)) == spec.n_bonds

    @given(st.integers(min_value=3, max_value=8), st.integers(min_value=3, max_value=8))
    @settings(max_examples=20, deadline=None)
    def test_bond_count_and_coordination(self, lx, ly):
        spec = build_square_lattice(lx, ly)
        assert spec.n_bonds == 2 * lx * ly
        degree = np.zeros(spec.n_sites, dtype=int)
        for i, j in spec.bonds:
            degree[i] += 1
            degree[j] += 1
        assert (degree == 4).all()

    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=2, max_value=8))
    @settings(max_examples=20, deadline=None)
    def test_membership_sum_is_twice_bond_count(self, lx, ly):
        spec = build_square_lattice(lx, ly)
        memberships = sum(1 for b in spec.bonds for _ in b)
        assert memberships == 2 * spec.n_bonds

    @given(st.integers(min_value=2, max_value=7), st.integers(min_value=2, max_value=7))
    @settings(max_examples=20, deadline=None)
    def test_row_translation_is_bond_automorphism(self, lx, ly):
        spec = build_square_lattice(lx, ly)

        def shift(s):
            x, y = s % lx, s // lx
            return ((y + 1) % ly) * lx + x

        original = {tuple(sorted(b)) for b in spec.bonds}
        shifted = {tuple(sorted((shift(i), shift(j)))) for i, j in spec.bonds}
        assert shifted == original

    def test_bond_array_matches_tuples(self):
        spec = build_square_lattice(3, 2)
        arr = spec.bond_array()
        assert arr.dtype == np.int32
        assert [tuple(row) for row in arr] == list(spec.bonds)


class TestSiteIndex:
    def test_row_major_examples(self):
        spec = build_square_lattice(4, 4)
        assert site_index(0, 0, spec) == 0
        assert site_index(3, 0, spec) == 3
        assert site_index(0, 1, spec) == 4

    def test_out_of_range_rejected(self):
        spec = build_square_lattice(4, 4)
        with pytest.raises(ValueError):
            site_index(4, 0, spec)
        with pytest.raises(ValueError):
            site_index(0, -1, spec)

    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=2, max_value=6))
    @settings(max_examples=20, deadline=None)
    def test_bijective(self, lx, ly):
        spec = build_square_lattice(lx, ly)
        seen = {site_index(x, y, spec) for y in range(ly) for x in range(lx)}
        assert seen == set(range(lx * ly))


class TestCorrelationDistancePairs:
    def test_2x2_displacement_1_1(self):
        spec = build_square_lattice(2, 2)
        assert correlation_distance_pairs(spec) == [(0, 3), (1, 2)]

    def test_4x4_has_8_pairs(self):
        spec = build_square_lattice(4, 4)
        pairs = correlation_distance_pairs(spec)
        assert len(pairs) == 8
        # displacement (2,2): e.g. site 0 pairs with site (2 + 2*4) = 10
        assert (0, 10) in pairs

    def test_1x2_single_pair(self):
        spec = build_square_lattice(1, 2)
        assert correlation_distance_pairs(spec) == [(0, 1)]

    def test_odd_lattices_nonempty_and_valid(self):
        for (lx, ly) in [(2, 3), (3, 3)]:
            spec = build_square_lattice(lx, ly)
            pairs = correlation_distance_pairs(spec)
            assert len(pairs) == spec.n_sites  # no dedup when 2d != 0 mod L
            assert all(0 <= i < spec.n_sites and 0 <= j < spec.n_sites for i, j in pairs)
            assert all(i != j for i, j in pairs)

    def test_pair_array_shape(self):
        spec = build_square_lattice(2, 2)
        arr = pair_array(spec)
        assert arr.shape == (2, 2)
        assert arr.dtype == np.int32
