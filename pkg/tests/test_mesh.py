import numpy as np
import pytest

from pfbayes.fem import Discretization
from pfbayes.mesh import VOIDS, MeshError, build, build_dent, build_sent, build_voids, structured_rectangle


def _disk_area_inside_unit_square(center, r, n=4000):
    # midpoint-rule oracle on a fine grid, clipped to the unit square
    g = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(g, g)
    return np.count_nonzero((X - center[0]) ** 2 + (Y - center[1]) ** 2 < r**2) / n**2


class TestSent:
    def test_counts_n2(self):
        m = build_sent(2)
        assert m.n_elements == 4
        assert m.n_nodes == 9
        assert m.h == 0.5

    def test_crack_nodes_n4(self):
        m = build_sent(4)
        xy = m.nodes[m.crack_nodes]
        assert sorted(map(tuple, xy)) == [(0.0, 0.5), (0.25, 0.5), (0.5, 0.5)]

    def test_h_n20(self):
        assert build_sent(20).h == pytest.approx(1 / 20)

    @pytest.mark.parametrize("n", [3, 7, 21])
    def test_odd_rejected(self, n):
        with pytest.raises(MeshError, match="even"):
            build_sent(n)

    def test_boundaries_nonempty(self):
        m = build_sent(8)
        for name in ("top", "bottom", "left", "right"):
            assert len(m.boundary_sets[name]) == 9
        assert np.all(m.nodes[m.boundary_sets["top"], 1] == 1.0)
        assert np.all(m.nodes[m.boundary_sets["bottom"], 1] == 0.0)


class TestDent:
    def test_counts_n1(self):
        m = build_dent(1, strict=False)
        assert (m.n_elements, m.n_nodes) == (200, 231)

    def test_notch_node_count_n2(self):
        m = build_dent(2)
        left = m.crack_nodes[m.nodes[m.crack_nodes, 0] <= 5.0]
        assert len(left) == 11
        assert np.allclose(m.nodes[left, 1], 3.5)
        right = m.crack_nodes[m.nodes[m.crack_nodes, 0] >= 15.0]
        assert np.allclose(m.nodes[right, 1], 5.5)
        assert len(right) == 11

    def test_n8_aligned(self):
        m = build_dent(8)
        assert m.h == 1 / 8
        # divisibility oracle: every notch line is a mesh line
        for v in (3.5, 5.5, 5.0):
            assert float(v * 8).is_integer()
        assert len(m.crack_nodes) == 2 * 41

    def test_misaligned_rejected(self):
        with pytest.raises(MeshError):
            build_dent(1)

    def test_swapped_heights(self):
        m = build_dent(2, left_height=5.5, right_height=3.5)
        left = m.crack_nodes[m.nodes[m.crack_nodes, 0] <= 5.0]
        assert np.allclose(m.nodes[left, 1], 5.5)


class TestVoids:
    def test_deactivated_count_n10(self):
        m = build_voids(10)
        c = m.centroids()
        expected = 0
        for k in range(m.n_elements):
            for (cx, cy), r in VOIDS:
                if (c[k, 0] - cx) ** 2 + (c[k, 1] - cy) ** 2 < r**2:
                    expected += 1
                    break
        assert np.count_nonzero(~m.active) == expected
        assert len(m.crack_nodes) == 0

    def test_n40_scale(self):
        assert build_voids(40).h == pytest.approx(1 / 40)

    def test_zero_radius(self):
        m = build_voids(10, voids=[((0.21, 0.197), 0.0), ((0.7, 0.197), 0.0)])
        assert m.active.all()

    def test_small_n_rejected(self):
        with pytest.raises(MeshError):
            build_voids(8)

    def test_void_area_converges(self):
        # the large void pokes out of the square, so compare with the clipped area
        m = build_voids(80)
        target = sum(_disk_area_inside_unit_square(c, r) for c, r in VOIDS)
        carved = m.element_areas()[~m.active].sum()
        assert abs(carved - target) / target < 0.05

    def test_inactive_nodes_excluded(self):
        m = build_voids(20)
        disc = Discretization(m)
        assert disc.node_mask.sum() < m.n_nodes
        assert disc.n_el == m.active.sum()


class TestInvariants:
    @pytest.mark.parametrize("geometry,n", [("sent", 6), ("dent", 2), ("voids", 12)])
    def test_area_partition(self, geometry, n):
        m = build(geometry, n)
        area = m.element_areas()
        total = 1.0 if geometry != "dent" else 200.0
        assert area.sum() == pytest.approx(total, rel=1e-12)
        assert area[m.active].sum() + area[~m.active].sum() == pytest.approx(total, rel=1e-12)

    @pytest.mark.parametrize("geometry,n", [("sent", 6), ("dent", 2), ("voids", 12)])
    def test_deterministic(self, geometry, n):
        assert build(geometry, n).digest() == build(geometry, n).digest()

    def test_positive_jacobians_and_distinct_nodes(self):
        m = build_voids(16)
        assert all(len(set(e)) == 4 for e in m.elements)
        Discretization(m)  # raises on non-positive Jacobians

    def test_unknown_geometry(self):
        with pytest.raises(MeshError, match="unknown geometry"):
            build("hexagon", 4)

    def test_structured_rectangle_orientation(self):
        m = structured_rectangle(0, 2, 0, 1, 2, 1)
        assert np.all(m.element_areas() > 0)
