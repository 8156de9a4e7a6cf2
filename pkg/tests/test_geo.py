"""Grid geometry, point-to-cell linking, and distance matrices."""

import numpy as np
import pytest

from pmfusion.errors import OutOfDomainError
from pmfusion.geo import (
    CTM,
    SAT,
    GridSpec,
    Location,
    coords_array,
    distance_matrix,
    link_points,
)


@pytest.fixture
def grid():
    return GridSpec(origin_x=0.0, origin_y=0.0, cell_km=4.0, n_rows=10, n_cols=12, source_tag=SAT)


class TestGridSpec:
    def test_extent(self, grid):
        assert grid.extent == (0.0, 0.0, 48.0, 40.0)

    def test_cell_of_interior(self, grid):
        assert grid.cell_of(0.1, 0.1) == (0, 0)
        assert grid.cell_of(5.0, 9.0) == (2, 1)

    def test_cell_of_upper_boundary_clips_to_last_cell(self, grid):
        # a point on the far edge belongs to the final row/column
        assert grid.cell_of(48.0, 40.0) == (9, 11)

    def test_cell_of_outside_raises(self, grid):
        with pytest.raises(OutOfDomainError):
            grid.cell_of(-0.001, 5.0)
        with pytest.raises(OutOfDomainError):
            grid.cell_of(5.0, 40.001)

    def test_contains_matches_cell_of(self, grid):
        rng = np.random.default_rng(0)
        for _ in range(500):
            x = rng.uniform(-10, 60)
            y = rng.uniform(-10, 50)
            if grid.contains(x, y):
                grid.cell_of(x, y)
            else:
                with pytest.raises(OutOfDomainError):
                    grid.cell_of(x, y)

    def test_cell_center_round_trip(self, grid):
        rng = np.random.default_rng(1)
        for _ in range(200):
            r = rng.integers(0, grid.n_rows)
            c = rng.integers(0, grid.n_cols)
            x, y = grid.cell_center(int(r), int(c))
            assert grid.cell_of(x, y) == (r, c)

    def test_all_centers_row_major(self, grid):
        centers = grid.all_centers()
        assert centers.shape == (120, 2)
        np.testing.assert_allclose(centers[0], grid.cell_center(0, 0))
        np.testing.assert_allclose(centers[11], grid.cell_center(0, 11))
        np.testing.assert_allclose(centers[12], grid.cell_center(1, 0))

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(0, 0, -1.0, 5, 5, CTM)
        with pytest.raises(ValueError):
            GridSpec(0, 0, 4.0, 0, 5, CTM)


class TestLinking:
    def test_link_points_matches_cell_of(self, grid):
        rng = np.random.default_rng(2)
        pts = [
            Location(f"s{i}", rng.uniform(0, 48), rng.uniform(0, 40))
            for i in range(40)
        ]
        cells = link_points(pts, grid)
        for p, (r, c) in zip(pts, cells):
            assert grid.cell_of(p.x_km, p.y_km) == (r, c)

    def test_link_outside_raises(self, grid):
        with pytest.raises(OutOfDomainError):
            link_points([Location("bad", -5.0, 5.0)], grid)


class TestDistanceMatrix:
    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(3)
        pts = [Location(f"s{i}", *rng.uniform(0, 100, 2)) for i in range(25)]
        d = distance_matrix(pts)
        assert d.shape == (25, 25)
        np.testing.assert_array_equal(np.diag(d), 0.0)
        np.testing.assert_allclose(d, d.T, atol=0)
        assert (d[~np.eye(25, dtype=bool)] > 0).all()

    def test_against_direct_formula(self):
        a = [Location("a", 0.0, 0.0), Location("b", 3.0, 4.0)]
        b = [Location("c", 0.0, 8.0)]
        d = distance_matrix(a, b)
        np.testing.assert_allclose(d[:, 0], [8.0, 5.0])

    def test_triangle_inequality(self):
        rng = np.random.default_rng(4)
        pts = [Location(f"s{i}", *rng.uniform(0, 50, 2)) for i in range(12)]
        d = distance_matrix(pts)
        for i in range(12):
            for j in range(12):
                for k in range(12):
                    assert d[i, j] <= d[i, k] + d[k, j] + 1e-9

    def test_coords_array(self):
        pts = [Location("a", 1.0, 2.0), Location("b", 3.0, 4.0)]
        np.testing.assert_array_equal(coords_array(pts), [[1.0, 2.0], [3.0, 4.0]])
