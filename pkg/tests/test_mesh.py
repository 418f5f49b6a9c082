import json
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivlddmm.errors import DegenerateBBox, NonPositiveOrientation
from ivlddmm.mesh import (SimplicialFamily, build_regular_mesh, face_normals, locate_point,
                          locate_points, prune_mesh, simplex_center, simplex_normals,
                          simplex_volume, simplex_volumes)

TRI = SimplicialFamily([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
TET = SimplicialFamily([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


def test_volumes_by_hand():
    assert simplex_volume(TRI, [0, 1, 2]) == pytest.approx(0.5)
    assert simplex_volume(TET, [0, 1, 2, 3]) == pytest.approx(1 / 6)
    fam = SimplicialFamily([[0, 0], [2, 0], [0, 3]], [[0, 1, 2]])
    assert simplex_volume(fam, [0, 1, 2]) == pytest.approx(3.0)


def test_strict_orientation():
    assert simplex_volume(TRI, [0, 2, 1]) == pytest.approx(-0.5)
    with pytest.raises(NonPositiveOrientation):
        simplex_volume(TRI, [0, 2, 1], strict=True)
    with pytest.raises(NonPositiveOrientation):
        SimplicialFamily(TRI.vertices, [[0, 2, 1]]).validate_orientation()


def test_centers():
    assert np.allclose(simplex_center(TRI, [0, 1, 2]), [1 / 3, 1 / 3])
    assert np.allclose(simplex_center(TET, [0, 1, 2, 3]), [0.25, 0.25, 0.25])
    shifted = TRI.with_vertices(TRI.vertices + [3.0, -2.0])
    assert np.allclose(simplex_center(shifted, [0, 1, 2]), [1 / 3 + 3, 1 / 3 - 2])


def test_unit_triangle_normal():
    n = face_normals(TRI, [0, 1, 2])
    assert np.allclose(n[2], [0.0, 1.0])
    # inward: the normal opposite vertex j points toward j
    for j in range(3):
        mid = TRI.vertices[[k for k in range(3) if k != j]].mean(axis=0)
        assert np.dot(n[j], TRI.vertices[j] - mid) > 0


def test_normals_sum_and_volume_derivative(rng):
    for d in (2, 3):
        x = rng.standard_normal((50, d + 1, d))
        n = simplex_normals(x)
        assert np.abs(n.sum(axis=1)).max() < 1e-12 * np.abs(x).max() ** (d - 1)
        # d|gamma|/dx_j = n_j / d!
        h = 1e-6
        fact = 2 if d == 2 else 6
        for j in range(d + 1):
            for k in range(d):
                xp, xm = x.copy(), x.copy()
                xp[:, j, k] += h
                xm[:, j, k] -= h
                fd = (simplex_volumes(xp) - simplex_volumes(xm)) / (2 * h)
                assert np.allclose(fd, n[:, j, k] / fact, atol=1e-8)


def test_3d_normals_determinant_duality(rng):
    x = rng.standard_normal((4, 3))
    n = face_normals(SimplicialFamily(x, [[0, 1, 2, 3]]), [0, 1, 2, 3])
    for _ in range(100):
        u = rng.standard_normal(3)
        # replacing vertex j by x_j + u changes 6*volume by n_j . u
        for j in range(4):
            y = x.copy()
            y[j] = y[j] + u
            e0 = simplex_volumes(x[None])[0] * 6
            e1 = simplex_volumes(y[None])[0] * 6
            assert e1 - e0 == pytest.approx(n[j] @ u, rel=1e-10, abs=1e-12)


def test_regular_mesh_counts():
    fam = build_regular_mesh(([0, 0], [2, 1]), 1.0)
    assert fam.n_simplices == 4 and fam.n_vertices == 6
    cube = build_regular_mesh(([0, 0, 0], [1, 1, 1]), 1.0)
    assert cube.n_simplices == 6
    assert cube.volumes().sum() == pytest.approx(1.0)
    big = build_regular_mesh(([0, 0, 0], [2, 3, 1]), 0.5)
    assert np.allclose(big.volumes(), 0.5 ** 3 / 6)
    flat = build_regular_mesh(([0, 0], [3, 2]), 0.25)
    assert np.allclose(flat.volumes(), 0.25 ** 2 / 2)
    flat.validate_orientation()
    big.validate_orientation()


def test_regular_mesh_is_conforming():
    # every interior face is shared by exactly two simplices
    for dim in (2, 3):
        fam = build_regular_mesh((np.zeros(dim), np.full(dim, 2.0)), 1.0, dim)
        faces = {}
        for s in fam.simplices:
            for j in range(dim + 1):
                f = tuple(sorted(np.delete(s, j)))
                faces[f] = faces.get(f, 0) + 1
        assert max(faces.values()) == 2


def test_degenerate_bbox():
    with pytest.raises(DegenerateBBox):
        build_regular_mesh(([0, 0], [0, 1]), 0.5)
    with pytest.raises(DegenerateBBox):
        build_regular_mesh(([0, 0], [1, 1]), 0.5, dim=3)


def test_family_validation():
    with pytest.raises(ValueError):
        SimplicialFamily([[0, 0], [1, 0]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        SimplicialFamily([[0, 0], [1, 0], [0, 1]], [[0, 1, 1]])
    with pytest.raises(ValueError):
        SimplicialFamily([[0, 0], [1, 0], [0, np.nan]], [[0, 1, 2]])


def test_locate():
    fam = build_regular_mesh(([0, 0], [2, 2]), 1.0)
    for k in range(fam.n_simplices):
        assert locate_point(fam, fam.centers()[k]) == k
    assert locate_point(fam, [5.0, 5.0]) is None
    # the center vertex (1,1) belongs to many simplices: lowest index wins
    owners = [k for k, s in enumerate(fam.simplices) if np.any(np.all(fam.vertices[s] == [1, 1], axis=1))]
    assert locate_point(fam, [1.0, 1.0]) == min(owners)


def test_prune():
    fam = build_regular_mesh(([0, 0], [2, 2]), 1.0)
    empty = prune_mesh(fam, np.zeros((0, 2)))
    assert empty.family.n_simplices == 0 and empty.family.n_vertices == 0
    inside = fam.centers()[5]
    one = prune_mesh(fam, [inside])
    assert one.family.n_simplices == 1 and one.simplex_ids.tolist() == [5]
    assert one.assignment.tolist() == [0]
    assert one.family.n_vertices == 3
    # a point on the diagonal edge of the first square
    edge = prune_mesh(fam, [[0.5, 0.5]])
    assert edge.simplex_ids.tolist() == [0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 3), st.floats(0, 2)), min_size=1, max_size=40))
def test_prune_soundness(pts):
    pts = np.array(pts)
    fam = build_regular_mesh(([0, 0], [3, 2]), 0.5)
    pr = prune_mesh(fam, pts)
    # every point lands in a retained simplex, every retained simplex is used
    assert np.all(pr.assignment >= 0)
    assert set(pr.assignment.tolist()) == set(range(pr.family.n_simplices))
    again = locate_points(pr.family, pts)
    assert np.all(again >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_affine_equivariance(seed):
    rng = np.random.default_rng(seed)
    for d in (2, 3):
        fam = build_regular_mesh((np.zeros(d), np.ones(d)), 0.5, d)
        A = rng.standard_normal((d, d))
        b = rng.standard_normal(d)
        y = fam.vertices @ A.T + b
        moved = fam.with_vertices(y)
        assert np.allclose(moved.centers(), fam.centers() @ A.T + b, atol=1e-12)
        ratio = np.abs(moved.volumes()) / fam.volumes()
        assert np.allclose(ratio, abs(np.linalg.det(A)), rtol=1e-10)


def test_all_kuhn_orientations_positive():
    fam = build_regular_mesh(([0, 0, 0], [1, 1, 1]), 1.0)
    assert np.all(fam.volumes() > 0)
    assert len({tuple(sorted(s)) for s in fam.simplices}) == len(list(permutations(range(3))))


def test_json_roundtrip(tmp_path):
    fam = build_regular_mesh(([0, 0, 0], [1, 1, 1]), 0.5)
    path = tmp_path / "mesh.json"
    path.write_text(json.dumps(fam.to_dict()))
    back = SimplicialFamily.from_dict(json.loads(path.read_text()))
    assert np.array_equal(back.vertices, fam.vertices)
    assert np.array_equal(back.simplices, fam.simplices)
