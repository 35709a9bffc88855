import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import random_mesh, write_glb
from propmorph.geometry import (
    Aabb,
    DegenerateMesh,
    EmptyMesh,
    MalformedMesh,
    Pose,
    TriMesh,
    UnitQuaternion,
    UnsupportedGlb,
    compose,
    invert,
    mesh_aabb,
    normalize_mesh,
    parse_glb,
    parse_obj,
    rotation_angle_deg,
    write_obj,
)


def random_pose(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose(UnitQuaternion.normalized(*q), tuple(rng.uniform(-2, 2, 3)))


def to_scipy(q: UnitQuaternion) -> Rotation:
    return Rotation.from_quat([q.x, q.y, q.z, q.w])  # scipy is xyzw


def quats_close(a: UnitQuaternion, b: UnitQuaternion, tol=1e-9) -> bool:
    """Componentwise closeness up to the q/-q sign ambiguity."""
    va = np.array([a.w, a.x, a.y, a.z])
    vb = np.array([b.w, b.x, b.y, b.z])
    return min(np.abs(va - vb).max(), np.abs(va + vb).max()) <= tol


class TestPoseAlgebra:
    def test_identity_law(self, rng):
        p = random_pose(rng)
        q = compose(Pose.identity(), p)
        assert q.translation == pytest.approx(p.translation, abs=1e-12)
        assert quats_close(q.rotation, p.rotation, tol=1e-12)

    def test_inverse_law(self, rng):
        for _ in range(20):
            p = random_pose(rng)
            ident = compose(p, invert(p))
            assert ident.translation == pytest.approx((0, 0, 0), abs=1e-9)
            assert quats_close(ident.rotation, UnitQuaternion.identity())

    def test_associativity(self, rng):
        for _ in range(50):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert left.translation == pytest.approx(right.translation, abs=1e-9)
            assert quats_close(left.rotation, right.rotation)

    def test_compose_matches_rotation_oracle(self, rng):
        for _ in range(30):
            a, b = random_pose(rng), random_pose(rng)
            got = compose(a, b)
            ra, rb = to_scipy(a.rotation), to_scipy(b.rotation)
            expected_rot = ra * rb
            expected_t = ra.apply(b.translation) + np.array(a.translation)
            assert got.translation == pytest.approx(tuple(expected_t), abs=1e-9)
            gq = to_scipy(got.rotation)
            assert (gq.inv() * expected_rot).magnitude() < 1e-9

    def test_invert_trivials(self):
        assert invert(Pose.identity()).translation == (0.0, 0.0, 0.0)
        p = Pose(UnitQuaternion.identity(), (0.0, 0.0, 1.0))
        assert invert(p).translation == pytest.approx((0.0, 0.0, -1.0))

    def test_double_inversion(self, rng):
        for _ in range(20):
            p = random_pose(rng)
            q = invert(invert(p))
            assert q.translation == pytest.approx(p.translation, abs=1e-9)
            assert quats_close(q.rotation, p.rotation)

    def test_non_finite_translation_rejected(self):
        with pytest.raises(ValueError):
            Pose(UnitQuaternion.identity(), (0.0, float("nan"), 0.0))


class TestRotationAngle:
    def test_same_rotation_is_zero(self, rng):
        p = random_pose(rng)
        assert rotation_angle_deg(p.rotation, p.rotation) == 0.0

    def test_quarter_turn_about_z(self):
        q = UnitQuaternion.from_axis_angle((0, 0, 1), math.pi / 2)
        assert rotation_angle_deg(q, UnitQuaternion.identity()) == pytest.approx(90.0)

    def test_double_cover(self, rng):
        q = random_pose(rng).rotation
        neg = UnitQuaternion(-q.w, -q.x, -q.y, -q.z)
        assert rotation_angle_deg(q, neg) == 0.0

    def test_symmetric_and_matches_oracle(self, rng):
        for _ in range(30):
            a, b = random_pose(rng).rotation, random_pose(rng).rotation
            d1, d2 = rotation_angle_deg(a, b), rotation_angle_deg(b, a)
            assert d1 == pytest.approx(d2, abs=1e-12)
            oracle = math.degrees((to_scipy(a).inv() * to_scipy(b)).magnitude())
            assert d1 == pytest.approx(oracle, abs=1e-6)

    def test_triangle_inequality(self, rng):
        for _ in range(50):
            a, b, c = (random_pose(rng).rotation for _ in range(3))
            assert rotation_angle_deg(a, c) <= (
                rotation_angle_deg(a, b) + rotation_angle_deg(b, c) + 1e-6
            )


class TestAabbAndNormalize:
    def test_unit_cube_aabb(self):
        corners = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        mesh = TriMesh(corners, [(0, 1, 2)])
        box = mesh_aabb(mesh)
        assert box.min == (0.0, 0.0, 0.0)
        assert box.max == (1.0, 1.0, 1.0)

    def test_single_vertex_degenerate_box(self):
        mesh = TriMesh([(2.0, 3.0, 4.0)], [(0, 0, 0)])
        box = mesh_aabb(mesh)
        assert box.min == box.max == (2.0, 3.0, 4.0)

    def test_every_vertex_inside_box(self, rng):
        mesh = random_mesh(rng)
        box = mesh_aabb(mesh)
        assert np.all(mesh.vertices >= np.array(box.min) - 1e-12)
        assert np.all(mesh.vertices <= np.array(box.max) + 1e-12)

    def test_empty_mesh_rejected(self):
        with pytest.raises((EmptyMesh, ValueError)):
            mesh_aabb(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int)))

    def test_unit_cube_normalized_to_030(self):
        corners = [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        mesh = TriMesh(corners, [(0, 1, 2), (4, 5, 6)])
        out = normalize_mesh(mesh, 0.3)
        box = mesh_aabb(out)
        assert box.center == pytest.approx((0, 0, 0), abs=1e-12)
        assert max(box.extents) == pytest.approx(0.3, abs=1e-12)
        assert box.extents == pytest.approx((0.3, 0.3, 0.3), abs=1e-12)

    def test_idempotent(self, rng):
        for _ in range(30):
            mesh = random_mesh(rng)
            once = normalize_mesh(mesh, 0.25)
            twice = normalize_mesh(once, 0.25)
            assert np.allclose(once.vertices, twice.vertices, atol=1e-9)
            box = mesh_aabb(once)
            assert np.array(box.center) == pytest.approx((0, 0, 0), abs=1e-9)
            assert max(box.extents) == pytest.approx(0.25, abs=1e-9)

    def test_scale_translation_invariant(self, rng):
        mesh = random_mesh(rng)
        scaled = TriMesh(mesh.vertices * 3.7 + np.array([1.0, -2.0, 0.5]), mesh.triangles)
        a = normalize_mesh(mesh, 0.5)
        b = normalize_mesh(scaled, 0.5)
        assert np.allclose(a.vertices, b.vertices, atol=1e-9)

    def test_zero_extent_rejected(self):
        mesh = TriMesh([(1, 1, 1), (1, 1, 1), (1, 1, 1)], [(0, 1, 2)])
        with pytest.raises(DegenerateMesh):
            normalize_mesh(mesh, 0.3)

    def test_colors_preserved(self, rng):
        mesh = random_mesh(rng, with_colors=True)
        out = normalize_mesh(mesh, 1.0)
        assert np.array_equal(out.colors, mesh.colors)


class TestObj:
    def test_minimal_triangle(self):
        mesh = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        assert mesh.n_vertices == 3
        assert mesh.n_triangles == 1
        assert tuple(mesh.triangles[0]) == (0, 1, 2)

    def test_quad_fan_triangulation(self):
        mesh = parse_obj(b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert mesh.n_triangles == 2
        assert tuple(mesh.triangles[0]) == (0, 1, 2)
        assert tuple(mesh.triangles[1]) == (0, 2, 3)

    def test_slash_face_tokens(self):
        mesh = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n")
        assert mesh.n_triangles == 1

    def test_face_index_out_of_range(self):
        with pytest.raises(MalformedMesh) as exc:
            parse_obj(b"v 0 0 0\nv 1 0 0\nf 1 2 3\n")
        assert exc.value.line_no == 3

    def test_non_numeric_coordinate(self):
        with pytest.raises(MalformedMesh) as exc:
            parse_obj(b"v 0 zero 0\n")
        assert exc.value.line_no == 1

    def test_round_trip(self, rng):
        for _ in range(20):
            mesh = random_mesh(rng, with_colors=bool(rng.integers(0, 2)))
            back = parse_obj(write_obj(mesh))
            assert back.n_triangles == mesh.n_triangles
            assert np.array_equal(back.triangles, mesh.triangles)
            assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
            if mesh.colors is not None:
                assert np.allclose(back.colors, mesh.colors, atol=1e-6)


class TestGlb:
    def test_single_triangle(self):
        mesh = TriMesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
        back = parse_glb(write_glb(mesh))
        assert back.n_triangles == 1
        assert np.allclose(back.vertices, mesh.vertices)

    def test_fixture_round_trip(self, rng):
        mesh = random_mesh(rng)
        back = parse_glb(write_glb(mesh))
        assert np.allclose(back.vertices, mesh.vertices, atol=1e-6)
        assert np.array_equal(back.triangles, mesh.triangles)

    def test_truncated_rejected(self, rng):
        blob = write_glb(random_mesh(rng))
        with pytest.raises(UnsupportedGlb):
            parse_glb(blob[: len(blob) // 2])

    def test_wrong_magic_rejected(self):
        with pytest.raises(UnsupportedGlb):
            parse_glb(b"NOPE" + b"\x00" * 20)

    def test_multi_mesh_rejected(self, rng):
        import json as json_mod
        import struct

        blob = bytearray(write_glb(random_mesh(rng)))
        jlen, jtype = struct.unpack_from("<II", blob, 12)
        doc = json_mod.loads(blob[20 : 20 + jlen])
        doc["meshes"].append(doc["meshes"][0])
        payload = json_mod.dumps(doc).encode()
        payload += b" " * ((-len(payload)) % 4)
        rest = bytes(blob[20 + jlen :])
        out = struct.pack("<III", 0x46546C67, 2, 12 + 8 + len(payload) + len(rest))
        out += struct.pack("<II", len(payload), jtype) + payload + rest
        with pytest.raises(UnsupportedGlb):
            parse_glb(out)


class TestTriMeshValidation:
    def test_index_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            TriMesh([(0, 0, 0)], [(0, 0, 1)])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            TriMesh([(0, 0, float("inf"))], [(0, 0, 0)])

    def test_aabb_min_le_max(self):
        with pytest.raises(ValueError):
            Aabb((1, 0, 0), (0, 0, 0))
