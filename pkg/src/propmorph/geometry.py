"""Rigid-body poses, triangle meshes and mesh file I/O.

Conventions used throughout the package:

* Quaternions are scalar-first (w, x, y, z), unit norm, and q / -q denote
  the same rotation.
* A Pose maps body coordinates to world coordinates: x_world = R * x + t.
  ``compose(a, b)`` applies b first, then a.
* Meshes are Y-up with +Z pointing toward the capture camera.  Alignment
  between a reconstructed mesh and the physical object is by translation
  and uniform scale only; reconstruction backends must already emit meshes
  in this orientation.
* Lengths are meters.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np


class EmptyMesh(ValueError):
    pass


class DegenerateMesh(ValueError):
    pass


class MalformedMesh(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnsupportedGlb(ValueError):
    pass


_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} is not 1")

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def normalized(w: float, x: float, y: float, z: float) -> "UnitQuaternion":
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n == 0.0:
            raise ValueError("cannot normalize zero quaternion")
        # Skip the division when already unit so exact values pass through
        # unchanged (keeps zero-noise tracking bit-stable).
        if abs(n - 1.0) <= _UNIT_TOL:
            return UnitQuaternion(w, x, y, z)
        return UnitQuaternion(w / n, x / n, y / n, z / n)

    @staticmethod
    def from_axis_angle(axis, angle_rad: float) -> "UnitQuaternion":
        ax, ay, az = float(axis[0]), float(axis[1]), float(axis[2])
        n = math.sqrt(ax * ax + ay * ay + az * az)
        if n == 0.0:
            raise ValueError("zero rotation axis")
        h = 0.5 * angle_rad
        s = math.sin(h) / n
        return UnitQuaternion.normalized(math.cos(h), ax * s, ay * s, az * s)

    def multiply(self, other: "UnitQuaternion") -> "UnitQuaternion":
        a, b = self, other
        return UnitQuaternion.normalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v) -> tuple[float, float, float]:
        # v' = v + 2 * qv x (qv x v + w v)
        vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
        qx, qy, qz, qw = self.x, self.y, self.z, self.w
        tx = qy * vz - qz * vy + qw * vx
        ty = qz * vx - qx * vz + qw * vy
        tz = qx * vy - qy * vx + qw * vz
        return (
            vx + 2.0 * (qy * tz - qz * ty),
            vy + 2.0 * (qz * tx - qx * tz),
            vz + 2.0 * (qx * ty - qy * tx),
        )

    def dot(self, other: "UnitQuaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z


@dataclass(frozen=True)
class Pose:
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.translation):
            raise ValueError("translation components must be finite")
        object.__setattr__(self, "translation", tuple(float(c) for c in self.translation))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def to_dict(self) -> dict:
        q = self.rotation
        return {"pos": list(self.translation), "quat": [q.w, q.x, q.y, q.z]}

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        w, x, y, z = d["quat"]
        return Pose(UnitQuaternion.normalized(w, x, y, z), tuple(d["pos"]))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    rot = a.rotation.multiply(b.rotation)
    bt = a.rotation.rotate(b.translation)
    at = a.translation
    return Pose(rot, (bt[0] + at[0], bt[1] + at[1], bt[2] + at[2]))


def invert(p: Pose) -> Pose:
    rot = p.rotation.conjugate()
    t = rot.rotate(p.translation)
    return Pose(rot, (-t[0], -t[1], -t[2]))


def rotation_angle_deg(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Geodesic angle between two rotations in degrees, in [0, 180].

    Sign-invariant: q and -q compare as equal rotations.  Computed from the
    relative quaternion with atan2 rather than 2*acos(|a.b|), which loses
    precision exactly where anchoring error should read as zero.
    """
    w = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z
    x = a.w * b.x - a.x * b.w - a.y * b.z + a.z * b.y
    y = a.w * b.y + a.x * b.z - a.y * b.w - a.z * b.x
    z = a.w * b.z - a.x * b.y + a.y * b.x - a.z * b.w
    return math.degrees(2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w)))


@dataclass(frozen=True)
class Aabb:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError("Aabb min must be <= max componentwise")

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple(0.5 * (lo + hi) for lo, hi in zip(self.min, self.max))

    @property
    def extents(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.min, self.max))


class TriMesh:
    """Triangle mesh: float64 vertices (n, 3), int triangles (m, 3), optional
    per-vertex RGB colors in [0, 1].  Arrays are copied and frozen."""

    def __init__(self, vertices, triangles, colors=None):
        v = np.array(vertices, dtype=np.float64)
        t = np.array(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must have shape (n, 3)")
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must have shape (m, 3)")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        c = None
        if colors is not None:
            c = np.array(colors, dtype=np.float64)
            if c.shape != v.shape:
                raise ValueError("colors must be one RGB triple per vertex")
            if c.min() < 0.0 or c.max() > 1.0:
                raise ValueError("colors must lie in [0, 1]")
            c.setflags(write=False)
        v.setflags(write=False)
        t.setflags(write=False)
        self.vertices = v
        self.triangles = t
        self.colors = c

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def mesh_aabb(m: TriMesh) -> Aabb:
    if m.n_vertices == 0:
        raise EmptyMesh("mesh has no vertices")
    return Aabb(tuple(m.vertices.min(axis=0)), tuple(m.vertices.max(axis=0)))


def normalize_mesh(m: TriMesh, target_max_extent: float) -> TriMesh:
    """Center the mesh bounding box on the origin and scale uniformly so the
    largest extent equals target_max_extent.  Topology and colors unchanged."""
    if target_max_extent <= 0:
        raise ValueError("target_max_extent must be positive")
    box = mesh_aabb(m)
    largest = max(box.extents)
    if largest <= 0:
        raise DegenerateMesh("mesh has zero extent")
    scale = target_max_extent / largest
    center = np.array(box.center)
    verts = (m.vertices - center) * scale
    return TriMesh(verts, m.triangles, m.colors)


# --- OBJ (canonical interchange format; UTF-8, LF) ---

def write_obj(m: TriMesh) -> bytes:
    lines = []
    for i, v in enumerate(m.vertices):
        line = f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}"
        if m.colors is not None:
            c = m.colors[i]
            line += f" {c[0]:.6f} {c[1]:.6f} {c[2]:.6f}"
        lines.append(line)
    for t in m.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_obj(data: bytes) -> TriMesh:
    """Parse the v/f subset of OBJ.  Vertex colors are read from extended
    six-float v lines; faces with more than three vertices are fan
    triangulated as (0, k, k+1)."""
    verts: list[list[float]] = []
    colors: list[list[float]] = []
    faces: list[tuple[int, int, int, int]] = []  # (a, b, c, line_no)
    text = data.decode("utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            coords = parts[1:]
            if len(coords) not in (3, 6):
                raise MalformedMesh(line_no, f"expected 3 or 6 values on v line, got {len(coords)}")
            try:
                vals = [float(c) for c in coords]
            except ValueError:
                raise MalformedMesh(line_no, "non-numeric coordinate") from None
            verts.append(vals[:3])
            colors.append(vals[3:6] if len(vals) == 6 else [])
        elif parts[0] == "f":
            if len(parts) < 4:
                raise MalformedMesh(line_no, "face needs at least 3 vertices")
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MalformedMesh(line_no, f"bad face index {tok!r}") from None
                if i <= 0:
                    raise MalformedMesh(line_no, "only positive 1-based indices supported")
                idx.append(i - 1)
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1], line_no))
        # other directives (vn, vt, o, g, s, usemtl, ...) are ignored
    nv = len(verts)
    for a, b, c, line_no in faces:
        if max(a, b, c) >= nv:
            raise MalformedMesh(line_no, "face index out of range")
    has_colors = any(colors) and all(len(c) == 3 for c in colors)
    return TriMesh(
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        [(a, b, c) for a, b, c, _ in faces],
        np.array(colors, dtype=np.float64) if has_colors else None,
    )


# --- GLB (binary glTF 2.0, read-only minimal subset) ---

_GLB_MAGIC = 0x46546C67
_CHUNK_JSON = 0x4E4F534A
_CHUNK_BIN = 0x004E4942
_COMPONENT_DTYPES = {5121: np.uint8, 5123: np.uint16, 5125: np.uint32, 5126: np.float32}


def parse_glb(data: bytes) -> TriMesh:
    """Extract positions and triangle indices from a single-mesh GLB
    container.  All other attributes are ignored."""
    if len(data) < 12:
        raise UnsupportedGlb("truncated header")
    magic, version, total = struct.unpack_from("<III", data, 0)
    if magic != _GLB_MAGIC or version != 2:
        raise UnsupportedGlb("not a glTF 2.0 binary container")
    if total > len(data):
        raise UnsupportedGlb("container length exceeds buffer")
    chunks = {}
    off = 12
    while off + 8 <= total:
        length, ctype = struct.unpack_from("<II", data, off)
        off += 8
        if off + length > total:
            raise UnsupportedGlb("truncated chunk")
        chunks[ctype] = data[off : off + length]
        off += length
    if _CHUNK_JSON not in chunks:
        raise UnsupportedGlb("missing JSON chunk")
    try:
        doc = json.loads(chunks[_CHUNK_JSON].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise UnsupportedGlb(f"bad JSON chunk: {e}") from None
    meshes = doc.get("meshes", [])
    if len(meshes) != 1:
        raise UnsupportedGlb(f"expected exactly 1 mesh, found {len(meshes)}")
    prims = meshes[0].get("primitives", [])
    if len(prims) != 1:
        raise UnsupportedGlb(f"expected exactly 1 primitive, found {len(prims)}")
    prim = prims[0]
    if "POSITION" not in prim.get("attributes", {}):
        raise UnsupportedGlb("primitive has no POSITION attribute")
    binary = chunks.get(_CHUNK_BIN, b"")

    def read_accessor(index: int) -> np.ndarray:
        try:
            acc = doc["accessors"][index]
            view = doc["bufferViews"][acc["bufferView"]]
        except (KeyError, IndexError) as e:
            raise UnsupportedGlb(f"bad accessor reference: {e}") from None
        if view.get("byteStride") not in (None,):
            raise UnsupportedGlb("strided buffer views not supported")
        dtype = _COMPONENT_DTYPES.get(acc["componentType"])
        if dtype is None:
            raise UnsupportedGlb(f"component type {acc['componentType']} not supported")
        per = {"SCALAR": 1, "VEC3": 3}.get(acc["type"])
        if per is None:
            raise UnsupportedGlb(f"accessor type {acc['type']} not supported")
        start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
        count = acc["count"] * per
        end = start + count * np.dtype(dtype).itemsize
        if end > len(binary):
            raise UnsupportedGlb("accessor reads past end of binary chunk")
        arr = np.frombuffer(binary[start:end], dtype=dtype)
        return arr.reshape(-1, per) if per > 1 else arr

    positions = read_accessor(prim["attributes"]["POSITION"]).astype(np.float64)
    if "indices" in prim:
        idx = read_accessor(prim["indices"]).astype(np.int64)
        if len(idx) % 3 != 0:
            raise UnsupportedGlb("index count not a multiple of 3")
        tris = idx.reshape(-1, 3)
    else:
        if len(positions) % 3 != 0:
            raise UnsupportedGlb("non-indexed position count not a multiple of 3")
        tris = np.arange(len(positions), dtype=np.int64).reshape(-1, 3)
    try:
        return TriMesh(positions, tris)
    except ValueError as e:
        raise UnsupportedGlb(str(e)) from None
