import json
import struct

import numpy as np
import pytest

from propmorph import imaging, pipeline
from propmorph.geometry import TriMesh


def make_depth_frame(rng, w=16, h=12, near=0.3, far=1.9, invalid_fraction=0.0):
    d = rng.uniform(near, far, (h, w))
    valid = rng.random((h, w)) >= invalid_fraction
    return imaging.DepthFrame(w, h, d, valid)


def make_capture(w=64, h=48, object_depth=0.5, bg_depth=1.5, rect=(14, 34, 22, 42), with_mask=False):
    """Synthetic capture: one rectangular object in front of a flat background."""
    r0, r1, c0, c1 = rect
    depth = np.full((h, w), bg_depth)
    depth[r0:r1, c0:c1] = object_depth
    rgb = np.full((h, w, 3), 180, np.uint8)
    rgb[r0:r1, c0:c1] = (90, 60, 30)
    mask = None
    if with_mask:
        bits = np.zeros((h, w), bool)
        bits[r0:r1, c0:c1] = True
        mask = imaging.SegmentationMask(w, h, bits)
    return pipeline.CaptureInput(
        rgb=imaging.RGBImage(w, h, rgb),
        depth=imaging.DepthFrame(w, h, depth, np.ones((h, w), bool)),
        intrinsics=imaging.CameraIntrinsics(500.0, 500.0, w / 2, h / 2, w, h),
        mask=mask,
    )


def random_mesh(rng, n_vertices=None, n_triangles=None, with_colors=False):
    nv = n_vertices or int(rng.integers(3, 40))
    nt = n_triangles or int(rng.integers(1, 60))
    verts = rng.uniform(-2.0, 2.0, (nv, 3))
    tris = rng.integers(0, nv, (nt, 3))
    colors = rng.uniform(0.0, 1.0, (nv, 3)) if with_colors else None
    return TriMesh(verts, tris, colors)


def write_glb(mesh: TriMesh) -> bytes:
    """Minimal single-mesh GLB writer used as the GLB parse fixture."""
    positions = mesh.vertices.astype(np.float32).tobytes()
    indices = mesh.triangles.astype(np.uint32).tobytes()
    pad = (-len(positions)) % 4
    positions += b"\x00" * pad
    binary = positions + indices
    doc = {
        "asset": {"version": "2.0"},
        "meshes": [{"primitives": [{"attributes": {"POSITION": 0}, "indices": 1}]}],
        "accessors": [
            {"bufferView": 0, "componentType": 5126, "count": len(mesh.vertices), "type": "VEC3"},
            {"bufferView": 1, "componentType": 5125, "count": mesh.triangles.size, "type": "SCALAR"},
        ],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": len(positions)},
            {"buffer": 0, "byteOffset": len(positions), "byteLength": len(indices)},
        ],
        "buffers": [{"byteLength": len(binary)}],
    }
    payload = json.dumps(doc).encode()
    payload += b" " * ((-len(payload)) % 4)
    total = 12 + 8 + len(payload) + 8 + len(binary)
    out = struct.pack("<III", 0x46546C67, 2, total)
    out += struct.pack("<II", len(payload), 0x4E4F534A) + payload
    out += struct.pack("<II", len(binary), 0x004E4942) + binary
    return out


def label_components_bfs(bits: np.ndarray) -> list[np.ndarray]:
    """Independent 4-connected labeling (brute-force BFS) for oracle use."""
    h, w = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    components = []
    for sy in range(h):
        for sx in range(w):
            if not bits[sy, sx] or seen[sy, sx]:
                continue
            stack = [(sy, sx)]
            seen[sy, sx] = True
            members = []
            while stack:
                y, x = stack.pop()
                members.append((y, x))
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
            comp = np.zeros_like(bits, dtype=bool)
            for y, x in members:
                comp[y, x] = True
            components.append(comp)
    return components


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
