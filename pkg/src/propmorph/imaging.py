"""Capture imagery, depth-to-grayscale conditioning and mask analytics.

Units and conventions:

* Depth is metric (meters), stored per pixel with an explicit validity mask.
  On disk, depth frames are 16-bit single-channel PNG in millimeters with
  0 meaning invalid (so depths above 65.535 m cannot be saved).
* Grayscale depth conditioning is near = bright: gray = 255 at the near
  plane, 0 at the far plane.  Invalid pixels render as the far-plane color
  and gray 0 (treated as background).
* Pixel coordinates are (x=column, y=row), integers addressing pixel
  centers.
* Masks are boolean, foreground = True; on disk 8-bit PNG with 0 background
  and 255 foreground.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

MAX_DEPTH_M = 100.0
_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


class InvalidRange(ValueError):
    pass


class UnmappableColor(ValueError):
    def __init__(self, x: int, y: int, color: tuple[int, int, int], distance: float):
        super().__init__(f"pixel ({x}, {y}) color {color} is {distance:.2f} away from the colormap")
        self.x = x
        self.y = y
        self.color = color


class EmptyMask(ValueError):
    pass


class DegenerateExtent(ValueError):
    pass


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DepthFrame:
    """Metric depth with per-pixel validity.  depth: (h, w) float64 meters,
    valid: (h, w) bool.  Invalid pixels carry no depth meaning."""

    width: int
    height: int
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = _frozen(self.depth, np.float64)
        valid = _frozen(self.valid, bool)
        shape = (self.height, self.width)
        if depth.shape != shape or valid.shape != shape:
            raise ValueError(f"depth/valid arrays must have shape {shape}")
        d = depth[valid]
        if d.size and (not np.all(np.isfinite(d)) or d.min() <= 0 or d.max() >= MAX_DEPTH_M):
            raise ValueError(f"valid depths must be finite and in (0, {MAX_DEPTH_M}) m")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class RGBImage:
    width: int
    height: int
    pixels: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self):
        px = _frozen(self.pixels, np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ValueError(f"pixels must have shape ({self.height}, {self.width}, 3)")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class RgbaImage:
    """RGB cutout with alpha; alpha 0 marks removed background."""

    width: int
    height: int
    pixels: np.ndarray  # (h, w, 4) uint8

    def __post_init__(self):
        px = _frozen(self.pixels, np.uint8)
        if px.shape != (self.height, self.width, 4):
            raise ValueError(f"pixels must have shape ({self.height}, {self.width}, 4)")
        object.__setattr__(self, "pixels", px)

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[:, :, 3]


@dataclass(frozen=True)
class GrayImage:
    width: int
    height: int
    pixels: np.ndarray  # (h, w) uint8

    def __post_init__(self):
        px = _frozen(self.pixels, np.uint8)
        if px.shape != (self.height, self.width):
            raise ValueError(f"pixels must have shape ({self.height}, {self.width})")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class SegmentationMask:
    width: int
    height: int
    bits: np.ndarray  # (h, w) bool, foreground = True

    def __post_init__(self):
        bits = _frozen(self.bits, bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(f"bits must have shape ({self.height}, {self.width})")
        object.__setattr__(self, "bits", bits)

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class ColormapSpec:
    """Piecewise-linear colormap over normalized depth t in [0, 1].

    Stops must be sorted with t = 0 first and t = 1 last, and the t -> color
    path must be injective up to 8-bit quantization for inversion to work.
    """

    name: str
    stops: tuple[tuple[float, tuple[int, int, int]], ...]

    def __post_init__(self):
        stops = tuple((float(t), tuple(int(c) for c in rgb)) for t, rgb in self.stops)
        if len(stops) < 2:
            raise ValueError("colormap needs at least two stops")
        ts = [t for t, _ in stops]
        if ts != sorted(ts) or ts[0] != 0.0 or ts[-1] != 1.0:
            raise ValueError("stops must be sorted with t=0 first and t=1 last")
        if len(set(ts)) != len(ts):
            raise ValueError("stop positions must be distinct")
        for (_, c0), (_, c1) in zip(stops, stops[1:]):
            if c0 == c1:
                raise ValueError("consecutive stops must differ in color")
        object.__setattr__(self, "stops", stops)

    def ts(self) -> np.ndarray:
        return np.array([t for t, _ in self.stops])

    def rgb(self) -> np.ndarray:
        return np.array([c for _, c in self.stops], dtype=np.float64)


# Stand-in for the capture camera's unspecified color depth output.
DEFAULT_COLORMAP = ColormapSpec("blue-red", ((0.0, (0, 0, 255)), (1.0, (255, 0, 0))))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width is not None and not (0 <= self.cx <= self.width):
            raise ValueError("cx must lie within [0, width]")
        if self.height is not None and not (0 <= self.cy <= self.height):
            raise ValueError("cy must lie within [0, height]")


@dataclass(frozen=True)
class MaskReport:
    total_area: int
    largest_component_area: int
    residual_fraction: float
    full_centroid: tuple[float, float]
    component_centroid: tuple[float, float]
    centroid_shift: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "total_area": self.total_area,
            "largest_component_area": self.largest_component_area,
            "residual_fraction": self.residual_fraction,
            "full_centroid": list(self.full_centroid),
            "component_centroid": list(self.component_centroid),
            "centroid_shift": self.centroid_shift,
            "passed": self.passed,
        }


def _normalized_depth(depth: DepthFrame, near: float, far: float) -> np.ndarray:
    if near <= 0 or far <= 0 or near >= far:
        raise InvalidRange(f"need 0 < near < far, got near={near} far={far}")
    t = np.clip((depth.depth - near) / (far - near), 0.0, 1.0)
    return np.where(depth.valid, t, 1.0)


def encode_depth_colormap(depth: DepthFrame, spec: ColormapSpec, near: float, far: float) -> RGBImage:
    """Render depth through the colormap: valid pixels at their normalized
    depth, invalid pixels as the far-plane (t=1) color."""
    t = _normalized_depth(depth, near, far)
    ts, rgb = spec.ts(), spec.rgb()
    out = np.stack([np.interp(t, ts, rgb[:, ch]) for ch in range(3)], axis=-1)
    return RGBImage(depth.width, depth.height, np.rint(out).astype(np.uint8))


def depth_colormap_to_grayscale(
    rgb: RGBImage, spec: ColormapSpec, near: float, far: float, tolerance: float = 3.0
) -> GrayImage:
    """Invert the colormap per pixel (nearest stop-segment projection) to
    recover normalized depth t, then emit gray = round(255 * (1 - t)).

    near/far describe the range the image was encoded with; they take no
    part in the inversion but are validated for contract symmetry.
    """
    if near <= 0 or far <= 0 or near >= far:
        raise InvalidRange(f"need 0 < near < far, got near={near} far={far}")
    px = rgb.pixels.reshape(-1, 3).astype(np.float64)
    ts, stops = spec.ts(), spec.rgb()
    best_d2 = np.full(len(px), np.inf)
    best_t = np.zeros(len(px))
    for (t0, c0), (t1, c1) in zip(zip(ts, stops), zip(ts[1:], stops[1:])):
        seg = c1 - c0
        denom = float(seg @ seg)
        s = np.clip(((px - c0) @ seg) / denom, 0.0, 1.0)
        delta = px - (c0 + s[:, None] * seg)
        d2 = np.einsum("ij,ij->i", delta, delta)
        closer = d2 < best_d2
        best_d2[closer] = d2[closer]
        best_t[closer] = t0 + s[closer] * (t1 - t0)
    worst = int(np.argmax(best_d2))
    if best_d2[worst] > tolerance * tolerance:
        offending = np.flatnonzero(best_d2 > tolerance * tolerance)[0]
        y, x = divmod(int(offending), rgb.width)
        raise UnmappableColor(x, y, tuple(int(c) for c in rgb.pixels[y, x]), math.sqrt(best_d2[offending]))
    gray = np.rint(255.0 * (1.0 - best_t)).astype(np.uint8)
    return GrayImage(rgb.width, rgb.height, gray.reshape(rgb.height, rgb.width))


def depth_to_grayscale(depth: DepthFrame, near: float, far: float) -> GrayImage:
    """Direct conversion bypassing the colormap; same near = bright convention.
    Invalid pixels map to 0."""
    t = _normalized_depth(depth, near, far)
    gray = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    return GrayImage(depth.width, depth.height, gray)


def mask_centroid(mask: SegmentationMask) -> tuple[float, float]:
    """Area-weighted mean (x, y) of foreground pixel centers."""
    ys, xs = np.nonzero(mask.bits)
    if len(xs) == 0:
        raise EmptyMask("mask has no foreground pixels")
    return float(xs.mean()), float(ys.mean())


def connected_components(mask: SegmentationMask) -> tuple[np.ndarray, int]:
    """Label foreground with 4-connectivity; returns (labels, count)."""
    labels, n = ndimage.label(mask.bits, structure=_FOUR_CONNECTED)
    return labels, int(n)


def validate_background_removal(
    mask: SegmentationMask, max_shift: float = 5.0, max_residual: float = 0.05
) -> MaskReport:
    """Check a removal mask for residual background blobs (the failure mode
    where leftovers shift the object centroid and corrupt tracking).

    The largest 4-connected component is the presumed object; ties break on
    the smaller top-left bounding-box corner in row-major order.
    """
    labels, n = connected_components(mask)
    if n == 0:
        raise EmptyMask("mask has no foreground pixels")
    areas = np.bincount(labels.ravel())[1:]  # skip background label 0
    best = None
    slices = ndimage.find_objects(labels)
    for i in np.flatnonzero(areas == areas.max()):
        sl = slices[i]
        key = (sl[0].start, sl[1].start)  # (min_row, min_col)
        if best is None or key < best[0]:
            best = (key, i + 1)
    largest_label = best[1]
    component = SegmentationMask(mask.width, mask.height, labels == largest_label)
    full_c = mask_centroid(mask)
    comp_c = mask_centroid(component)
    shift = math.hypot(full_c[0] - comp_c[0], full_c[1] - comp_c[1])
    total = int(areas.sum())
    largest_area = int(areas.max())
    residual = 1.0 - largest_area / total
    return MaskReport(
        total_area=total,
        largest_component_area=largest_area,
        residual_fraction=residual,
        full_centroid=full_c,
        component_centroid=comp_c,
        centroid_shift=shift,
        passed=(shift <= max_shift and residual <= max_residual),
    )


def object_extent(
    depth: DepthFrame, mask: SegmentationMask, k: CameraIntrinsics
) -> tuple[float, float, float]:
    """Axis-aligned bounding-box extents (meters) of the masked pixels
    back-projected through the pinhole model."""
    if (mask.height, mask.width) != (depth.height, depth.width):
        raise ValueError("mask dimensions must match the depth frame")
    usable = mask.bits & depth.valid
    vs, us = np.nonzero(usable)
    if len(us) < 2:
        raise DegenerateExtent(f"need >= 2 valid masked pixels, got {len(us)}")
    d = depth.depth[vs, us]
    x = (us - k.cx) * d / k.fx
    y = (vs - k.cy) * d / k.fy
    pts = np.stack([x, y, d], axis=-1)
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(ext[0]), float(ext[1]), float(ext[2])


# --- disk formats ---

def save_depth_png(frame: DepthFrame) -> bytes:
    """16-bit single-channel PNG, value = millimeters, 0 = invalid."""
    mm = np.rint(frame.depth * 1000.0)
    if np.any(mm[frame.valid] > 65535):
        raise InvalidRange("depth beyond 65.535 m cannot be stored as 16-bit millimeters")
    out = np.where(frame.valid, mm, 0).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(out).save(buf, "PNG")
    return buf.getvalue()


def load_depth_png(data: bytes) -> DepthFrame:
    img = Image.open(io.BytesIO(data))
    arr = np.array(img)
    if arr.ndim != 2:
        raise ValueError("depth PNG must be single-channel")
    mm = arr.astype(np.float64)
    valid = mm > 0
    depth = np.where(valid, mm / 1000.0, 0.0)
    h, w = arr.shape
    return DepthFrame(w, h, depth, valid)


def _save_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, "PNG")
    return buf.getvalue()


def save_rgb_png(image: RGBImage) -> bytes:
    return _save_png(image.pixels)


def load_rgb_png(data: bytes) -> RGBImage:
    arr = np.array(Image.open(io.BytesIO(data)).convert("RGB"))
    return RGBImage(arr.shape[1], arr.shape[0], arr)


def save_rgba_png(image: RgbaImage) -> bytes:
    return _save_png(image.pixels)


def load_rgba_png(data: bytes) -> RgbaImage:
    arr = np.array(Image.open(io.BytesIO(data)).convert("RGBA"))
    return RgbaImage(arr.shape[1], arr.shape[0], arr)


def save_gray_png(image: GrayImage) -> bytes:
    return _save_png(image.pixels)


def load_gray_png(data: bytes) -> GrayImage:
    arr = np.array(Image.open(io.BytesIO(data)).convert("L"))
    return GrayImage(arr.shape[1], arr.shape[0], arr)


def save_mask_png(mask: SegmentationMask) -> bytes:
    return _save_png(np.where(mask.bits, 255, 0).astype(np.uint8))


def load_mask_png(data: bytes) -> SegmentationMask:
    arr = np.array(Image.open(io.BytesIO(data)).convert("L"))
    return SegmentationMask(arr.shape[1], arr.shape[0], arr >= 128)


def save_intrinsics_json(k: CameraIntrinsics) -> bytes:
    d = {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy}
    if k.width is not None:
        d["width"] = k.width
    if k.height is not None:
        d["height"] = k.height
    return json.dumps(d, sort_keys=True).encode("utf-8")


def load_intrinsics_json(data: bytes | str | Path) -> CameraIntrinsics:
    if isinstance(data, Path):
        data = data.read_bytes()
    d = json.loads(data)
    return CameraIntrinsics(
        fx=float(d["fx"]),
        fy=float(d["fy"]),
        cx=float(d["cx"]),
        cy=float(d["cy"]),
        width=int(d["width"]) if "width" in d else None,
        height=int(d["height"]) if "height" in d else None,
    )
