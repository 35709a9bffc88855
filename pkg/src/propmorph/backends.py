"""Backends for the three generative stages: depth-conditioned text-to-image,
background removal, and image-to-3D reconstruction.

Each stage has a remote HTTP client and a deterministic local stub.  Stubs
are pure functions of (inputs, config) so full pipeline runs are
byte-reproducible; they also support fault injection that plants a residual
background blob, reproducing the incomplete-removal failure mode downstream
validation exists to catch.

Remote wire protocol (JSON over HTTP, this artifact's contract):

    POST {base_url}/generate    {prompt, seed, control_mode, checkpoint_id,
                                 depth_png_base64}         -> {image_png_base64}
    POST {base_url}/rembg       {image_png_base64}         -> {cutout_png_base64}
    POST {base_url}/reconstruct {cutout_png_base64, format} -> {model_base64, format}

Errors are HTTP 4xx/5xx with a JSON body {"error": text}.
"""

from __future__ import annotations

import base64
import colorsys
import enum
import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx
import numpy as np
from scipy import ndimage

from . import geometry, imaging
from .geometry import TriMesh
from .imaging import GrayImage, RGBImage, RgbaImage, SegmentationMask

FLOOD_FILL_EPSILON = 12.0  # Chebyshev distance in 8-bit color space
BACKOFF_BASE_S = 0.5
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.1
_MAX_PIXELS = 16_000_000


class InvalidInput(ValueError):
    pass


class NothingSegmented(ValueError):
    pass


class BackendUnavailable(RuntimeError):
    def __init__(self, stage: str, cause: Exception | str, attempts: int = 1):
        super().__init__(f"{stage} backend failed after {attempts} attempt(s): {cause}")
        self.stage = stage
        self.cause = cause
        self.attempts = attempts


class ControlMode(str, enum.Enum):
    BALANCED = "balanced"
    PROMPT_PRIORITY = "prompt_priority"
    CONTROL_PRIORITY = "control_priority"


@dataclass(frozen=True)
class GenerationConfig:
    prompt: str
    seed: int = 0
    control_mode: ControlMode = ControlMode.BALANCED
    control_type: str = "depth"
    checkpoint_id: str = "sd-base-v1-5"
    use_native_depth_estimation: bool = False

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.control_type != "depth":
            raise ValueError("only depth control is supported")


@dataclass(frozen=True)
class BackendEndpoint:
    base_url: str
    auth_token: str | None = None
    request_timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")


@dataclass(frozen=True)
class StubConfig:
    inject_residual: bool = False
    residual_area_fraction: float = 0.04
    residual_offset: int = 18
    heightfield_grid: tuple[int, int] = (24, 24)
    height_scale: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.residual_area_fraction < 0.5):
            raise ValueError("residual_area_fraction must be in [0, 0.5)")
        if self.heightfield_grid[0] < 2 or self.heightfield_grid[1] < 2:
            raise ValueError("heightfield grid must be at least 2x2")


class GenerativeBackend(Protocol):
    def text_to_image(self, conditioning: GrayImage, cfg: GenerationConfig) -> RGBImage: ...

    def remove_background(self, image: RGBImage) -> tuple[RgbaImage, SegmentationMask]: ...

    def image_to_mesh(self, cutout: RgbaImage) -> TriMesh: ...


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit; fixed published algorithm so stub outputs reproduce
    across implementations."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def prompt_seed_hash(prompt: str, seed: int) -> int:
    # NUL separator keeps ("a1", 2) and ("a", 12) distinct.
    return fnv1a64(prompt.encode("utf-8") + b"\x00" + str(seed).encode("ascii"))


class StubBackend:
    """Deterministic stand-ins for the three generative stages.

    text_to_image paints the conditioning luminance in a prompt/seed-derived
    hue; remove_background flood-fills near-border-colored pixels from the
    borders; image_to_mesh builds a luminance heightfield over the cutout.
    """

    def __init__(self, config: StubConfig | None = None):
        self.config = config or StubConfig()

    def text_to_image(self, conditioning: GrayImage, cfg: GenerationConfig) -> RGBImage:
        w, h = conditioning.width, conditioning.height
        if w * h == 0 or w * h > _MAX_PIXELS:
            raise InvalidInput(f"conditioning size {w}x{h} out of range")
        hue = prompt_seed_hash(cfg.prompt, cfg.seed) % 360
        unit = np.array(colorsys.hsv_to_rgb(hue / 360.0, 0.6, 1.0))
        gray = conditioning.pixels.astype(np.float64)
        out = np.rint(gray[:, :, None] * unit)
        if self.config.inject_residual:
            side = max(1, round(math.sqrt(self.config.residual_area_fraction * w * h)))
            cy, cx = h // 2, w // 2 + self.config.residual_offset
            r0, r1 = max(0, cy - side // 2), min(h, cy - side // 2 + side)
            c0, c1 = max(0, cx - side // 2), min(w, cx - side // 2 + side)
            out[r0:r1, c0:c1] = np.rint(127.5 * unit)
        return RGBImage(w, h, out.astype(np.uint8))

    def remove_background(self, image: RGBImage) -> tuple[RgbaImage, SegmentationMask]:
        px = image.pixels.astype(np.float64)
        border = np.concatenate([px[0], px[-1], px[:, 0], px[:, -1]])
        bg_color = np.median(border, axis=0)
        near_bg = np.max(np.abs(px - bg_color), axis=-1) <= FLOOD_FILL_EPSILON
        labels, _ = ndimage.label(near_bg, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        edge_labels = np.unique(
            np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
        )
        background = np.isin(labels, edge_labels[edge_labels > 0])
        fg = ~background
        if not fg.any():
            raise NothingSegmented("flood fill consumed the whole image")
        mask = SegmentationMask(image.width, image.height, fg)
        rgba = np.dstack([image.pixels, np.where(fg, 255, 0).astype(np.uint8)])
        return RgbaImage(image.width, image.height, rgba), mask

    def image_to_mesh(self, cutout: RgbaImage) -> TriMesh:
        opaque = cutout.alpha > 0
        ys, xs = np.nonzero(opaque)
        if len(xs) == 0:
            raise NothingSegmented("cutout has no opaque pixels")
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        cols, rows = self.config.heightfield_grid
        # Grid corner (i, j) sampled at the nearest pixel inside the bbox.
        gx = np.rint(x0 + np.arange(cols + 1) * (x1 - x0) / cols).astype(int)
        gy = np.rint(y0 + np.arange(rows + 1) * (y1 - y0) / rows).astype(int)
        sample_x, sample_y = np.meshgrid(gx, gy)  # (rows+1, cols+1)
        rgb = cutout.pixels[sample_y, sample_x, :3].astype(np.float64)
        lum = rgb @ np.array([0.299, 0.587, 0.114])
        inside = opaque[sample_y, sample_x]

        span = float(max(x1 - x0, y1 - y0, 1))
        ccx, ccy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        vx = (sample_x - ccx) / span
        vy = -(sample_y - ccy) / span  # image y grows down, mesh y up
        vz = (lum / 255.0) * self.config.height_scale

        cell_ok = inside[:-1, :-1] & inside[:-1, 1:] & inside[1:, :-1] & inside[1:, 1:]
        corner_id = lambda j, i: j * (cols + 1) + i
        tris = []
        used: dict[int, int] = {}

        def vertex(j, i):
            cid = corner_id(j, i)
            if cid not in used:
                used[cid] = len(used)
            return used[cid]

        for j in range(rows):
            for i in range(cols):
                if not cell_ok[j, i]:
                    continue
                v00, v10 = vertex(j, i), vertex(j, i + 1)
                v11, v01 = vertex(j + 1, i + 1), vertex(j + 1, i)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        if not tris:
            raise NothingSegmented("no heightfield cell lies fully inside the cutout")
        order = sorted(used, key=used.get)
        jj = np.array([cid // (cols + 1) for cid in order])
        ii = np.array([cid % (cols + 1) for cid in order])
        verts = np.stack([vx[jj, ii], vy[jj, ii], vz[jj, ii]], axis=-1)
        colors = rgb[jj, ii] / 255.0
        return TriMesh(verts, tris, colors)


def call_with_retries(
    endpoint: BackendEndpoint,
    request: Callable[[], object],
    stage: str = "backend",
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
):
    """Run an idempotent request with exponential backoff.

    At most 1 + max_retries attempts; delay before retry k (0-based) is
    0.5 * 2**k seconds stretched by up to 10% jitter.
    """
    rng = rng or random.Random()
    last: Exception | None = None
    attempts = endpoint.max_retries + 1
    for attempt in range(attempts):
        try:
            return request()
        except Exception as e:  # noqa: BLE001 - every failure is retryable here
            last = e
            if attempt < attempts - 1:
                delay = BACKOFF_BASE_S * (BACKOFF_FACTOR**attempt)
                sleep(delay * (1.0 + rng.uniform(0.0, BACKOFF_JITTER)))
    raise BackendUnavailable(stage, last, attempts)


class RemoteBackend:
    """HTTP client for remote generative endpoints.

    Never mutates local state on failure: each call either returns a full
    stage output or raises.  A custom httpx.Client (e.g. with a mock
    transport) can be injected for testing.
    """

    def __init__(self, endpoint: BackendEndpoint, client: httpx.Client | None = None,
                 mesh_format: str = "obj"):
        if mesh_format not in ("obj", "glb"):
            raise ValueError("mesh_format must be 'obj' or 'glb'")
        self.endpoint = endpoint
        self.mesh_format = mesh_format
        headers = {}
        if endpoint.auth_token:
            headers["Authorization"] = f"Bearer {endpoint.auth_token}"
        self._client = client or httpx.Client(timeout=endpoint.request_timeout, headers=headers)

    def _post(self, path: str, payload: dict, stage: str) -> dict:
        url = self.endpoint.base_url.rstrip("/") + path

        def request():
            resp = self._client.post(url, json=payload, timeout=self.endpoint.request_timeout)
            if resp.status_code >= 400:
                try:
                    detail = resp.json().get("error", resp.text)
                except ValueError:
                    detail = resp.text
                raise httpx.HTTPStatusError(
                    f"HTTP {resp.status_code}: {detail}", request=resp.request, response=resp
                )
            return resp.json()

        return call_with_retries(self.endpoint, request, stage=stage)

    def text_to_image(self, conditioning: GrayImage, cfg: GenerationConfig) -> RGBImage:
        payload = {
            "prompt": cfg.prompt,
            "seed": cfg.seed,
            "control_mode": cfg.control_mode.value,
            "checkpoint_id": cfg.checkpoint_id,
            "depth_png_base64": base64.b64encode(imaging.save_gray_png(conditioning)).decode(),
        }
        reply = self._post("/generate", payload, stage="generate")
        image = imaging.load_rgb_png(base64.b64decode(reply["image_png_base64"]))
        if (image.width, image.height) != (conditioning.width, conditioning.height):
            raise InvalidInput("generated image dimensions do not match the conditioning")
        return image

    def remove_background(self, image: RGBImage) -> tuple[RgbaImage, SegmentationMask]:
        payload = {"image_png_base64": base64.b64encode(imaging.save_rgb_png(image)).decode()}
        reply = self._post("/rembg", payload, stage="rembg")
        cutout = imaging.load_rgba_png(base64.b64decode(reply["cutout_png_base64"]))
        fg = cutout.alpha > 0
        if not fg.any():
            raise NothingSegmented("remote rembg returned a fully transparent cutout")
        return cutout, SegmentationMask(cutout.width, cutout.height, fg)

    def image_to_mesh(self, cutout: RgbaImage) -> TriMesh:
        if not (cutout.alpha > 0).any():
            raise NothingSegmented("cutout has no opaque pixels")
        payload = {
            "cutout_png_base64": base64.b64encode(imaging.save_rgba_png(cutout)).decode(),
            "format": self.mesh_format,
        }
        reply = self._post("/reconstruct", payload, stage="reconstruct")
        blob = base64.b64decode(reply["model_base64"])
        fmt = reply.get("format", self.mesh_format)
        if fmt == "obj":
            return geometry.parse_obj(blob)
        if fmt == "glb":
            return geometry.parse_glb(blob)
        raise BackendUnavailable("reconstruct", f"unknown model format {fmt!r}")
