"""Session orchestration: the capture-to-anchor pipeline as an explicit,
persisted state machine.

Stages run strictly in order within a session:

    Created -> DepthPreprocessed -> ImageGenerated -> BackgroundRemoved
            -> MeshReconstructed -> TargetBuilt -> Anchored

with Failed / Cancelled as terminal exits.  Every stage writes its outputs
to a content-addressed artifact store before the stage is marked complete,
so each intermediate (color depth, conditioning grayscale, generated image,
cutout, mesh, target) is inspectable and a crash between stages loses
nothing.  Sessions are persisted as an append-only event log; the
materialized view is rebuilt by folding the events.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from . import imaging
from .backends import ControlMode, GenerationConfig, GenerativeBackend, StubBackend
from .geometry import normalize_mesh, parse_obj, write_obj
from .imaging import (
    CameraIntrinsics,
    ColormapSpec,
    DepthFrame,
    RGBImage,
    SegmentationMask,
)
from .tracking import ModelTarget, build_model_target


class InvalidCapture(ValueError):
    pass


class InvalidTransition(RuntimeError):
    pass


class InvalidRating(ValueError):
    pass


class NotFound(KeyError):
    pass


class ProvenanceViolation(RuntimeError):
    pass


class StageFailed(RuntimeError):
    """Internal: stage executor failure with a machine-readable reason."""

    def __init__(self, reason: str, detail: dict | None = None):
        super().__init__(reason)
        self.reason = reason
        self.detail = detail or {}


class Stage(str, Enum):
    CREATED = "Created"
    DEPTH_PREPROCESSED = "DepthPreprocessed"
    IMAGE_GENERATED = "ImageGenerated"
    BACKGROUND_REMOVED = "BackgroundRemoved"
    MESH_RECONSTRUCTED = "MeshReconstructed"
    TARGET_BUILT = "TargetBuilt"
    ANCHORED = "Anchored"
    FAILED = "Failed"
    CANCELLED = "Cancelled"


_ORDER = [
    Stage.CREATED,
    Stage.DEPTH_PREPROCESSED,
    Stage.IMAGE_GENERATED,
    Stage.BACKGROUND_REMOVED,
    Stage.MESH_RECONSTRUCTED,
    Stage.TARGET_BUILT,
    Stage.ANCHORED,
]
TERMINAL = {Stage.ANCHORED, Stage.FAILED, Stage.CANCELLED}

# Artifact kinds exposed over the service API, with content types.
ARTIFACT_CONTENT_TYPES = {
    "capture_rgb": "image/png",
    "capture_depth": "image/png",
    "capture_mask": "image/png",
    "intrinsics": "application/json",
    "depth_color": "image/png",
    "depth_gray": "image/png",
    "generated": "image/png",
    "cutout": "image/png",
    "mask": "image/png",
    "mask_report": "application/json",
    "mesh_obj": "model/obj",
    "extent": "application/json",
    "target_ref": "application/json",
    "anchor": "application/json",
}


@dataclass(frozen=True)
class CaptureInput:
    rgb: RGBImage  # the original physical object; provenance "original"
    depth: DepthFrame
    intrinsics: CameraIntrinsics
    mask: SegmentationMask | None = None

    def __post_init__(self):
        dims = (self.rgb.width, self.rgb.height)
        if (self.depth.width, self.depth.height) != dims:
            raise InvalidCapture("depth dimensions do not match the RGB capture")
        if self.mask is not None and (self.mask.width, self.mask.height) != dims:
            raise InvalidCapture("mask dimensions do not match the RGB capture")
        if self.intrinsics.width is not None and self.intrinsics.width != dims[0]:
            raise InvalidCapture("intrinsics width does not match the capture")
        if self.intrinsics.height is not None and self.intrinsics.height != dims[1]:
            raise InvalidCapture("intrinsics height does not match the capture")


@dataclass(frozen=True)
class PipelineConfig:
    near: float = 0.2  # meters; colormap/grayscale conversion range
    far: float = 2.0
    colormap: ColormapSpec = field(default_factory=lambda: imaging.DEFAULT_COLORMAP)
    max_centroid_shift: float = 5.0  # pixels
    max_residual_fraction: float = 0.05
    validation_mode: str = "fail"  # "fail" or "warn"
    # Which artifact kind feeds target building.  The stage enforces that the
    # chosen image carries "original" provenance, so anything except the
    # capture image fails with ProvenanceViolation.
    target_image_kind: str = "capture_rgb"

    def __post_init__(self):
        if self.validation_mode not in ("fail", "warn"):
            raise ValueError("validation_mode must be 'fail' or 'warn'")


class ArtifactStore:
    """Append-only store addressed by SHA-256 of content, with a sidecar
    content-type tag.  Writes are atomic (temp file + rename); entries are
    immutable once written."""

    def __init__(self, root: Path):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes, content_type: str) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.root / "objects" / digest
        if not path.exists():
            self._atomic_write(path, data)
            self._atomic_write(path.with_suffix(".type"), content_type.encode("utf-8"))
        return digest

    def get(self, digest: str) -> bytes:
        path = self.root / "objects" / digest
        if not path.exists():
            raise NotFound(digest)
        return path.read_bytes()

    def content_type(self, digest: str) -> str:
        path = self.root / "objects" / (digest + ".type")
        if not path.exists():
            raise NotFound(digest)
        return path.read_text(encoding="utf-8")

    def verify(self, digest: str) -> bool:
        try:
            return hashlib.sha256(self.get(digest)).hexdigest() == digest
        except NotFound:
            return False

    @staticmethod
    def _atomic_write(path: Path, data: bytes):
        tmp = path.with_name(path.name + f".tmp-{os.getpid()}-{uuid.uuid4().hex[:8]}")
        tmp.write_bytes(data)
        os.replace(tmp, path)


@dataclass
class Session:
    """Materialized view of a session's event log."""

    id: str
    prompt: str
    created_at: str
    seed: int
    control_mode: str
    checkpoint_id: str
    stage: Stage = Stage.CREATED
    artifacts: dict[str, dict[str, str]] = field(default_factory=dict)  # stage -> kind -> hash
    kinds: dict[str, dict] = field(default_factory=dict)  # kind -> {hash, provenance?}
    error: dict | None = None
    ratings: list[int] = field(default_factory=list)
    cancel_requested: bool = False
    events: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "created_at": self.created_at,
            "seed": self.seed,
            "control_mode": self.control_mode,
            "checkpoint_id": self.checkpoint_id,
            "stage": self.stage.value,
            "artifacts": self.artifacts,
            "kinds": self.kinds,
            "error": self.error,
            "ratings": list(self.ratings),
            "cancel_requested": self.cancel_requested,
        }

    def artifact_hash(self, kind: str) -> str | None:
        entry = self.kinds.get(kind)
        return entry["hash"] if entry else None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def replay_events(events: list[dict]) -> Session:
    """Fold an event log back into a session; the inverse of persistence."""
    if not events or events[0]["type"] != "created":
        raise ValueError("event log must start with a 'created' event")
    head = events[0]
    s = Session(
        id=head["id"],
        prompt=head["prompt"],
        created_at=head["at"],
        seed=head["seed"],
        control_mode=head["control_mode"],
        checkpoint_id=head["checkpoint_id"],
    )
    for ev in events:
        kind = ev["type"]
        if kind == "created":
            pass
        elif kind == "stage":
            s.stage = Stage(ev["stage"])
            s.artifacts[ev["stage"]] = {k: v["hash"] for k, v in ev["artifacts"].items()}
            for k, v in ev["artifacts"].items():
                s.kinds[k] = dict(v)
        elif kind == "failed":
            s.stage = Stage.FAILED
            s.error = {"stage": ev["stage"], "reason": ev["reason"], "detail": ev.get("detail")}
        elif kind == "cancel_requested":
            s.cancel_requested = True
        elif kind == "cancelled":
            s.stage = Stage.CANCELLED
        elif kind == "rating":
            s.ratings.append(ev["rating"])
        else:
            raise ValueError(f"unknown event type {kind!r}")
    s.events = list(events)
    return s


class Engine:
    """Owns the artifact store, the persisted sessions and the backends.

    Many sessions may advance concurrently; within a session stages are
    strictly sequential.  Session metadata updates take a short per-engine
    lock; stage execution (backend calls, image work) runs outside it so
    reads never wait on a running stage.
    """

    def __init__(
        self,
        root: Path,
        backend: GenerativeBackend | None = None,
        config: PipelineConfig | None = None,
    ):
        self.root = Path(root)
        self.store = ArtifactStore(self.root)
        self.backend = backend or StubBackend()
        self.config = config or PipelineConfig()
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._running: set[str] = set()
        self._targets: dict[str, ModelTarget] = {}
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        for path in sorted((self.root / "sessions").glob("*.json")):
            session = self._load(path)
            self._sessions[session.id] = session

    # --- persistence ---

    def _session_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.json"

    def _persist(self, session: Session):
        payload = {"state": session.to_dict(), "events": session.events}
        data = json.dumps(payload, indent=1).encode("utf-8")
        ArtifactStore._atomic_write(self._session_path(session.id), data)

    def _load(self, path: Path) -> Session:
        payload = json.loads(path.read_text(encoding="utf-8"))
        session = replay_events(payload["events"])
        stored_stage = payload["state"]["stage"]
        if session.stage.value != stored_stage:
            raise ValueError(
                f"session {session.id}: event log folds to {session.stage.value}, "
                f"stored state says {stored_stage}"
            )
        return session

    def _append(self, session: Session, event: dict):
        event = {"at": _now(), **event}
        session.events.append(event)
        self._persist(session)

    # --- session API ---

    def create_session(self, capture: CaptureInput, prompt: str, cfg: GenerationConfig | None = None) -> str:
        if not prompt or not prompt.strip():
            raise InvalidCapture("prompt must be non-empty")
        cfg = cfg or GenerationConfig(prompt=prompt)
        if cfg.prompt != prompt:
            cfg = replace(cfg, prompt=prompt)
        session_id = str(uuid.uuid4())
        artifacts = {
            "capture_rgb": {
                "hash": self.store.put(imaging.save_rgb_png(capture.rgb), "image/png"),
                "provenance": "original",
            },
            "capture_depth": {
                "hash": self.store.put(imaging.save_depth_png(capture.depth), "image/png"),
            },
            "intrinsics": {
                "hash": self.store.put(
                    imaging.save_intrinsics_json(capture.intrinsics), "application/json"
                ),
            },
        }
        if capture.mask is not None:
            artifacts["capture_mask"] = {
                "hash": self.store.put(imaging.save_mask_png(capture.mask), "image/png"),
            }
        session = Session(
            id=session_id,
            prompt=prompt,
            created_at=_now(),
            seed=cfg.seed,
            control_mode=cfg.control_mode.value,
            checkpoint_id=cfg.checkpoint_id,
        )
        session.events.append(
            {
                "at": session.created_at,
                "type": "created",
                "id": session_id,
                "prompt": prompt,
                "seed": cfg.seed,
                "control_mode": cfg.control_mode.value,
                "checkpoint_id": cfg.checkpoint_id,
            }
        )
        session.stage = Stage.CREATED
        session.artifacts[Stage.CREATED.value] = {k: v["hash"] for k, v in artifacts.items()}
        session.kinds.update(artifacts)
        session.events.append(
            {"at": _now(), "type": "stage", "stage": Stage.CREATED.value, "artifacts": artifacts}
        )
        with self._lock:
            self._persist(session)
            self._sessions[session_id] = session
        return session_id

    def get_session(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                raise NotFound(session_id)
            return self._sessions[session_id]

    def list_sessions(self) -> list[Session]:
        with self._lock:
            return sorted(self._sessions.values(), key=lambda s: s.created_at)

    def advance(self, session_id: str) -> Session:
        """Execute exactly the next stage.  Backend and validation errors
        transition the session to Failed with the stage and cause recorded;
        the session stays inspectable."""
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise NotFound(session_id)
            if session.stage in TERMINAL:
                raise InvalidTransition(f"session is terminal ({session.stage.value})")
            if session.cancel_requested:
                session.stage = Stage.CANCELLED
                self._append(session, {"type": "cancelled"})
                return session
            if session_id in self._running:
                raise InvalidTransition("a stage is already executing for this session")
            self._running.add(session_id)
            next_stage = _ORDER[_ORDER.index(session.stage) + 1]
        try:
            artifacts = self._execute(session, next_stage)
        except StageFailed as e:
            with self._lock:
                self._running.discard(session_id)
                session.stage = Stage.FAILED
                session.error = {"stage": next_stage.value, "reason": e.reason, "detail": e.detail}
                self._append(
                    session,
                    {"type": "failed", "stage": next_stage.value, "reason": e.reason, "detail": e.detail},
                )
            return session
        except BaseException:
            with self._lock:
                self._running.discard(session_id)
            raise
        with self._lock:
            self._running.discard(session_id)
            session.stage = next_stage
            session.artifacts[next_stage.value] = {k: v["hash"] for k, v in artifacts.items()}
            session.kinds.update(artifacts)
            self._append(session, {"type": "stage", "stage": next_stage.value, "artifacts": artifacts})
        return session

    def run_to_completion(self, session_id: str) -> Session:
        session = self.get_session(session_id)
        while session.stage not in TERMINAL:
            session = self.advance(session_id)
        return session

    def cancel(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise NotFound(session_id)
            if session.stage in TERMINAL:
                raise InvalidTransition(f"session is terminal ({session.stage.value})")
            session.cancel_requested = True
            self._append(session, {"type": "cancel_requested"})
            if session_id not in self._running:
                # no stage in flight: take effect immediately
                session.stage = Stage.CANCELLED
                self._append(session, {"type": "cancelled"})
            return session

    def record_rating(self, session_id: str, rating: int):
        if not isinstance(rating, int) or not (1 <= rating <= 7):
            raise InvalidRating(f"rating must be an integer in [1, 7], got {rating!r}")
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise NotFound(session_id)
            session.ratings.append(rating)
            self._append(session, {"type": "rating", "rating": rating})
        with open(self.root / "ratings.jsonl", "a", encoding="utf-8") as f:
            f.write(
                json.dumps(
                    {
                        "participant": session_id,
                        "attempt": len(session.ratings),
                        "prompt": session.prompt,
                        "rating": rating,
                        "group": None,
                    }
                )
                + "\n"
            )

    def live_rating_records(self) -> list[dict]:
        path = self.root / "ratings.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]

    # --- artifact access ---

    def artifact(self, session_id: str, kind: str) -> tuple[bytes, str]:
        session = self.get_session(session_id)
        digest = session.artifact_hash(kind)
        if digest is None:
            raise NotFound(kind)
        return self.store.get(digest), self.store.content_type(digest)

    def verify_session(self, session_id: str) -> bool:
        session = self.get_session(session_id)
        return all(self.store.verify(v["hash"]) for v in session.kinds.values())

    def model_target(self, session_id: str) -> ModelTarget:
        """Rebuild the ModelTarget for an Anchored session from its stored
        artifacts (survives process restarts)."""
        with self._lock:
            if session_id in self._targets:
                return self._targets[session_id]
        session = self.get_session(session_id)
        if session.stage is not Stage.ANCHORED:
            raise InvalidTransition("session is not Anchored")
        ref_json = json.loads(self.store.get(session.artifact_hash("target_ref")))
        image = imaging.load_rgb_png(self.store.get(ref_json["reference_image"]))
        mesh = parse_obj(self.store.get(ref_json["mesh"]))
        target = build_model_target(image, mesh, tuple(ref_json["physical_extent"]))
        with self._lock:
            self._targets[session_id] = target
        return target

    # --- stage executors ---

    def _execute(self, session: Session, stage: Stage) -> dict[str, dict]:
        try:
            if stage is Stage.DEPTH_PREPROCESSED:
                return self._stage_depth(session)
            if stage is Stage.IMAGE_GENERATED:
                return self._stage_generate(session)
            if stage is Stage.BACKGROUND_REMOVED:
                return self._stage_rembg(session)
            if stage is Stage.MESH_RECONSTRUCTED:
                return self._stage_mesh(session)
            if stage is Stage.TARGET_BUILT:
                return self._stage_target(session)
            if stage is Stage.ANCHORED:
                return self._stage_anchor(session)
            raise AssertionError(f"no executor for {stage}")
        except StageFailed:
            raise
        except ProvenanceViolation as e:
            raise StageFailed("ProvenanceViolation", {"message": str(e)}) from e
        except Exception as e:
            raise StageFailed(type(e).__name__, {"message": str(e)}) from e

    def _get_image(self, session: Session, kind: str) -> RGBImage:
        return imaging.load_rgb_png(self.store.get(session.artifact_hash(kind)))

    def _stage_depth(self, session: Session) -> dict[str, dict]:
        depth = imaging.load_depth_png(self.store.get(session.artifact_hash("capture_depth")))
        cm = self.config.colormap
        color = imaging.encode_depth_colormap(depth, cm, self.config.near, self.config.far)
        gray = imaging.depth_colormap_to_grayscale(color, cm, self.config.near, self.config.far)
        return {
            "depth_color": {"hash": self.store.put(imaging.save_rgb_png(color), "image/png")},
            "depth_gray": {"hash": self.store.put(imaging.save_gray_png(gray), "image/png")},
        }

    def _stage_generate(self, session: Session) -> dict[str, dict]:
        gray = imaging.load_gray_png(self.store.get(session.artifact_hash("depth_gray")))
        cfg = GenerationConfig(
            prompt=session.prompt,
            seed=session.seed,
            control_mode=ControlMode(session.control_mode),
            checkpoint_id=session.checkpoint_id,
        )
        image = self.backend.text_to_image(gray, cfg)
        return {
            "generated": {
                "hash": self.store.put(imaging.save_rgb_png(image), "image/png"),
                "provenance": "generated",
            }
        }

    def _stage_rembg(self, session: Session) -> dict[str, dict]:
        image = self._get_image(session, "generated")
        cutout, mask = self.backend.remove_background(image)
        report = imaging.validate_background_removal(
            mask, self.config.max_centroid_shift, self.config.max_residual_fraction
        )
        if not report.passed and self.config.validation_mode == "fail":
            raise StageFailed("BackgroundValidationFailed", {"mask_report": report.to_dict()})
        return {
            "cutout": {"hash": self.store.put(imaging.save_rgba_png(cutout), "image/png")},
            "mask": {"hash": self.store.put(imaging.save_mask_png(mask), "image/png")},
            "mask_report": {
                "hash": self.store.put(
                    json.dumps(report.to_dict(), sort_keys=True).encode(), "application/json"
                )
            },
        }

    def _capture_extent(self, session: Session) -> tuple[float, float, float]:
        depth = imaging.load_depth_png(self.store.get(session.artifact_hash("capture_depth")))
        intr = imaging.load_intrinsics_json(self.store.get(session.artifact_hash("intrinsics")))
        mask_kind = "capture_mask" if session.artifact_hash("capture_mask") else "mask"
        mask = imaging.load_mask_png(self.store.get(session.artifact_hash(mask_kind)))
        return imaging.object_extent(depth, mask, intr)

    def _stage_mesh(self, session: Session) -> dict[str, dict]:
        cutout = imaging.load_rgba_png(self.store.get(session.artifact_hash("cutout")))
        mesh = self.backend.image_to_mesh(cutout)
        extent = self._capture_extent(session)
        normalized = normalize_mesh(mesh, max(extent))
        return {
            "mesh_obj": {"hash": self.store.put(write_obj(normalized), "model/obj")},
            "extent": {
                "hash": self.store.put(
                    json.dumps({"extent_m": list(extent)}, sort_keys=True).encode(),
                    "application/json",
                )
            },
        }

    def _stage_target(self, session: Session) -> dict[str, dict]:
        kind = self.config.target_image_kind
        entry = session.kinds.get(kind)
        if entry is None:
            raise StageFailed("MissingArtifact", {"kind": kind})
        if entry.get("provenance") != "original":
            raise ProvenanceViolation(
                f"target building requires the original object image; "
                f"{kind!r} carries provenance {entry.get('provenance')!r}"
            )
        image = imaging.load_rgb_png(self.store.get(entry["hash"]))
        mesh = parse_obj(self.store.get(session.artifact_hash("mesh_obj")))
        extent = json.loads(self.store.get(session.artifact_hash("extent")))["extent_m"]
        target = build_model_target(image, mesh, tuple(extent))
        ref = {
            "reference_image": entry["hash"],
            "mesh": session.artifact_hash("mesh_obj"),
            "physical_extent": list(target.physical_extent),
            "alignment_offset": target.alignment_offset.to_dict(),
        }
        return {
            "target_ref": {
                "hash": self.store.put(json.dumps(ref, sort_keys=True).encode(), "application/json")
            }
        }

    def _stage_anchor(self, session: Session) -> dict[str, dict]:
        ref_hash = session.artifact_hash("target_ref")
        ref = json.loads(self.store.get(ref_hash))
        image = imaging.load_rgb_png(self.store.get(ref["reference_image"]))
        mesh = parse_obj(self.store.get(ref["mesh"]))
        target = build_model_target(image, mesh, tuple(ref["physical_extent"]))
        with self._lock:
            self._targets[session.id] = target
        anchor = {"target_ref": ref_hash, "alignment_offset": target.alignment_offset.to_dict()}
        return {
            "anchor": {
                "hash": self.store.put(json.dumps(anchor, sort_keys=True).encode(), "application/json")
            }
        }
