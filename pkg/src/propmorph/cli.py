"""Command-line entry points: `pipeline run/resume`, `analyze`, `propmorph-serve`."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import analytics, imaging
from .backends import BackendEndpoint, ControlMode, GenerationConfig, RemoteBackend, StubBackend, StubConfig
from .pipeline import CaptureInput, Engine, PipelineConfig, Stage
from .service import ServiceConfig

EXIT_BY_STAGE = {Stage.ANCHORED: 0, Stage.FAILED: 2, Stage.CANCELLED: 3}


def _engine(out: Path, backend_mode: str, endpoint: str | None, inject_residual: bool) -> Engine:
    if backend_mode == "remote":
        if not endpoint:
            raise click.UsageError("--backend remote requires --endpoint URL")
        backend = RemoteBackend(BackendEndpoint(endpoint))
    else:
        backend = StubBackend(StubConfig(inject_residual=inject_residual))
    return Engine(Path(out), backend=backend, config=PipelineConfig())


def _finish(session) -> int:
    if session.error:
        click.echo(f"session {session.id}: {session.stage.value} "
                   f"({session.error['stage']}: {session.error['reason']})")
    else:
        click.echo(f"session {session.id}: {session.stage.value}")
    return EXIT_BY_STAGE.get(session.stage, 2)


@click.group()
def pipeline():
    """Run and resume capture-to-anchor sessions."""


@pipeline.command()
@click.option("--rgb", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--depth", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--intrinsics", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--mask", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--prompt", required=True)
@click.option("--backend", type=click.Choice(["stub", "remote"]), default="stub")
@click.option("--endpoint", default=None, help="Remote backend base URL.")
@click.option("--seed", type=int, default=0)
@click.option("--control-mode", type=click.Choice([m.value for m in ControlMode]), default="balanced")
@click.option("--inject-residual", is_flag=True, help="Stub fault injection: plant a residual blob.")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Data root directory.")
def run(rgb, depth, intrinsics, mask, prompt, backend, endpoint, seed, control_mode, inject_residual, out):
    """Create a session from capture files and run it to completion."""
    engine = _engine(out, backend, endpoint, inject_residual)
    capture = CaptureInput(
        rgb=imaging.load_rgb_png(rgb.read_bytes()),
        depth=imaging.load_depth_png(depth.read_bytes()),
        intrinsics=imaging.load_intrinsics_json(intrinsics),
        mask=imaging.load_mask_png(mask.read_bytes()) if mask else None,
    )
    cfg = GenerationConfig(prompt=prompt, seed=seed, control_mode=ControlMode(control_mode))
    session_id = engine.create_session(capture, prompt, cfg)
    session = engine.run_to_completion(session_id)
    sys.exit(_finish(session))


@pipeline.command()
@click.option("--id", "session_id", required=True)
@click.option("--backend", type=click.Choice(["stub", "remote"]), default="stub")
@click.option("--endpoint", default=None)
@click.option("--out", type=click.Path(exists=True, path_type=Path), required=True)
def resume(session_id, backend, endpoint, out):
    """Resume a persisted session and run it to completion."""
    engine = _engine(out, backend, endpoint, inject_residual=False)
    session = engine.get_session(session_id)
    if session.stage not in EXIT_BY_STAGE:
        session = engine.run_to_completion(session_id)
    sys.exit(_finish(session))


@click.command()
@click.option("--records", type=click.Path(exists=True, path_type=Path), default=None,
              help="CSV of prompt records; defaults to the bundled study fixture.")
@click.option("--group", type=click.Choice(["A", "B", "C", "all"]), default="all")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of a table.")
@click.option("--sample-stddev", is_flag=True, help="Use the sample convention (divisor n-1).")
def analyze(records, group, as_json, sample_stddev):
    """Summarize 7-point ratings per prompt group."""
    recs = analytics.load_records(records) if records else analytics.load_study_fixture()
    if group == "all":
        rep = analytics.report(recs, use_sample_stddev=sample_stddev)
        click.echo(analytics.report_json(rep) if as_json else analytics.render_report(rep))
    else:
        summary = analytics.summarize(recs, group=group, use_sample_stddev=sample_stddev)
        if as_json:
            click.echo(json.dumps({"group": group, **summary.to_dict()}, indent=2))
        else:
            click.echo(f"group {group}: n={summary.n} mean={summary.mean:.3f} stddev={summary.stddev:.3f}")


@click.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--port", type=int, default=None)
@click.option("--root", type=click.Path(path_type=Path), default=None)
@click.option("--cors", multiple=True, help="Allowed CORS origin (repeatable).")
def serve(config_path, port, root, cors):
    """Start the HTTP service."""
    from dataclasses import replace

    from . import service as service_mod

    cfg = ServiceConfig.from_file(config_path) if config_path else ServiceConfig.from_env()
    if port is not None:
        cfg = replace(cfg, port=port)
    if root is not None:
        cfg = replace(cfg, root=root)
    if cors:
        cfg = replace(cfg, cors_origins=tuple(cors))
    click.echo(f"serving on http://{cfg.host}:{cfg.port} (root: {cfg.root})", err=True)
    service_mod.run(cfg)
