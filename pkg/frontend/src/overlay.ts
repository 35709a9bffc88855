// Canvas overlay: the anchored mesh (wireframe) plus a translucent box for
// the physical object's extent, both drawn at the latest stream pose. No
// client-side tracking simulation happens here; if the stream freezes, the
// drawing freezes.

import { meshEdges, type ParsedMesh } from "./obj.js";
import { applySnapshot, initialOverlayState, type OverlayState } from "./store.js";
import type { PoseJson, Quat, TrackingSnapshot, Vec3 } from "./types.js";

export function rotatePoint(q: Quat, v: Vec3): Vec3 {
  const [w, x, y, z] = q;
  const [vx, vy, vz] = v;
  const tx = y * vz - z * vy + w * vx;
  const ty = z * vx - x * vz + w * vy;
  const tz = x * vy - y * vx + w * vz;
  return [
    vx + 2 * (y * tz - z * ty),
    vy + 2 * (z * tx - x * tz),
    vz + 2 * (x * ty - y * tx),
  ];
}

export function applyPose(pose: PoseJson, v: Vec3): Vec3 {
  const r = rotatePoint(pose.quat, v);
  return [r[0] + pose.pos[0], r[1] + pose.pos[1], r[2] + pose.pos[2]];
}

export interface Viewport {
  width: number;
  height: number;
  center: Vec3; // world point mapped to the canvas center
  scale: number; // pixels per meter (orthographic)
}

export function project(view: Viewport, p: Vec3): [number, number] {
  return [
    view.width / 2 + (p[0] - view.center[0]) * view.scale,
    view.height / 2 - (p[1] - view.center[1]) * view.scale, // y up on screen
  ];
}

export function fitViewport(
  width: number,
  height: number,
  positions: Vec3[],
  furthestExtent: number,
): Viewport {
  let cx = 0;
  let cy = 0;
  let cz = 0;
  for (const p of positions) {
    cx += p[0];
    cy += p[1];
    cz += p[2];
  }
  const n = Math.max(1, positions.length);
  const center: Vec3 = [cx / n, cy / n, cz / n];
  let radius = furthestExtent;
  for (const p of positions) {
    const d = Math.hypot(p[0] - center[0], p[1] - center[1]);
    radius = Math.max(radius, d + furthestExtent);
  }
  const scale = (0.42 * Math.min(width, height)) / Math.max(radius, 1e-6);
  return { width, height, center, scale };
}

function boxEdges(extent: Vec3): Array<[Vec3, Vec3]> {
  const [hx, hy, hz] = [extent[0] / 2, extent[1] / 2, extent[2] / 2];
  const corners: Vec3[] = [];
  for (const sx of [-1, 1]) for (const sy of [-1, 1]) for (const sz of [-1, 1]) {
    corners.push([sx * hx, sy * hy, sz * hz]);
  }
  const pairs: Array<[number, number]> = [
    [0, 1], [0, 2], [0, 4], [1, 3], [1, 5], [2, 3],
    [2, 6], [3, 7], [4, 5], [4, 6], [5, 7], [6, 7],
  ];
  return pairs.map(([a, b]) => [corners[a]!, corners[b]!]);
}

const MAX_WIREFRAME_EDGES = 4000;

export class OverlayRenderer {
  state: OverlayState = initialOverlayState();
  private edges: Array<[number, number]> = [];
  private view: Viewport;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private mesh: ParsedMesh | null,
    private extent: Vec3,
    trajectoryPositions: Vec3[],
  ) {
    if (mesh) {
      this.edges = meshEdges(mesh.triangles);
      if (this.edges.length > MAX_WIREFRAME_EDGES) {
        const stride = Math.ceil(this.edges.length / MAX_WIREFRAME_EDGES);
        this.edges = this.edges.filter((_, i) => i % stride === 0);
      }
    }
    this.view = fitViewport(
      canvas.width,
      canvas.height,
      trajectoryPositions,
      Math.max(...extent, 1e-6),
    );
  }

  reset(): void {
    this.state = initialOverlayState();
    this.render();
  }

  onSnapshot(snap: TrackingSnapshot): void {
    this.state = applySnapshot(this.state, snap);
    this.render();
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#10141c";
    ctx.fillRect(0, 0, width, height);
    const pose = this.state.pose;
    if (!pose) {
      ctx.fillStyle = "#7a8699";
      ctx.font = "13px system-ui, sans-serif";
      ctx.fillText(
        this.state.phase === "Idle" ? "no stream yet" : "initializing…",
        12,
        height - 12,
      );
      return;
    }
    // physical-extent proxy box
    ctx.strokeStyle = "rgba(122, 162, 247, 0.55)";
    ctx.lineWidth = 1.2;
    for (const [a, b] of boxEdges(this.extent)) {
      const pa = project(this.view, applyPose(pose, a));
      const pb = project(this.view, applyPose(pose, b));
      ctx.beginPath();
      ctx.moveTo(pa[0], pa[1]);
      ctx.lineTo(pb[0], pb[1]);
      ctx.stroke();
    }
    // anchored mesh wireframe
    if (this.mesh) {
      ctx.strokeStyle = this.state.frozen ? "rgba(247, 118, 142, 0.8)" : "rgba(158, 206, 106, 0.8)";
      ctx.lineWidth = 0.8;
      const verts = this.mesh.vertices as Vec3[];
      ctx.beginPath();
      for (const [u, v] of this.edges) {
        const pa = project(this.view, applyPose(pose, verts[u]!));
        const pb = project(this.view, applyPose(pose, verts[v]!));
        ctx.moveTo(pa[0], pa[1]);
        ctx.lineTo(pb[0], pb[1]);
      }
      ctx.stroke();
    }
    // phase indicator
    ctx.font = "bold 13px system-ui, sans-serif";
    ctx.fillStyle = this.state.frozen ? "#f7768e" : "#9ece6a";
    ctx.fillText(
      this.state.frozen ? "LOST — overlay frozen" : this.state.phase.toUpperCase(),
      12,
      22,
    );
    ctx.fillStyle = "#7a8699";
    ctx.font = "12px system-ui, sans-serif";
    ctx.fillText(`t = ${this.state.lastT.toFixed(3)} s`, 12, 40);
  }
}
