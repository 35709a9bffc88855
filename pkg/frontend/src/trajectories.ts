// Scripted ground-truth trajectories for the overlay view. The object orbits
// gently in front of the camera while yawing; the occlusion toggle injects a
// window where the tracker must lose the object and freeze the overlay.

import type { Keyframe, Quat, Vec3 } from "./types.js";

export interface OrbitOptions {
  /** Meters; pick relative to the physical extent so motion reads well. */
  radius: number;
  duration?: number;
  standoff?: number; // distance from the camera along +z
  keyframeStep?: number;
  occlusionWindow?: [number, number] | null;
}

export function yawQuat(angleRad: number): Quat {
  return [Math.cos(angleRad / 2), 0, 0, Math.sin(angleRad / 2)];
}

export function orbitTrajectory(opts: OrbitOptions): Keyframe[] {
  const duration = opts.duration ?? 2.0;
  const step = opts.keyframeStep ?? 0.05;
  const standoff = opts.standoff ?? 0.8;
  const window = opts.occlusionWindow ?? null;
  const keyframes: Keyframe[] = [];
  const steps = Math.round(duration / step);
  for (let k = 0; k <= steps; k++) {
    const t = Number((k * step).toFixed(4));
    const angle = (2 * Math.PI * t) / duration / 4; // quarter orbit over the run
    const pos: Vec3 = [
      opts.radius * Math.cos(angle),
      opts.radius * Math.sin(angle),
      standoff,
    ];
    const occluded = window !== null && t >= window[0] && t <= window[1];
    keyframes.push({ t, pos, quat: yawQuat(angle), occlusion: occluded ? 1.0 : 0.0 });
  }
  return keyframes;
}

export const DEFAULT_OCCLUSION_WINDOW: [number, number] = [0.5, 1.0];
