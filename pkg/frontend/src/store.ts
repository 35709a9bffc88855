// Console state: session cards and the overlay pose stream. All UI state
// flows through here so updates stay serialized and testable.

import type { PoseJson, SessionJson, TrackingSnapshot } from "./types.js";

export interface OverlayState {
  pose: PoseJson | null;
  phase: "Initializing" | "Tracking" | "Lost" | "Idle";
  lastT: number;
  applied: number;
  /** Pose history bit: true while the stream reports Lost (mesh frozen). */
  frozen: boolean;
}

export function initialOverlayState(): OverlayState {
  return { pose: null, phase: "Idle", lastT: -Infinity, applied: 0, frozen: false };
}

/** Apply one snapshot. Pure: returns the previous state unchanged for
 * out-of-order timestamps; the on-screen pose is exactly the stream's pose
 * (frozen poses keep arriving from the server while Lost). */
export function applySnapshot(state: OverlayState, snap: TrackingSnapshot): OverlayState {
  if (snap.t <= state.lastT) return state;
  return {
    pose: snap.pose ?? state.pose,
    phase: snap.phase,
    lastT: snap.t,
    applied: state.applied + 1,
    frozen: snap.phase === "Lost",
  };
}

/** Group sessions by the capture they transform (capture_rgb content hash),
 * mirroring the three-attempts-per-prop study protocol. */
export function groupByCapture(sessions: SessionJson[]): Map<string, SessionJson[]> {
  const groups = new Map<string, SessionJson[]>();
  for (const s of sessions) {
    const key = s.kinds["capture_rgb"]?.hash ?? "unknown";
    const bucket = groups.get(key);
    if (bucket) bucket.push(s);
    else groups.set(key, [s]);
  }
  for (const bucket of groups.values()) {
    bucket.sort((a, b) => a.created_at.localeCompare(b.created_at));
  }
  return groups;
}

export function validatePrompt(prompt: string): string | null {
  if (prompt.trim().length === 0) return "Prompt must not be empty.";
  return null;
}

type Listener = () => void;

export class SessionStore {
  private sessions = new Map<string, SessionJson>();
  private order: string[] = [];
  private listeners = new Set<Listener>();

  upsert(session: SessionJson): void {
    if (!this.sessions.has(session.id)) this.order.push(session.id);
    this.sessions.set(session.id, session);
    this.notify();
  }

  get(id: string): SessionJson | undefined {
    return this.sessions.get(id);
  }

  all(): SessionJson[] {
    return this.order
      .map((id) => this.sessions.get(id))
      .filter((s): s is SessionJson => s !== undefined);
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }
}
