// Typed client for the service HTTP API. The console is a pure client:
// every number and stage it shows comes from one of these calls.

import { createSseParser } from "./sse.js";
import type {
  Keyframe,
  LikertSummary,
  SessionJson,
  TargetRef,
  TrackingSnapshot,
} from "./types.js";

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export interface CaptureParts {
  rgb: Blob;
  depth: Blob;
  intrinsics: Blob;
  mask?: Blob;
}

async function errorFrom(resp: Response): Promise<ServiceError> {
  let message = `HTTP ${resp.status}`;
  try {
    const body = (await resp.json()) as { error?: string };
    if (body.error) message = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ServiceError(resp.status, message);
}

export class ServiceClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.url(path), init);
    if (!resp.ok) throw await errorFrom(resp);
    return (await resp.json()) as T;
  }

  async createSession(
    capture: CaptureParts,
    prompt: string,
    seed: number,
    controlMode = "balanced",
  ): Promise<{ id: string }> {
    const form = new FormData();
    form.append("rgb", capture.rgb, "rgb.png");
    form.append("depth", capture.depth, "depth.png");
    form.append("intrinsics", capture.intrinsics, "intrinsics.json");
    if (capture.mask) form.append("mask", capture.mask, "mask.png");
    form.append("prompt", prompt);
    form.append("seed", String(seed));
    form.append("control_mode", controlMode);
    return this.json<{ id: string }>("/sessions", { method: "POST", body: form });
  }

  listSessions(): Promise<SessionJson[]> {
    return this.json<SessionJson[]>("/sessions");
  }

  getSession(id: string): Promise<SessionJson> {
    return this.json<SessionJson>(`/sessions/${id}`);
  }

  artifactUrl(id: string, kind: string): string {
    return this.url(`/sessions/${id}/artifacts/${kind}`);
  }

  async fetchArtifactText(id: string, kind: string): Promise<string> {
    const resp = await this.fetchFn(this.artifactUrl(id, kind));
    if (!resp.ok) throw await errorFrom(resp);
    return resp.text();
  }

  async fetchTargetRef(id: string): Promise<TargetRef> {
    const resp = await this.fetchFn(this.artifactUrl(id, "target_ref"));
    if (!resp.ok) throw await errorFrom(resp);
    return (await resp.json()) as TargetRef;
  }

  postTrajectory(
    id: string,
    keyframes: Keyframe[],
    tracker?: Record<string, number>,
  ): Promise<{ frames: number; episodes: number }> {
    const body: Record<string, unknown> = { keyframes };
    if (tracker) body.tracker = tracker;
    return this.json(`/sessions/${id}/trajectory`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  /** Consume the tracking stream; snapshots arrive in timestamp order at the
   * server's cadence. Resolves after the server's end event. */
  async streamTrack(
    id: string,
    onSnapshot: (snap: TrackingSnapshot) => void,
    options: { pace?: "realtime" | "off"; onEnd?: (summary: unknown) => void } = {},
  ): Promise<number> {
    const pace = options.pace ?? "realtime";
    const resp = await this.fetchFn(this.url(`/sessions/${id}/track?pace=${pace}`));
    if (!resp.ok) throw await errorFrom(resp);
    if (!resp.body) throw new ServiceError(0, "response has no body stream");
    let count = 0;
    let lastT = -Infinity;
    const parser = createSseParser((ev) => {
      if (ev.event === "end") {
        options.onEnd?.(JSON.parse(ev.data));
        return;
      }
      const snap = JSON.parse(ev.data) as TrackingSnapshot;
      if (snap.t <= lastT) return; // never apply out of order
      lastT = snap.t;
      count += 1;
      onSnapshot(snap);
    });
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      parser.push(decoder.decode(value, { stream: true }));
    }
    parser.end();
    return count;
  }

  async postRating(id: string, rating: number): Promise<void> {
    const resp = await this.fetchFn(this.url(`/sessions/${id}/rating`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ rating }),
    });
    if (!resp.ok) throw await errorFrom(resp);
  }

  analyticsSummary(group: string): Promise<LikertSummary> {
    return this.json<LikertSummary>(`/analytics/summary?group=${group}`);
  }

  analyticsRecords(): Promise<unknown[]> {
    return this.json<unknown[]>(`/analytics/records`);
  }
}
