// DOM wiring for the operator console. All pipeline state shown here comes
// straight from service responses; the only client-side math is rendering.

import { ServiceClient, ServiceError, type CaptureParts } from "./api.js";
import { parseObj } from "./obj.js";
import { OverlayRenderer } from "./overlay.js";
import { SessionStore, groupByCapture, validatePrompt } from "./store.js";
import { DEFAULT_OCCLUSION_WINDOW, orbitTrajectory } from "./trajectories.js";
import { PIPELINE_STAGES, type SessionJson, type Vec3 } from "./types.js";

const params = new URLSearchParams(window.location.search);
const serviceUrl =
  params.get("service") ?? localStorage.getItem("propmorph.service") ?? "http://127.0.0.1:8800";

let client = new ServiceClient(serviceUrl);
const store = new SessionStore();
const polling = new Set<string>();
let overlay: OverlayRenderer | null = null;
let overlaySession: string | null = null;
let streaming = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const banner = el<HTMLDivElement>("banner");
const bannerText = el<HTMLSpanElement>("banner-text");
const retryButton = el<HTMLButtonElement>("banner-retry");
let lastFailedAction: (() => void) | null = null;

function showError(message: string, retry: (() => void) | null = null) {
  bannerText.textContent = message;
  lastFailedAction = retry;
  retryButton.style.display = retry ? "inline-block" : "none";
  banner.style.display = "flex";
}

function clearError() {
  banner.style.display = "none";
  lastFailedAction = null;
}

retryButton.addEventListener("click", () => {
  clearError();
  lastFailedAction?.();
});

// --- capture selection -----------------------------------------------------

let capture: CaptureParts | null = null;

async function loadBundledCapture(): Promise<void> {
  const [rgb, depth, intrinsics] = await Promise.all(
    ["rgb.png", "depth.png", "intrinsics.json"].map(async (name) => {
      const resp = await fetch(`./public/fixtures/${name}`);
      if (!resp.ok) throw new Error(`fixture ${name} missing`);
      return resp.blob();
    }),
  );
  capture = { rgb: rgb!, depth: depth!, intrinsics: intrinsics! };
  const img = el<HTMLImageElement>("capture-preview");
  img.src = URL.createObjectURL(capture.rgb);
  el<HTMLSpanElement>("capture-name").textContent = "bundled fixture (toy on a desk)";
}

el<HTMLInputElement>("capture-rgb").addEventListener("change", onUpload);
el<HTMLInputElement>("capture-depth").addEventListener("change", onUpload);
el<HTMLInputElement>("capture-intrinsics").addEventListener("change", onUpload);

function onUpload() {
  const rgb = el<HTMLInputElement>("capture-rgb").files?.[0];
  const depth = el<HTMLInputElement>("capture-depth").files?.[0];
  const intrinsics = el<HTMLInputElement>("capture-intrinsics").files?.[0];
  if (rgb && depth && intrinsics) {
    capture = { rgb, depth, intrinsics };
    el<HTMLImageElement>("capture-preview").src = URL.createObjectURL(rgb);
    el<HTMLSpanElement>("capture-name").textContent = `uploaded: ${rgb.name}`;
  }
}

// --- prompt submission -----------------------------------------------------

const promptInput = el<HTMLInputElement>("prompt");
const seedInput = el<HTMLInputElement>("seed");
const promptError = el<HTMLSpanElement>("prompt-error");

el<HTMLFormElement>("submit-form").addEventListener("submit", (ev) => {
  ev.preventDefault();
  void submitPrompt();
});

async function submitPrompt(): Promise<void> {
  const prompt = promptInput.value;
  const invalid = validatePrompt(prompt);
  promptError.textContent = invalid ?? "";
  if (invalid) return; // inline validation, no request
  if (!capture) {
    showError("Choose a capture first (bundled fixture or uploads).");
    return;
  }
  const seed = Number(seedInput.value) || 0;
  try {
    clearError();
    const { id } = await client.createSession(capture, prompt, seed);
    promptInput.value = "";
    pollSession(id);
  } catch (err) {
    const message = err instanceof ServiceError ? err.message : `service unreachable: ${err}`;
    showError(`Submit failed: ${message}`, () => void submitPrompt());
  }
}

function pollSession(id: string): void {
  if (polling.has(id)) return;
  polling.add(id);
  const tick = async () => {
    try {
      const session = await client.getSession(id);
      store.upsert(session);
      if (session.stage === "Anchored" || session.stage === "Failed" || session.stage === "Cancelled") {
        polling.delete(id);
        void refreshAnalytics();
        return;
      }
    } catch {
      // transient; keep polling
    }
    setTimeout(tick, 300);
  };
  void tick();
}

// --- session cards ---------------------------------------------------------

const cardsRoot = el<HTMLDivElement>("sessions");

function stageBadges(session: SessionJson): string {
  const reached = new Set(Object.keys(session.artifacts));
  return PIPELINE_STAGES.map((stage) => {
    const cls =
      session.stage === "Failed" && session.error?.stage === stage
        ? "badge failed"
        : reached.has(stage)
          ? "badge done"
          : "badge";
    return `<span class="${cls}">${stage.replace(/([A-Z])/g, " $1").trim()}</span>`;
  }).join("");
}

function thumbnails(session: SessionJson): string {
  return ["depth_gray", "generated", "cutout"]
    .filter((kind) => session.kinds[kind])
    .map(
      (kind) =>
        `<a href="${client.artifactUrl(session.id, kind)}" target="_blank">` +
        `<img src="${client.artifactUrl(session.id, kind)}" alt="${kind}" title="${kind}"></a>`,
    )
    .join("");
}

function renderSessions(): void {
  const groups = groupByCapture(store.all());
  const chunks: string[] = [];
  let captureIndex = 0;
  for (const [, sessions] of groups) {
    captureIndex += 1;
    const attempts = sessions
      .map((session, i) => {
        const ratings = session.ratings.map((r) => `★${r}`).join(" ");
        const errorHtml = session.error
          ? `<div class="error">${session.error.stage}: ${session.error.reason}</div>`
          : "";
        const overlayButton =
          session.stage === "Anchored"
            ? `<button data-overlay="${session.id}">view overlay</button>`
            : `<button disabled>view overlay</button>`;
        const rateButtons = [1, 2, 3, 4, 5, 6, 7]
          .map((r) => `<button class="rate" data-rate="${session.id}:${r}">${r}</button>`)
          .join("");
        return `<div class="card" data-session="${session.id}">
            <div class="card-head"><b>attempt ${i + 1}</b> — “${session.prompt}” <code>seed ${session.seed}</code></div>
            <div class="badges">${stageBadges(session)}</div>
            ${errorHtml}
            <div class="thumbs">${thumbnails(session)}</div>
            <div class="actions">${overlayButton}
              <span class="rate-group">rate: ${rateButtons}</span>
              <span class="ratings">${ratings}</span></div>
          </div>`;
      })
      .join("");
    chunks.push(`<section class="capture-group"><h3>capture ${captureIndex} — ${sessions.length} attempt(s)</h3>${attempts}</section>`);
  }
  cardsRoot.innerHTML = chunks.join("") || `<p class="muted">No sessions yet — submit a prompt.</p>`;
  cardsRoot.querySelectorAll<HTMLButtonElement>("button[data-overlay]").forEach((button) => {
    button.addEventListener("click", () => void startOverlay(button.dataset.overlay!));
  });
  cardsRoot.querySelectorAll<HTMLButtonElement>("button.rate").forEach((button) => {
    button.addEventListener("click", () => {
      const [id, rating] = button.dataset.rate!.split(":");
      void rateSession(id!, Number(rating));
    });
  });
}

store.subscribe(renderSessions);

async function rateSession(id: string, rating: number): Promise<void> {
  try {
    await client.postRating(id, rating);
    store.upsert(await client.getSession(id));
    void refreshAnalytics();
  } catch (err) {
    showError(`Rating failed: ${err instanceof ServiceError ? err.message : err}`);
  }
}

// --- overlay ---------------------------------------------------------------

const canvas = el<HTMLCanvasElement>("overlay-canvas");
const occlusionToggle = el<HTMLInputElement>("occlusion-toggle");
const overlayStatus = el<HTMLSpanElement>("overlay-status");
const runButton = el<HTMLButtonElement>("overlay-run");

async function startOverlay(id: string): Promise<void> {
  try {
    const [ref, meshText] = await Promise.all([
      client.fetchTargetRef(id),
      client.fetchArtifactText(id, "mesh_obj"),
    ]);
    const mesh = parseObj(meshText);
    overlaySession = id;
    const radius = 2.0 * Math.max(...ref.physical_extent);
    const keyframes = orbitTrajectory({ radius });
    overlay = new OverlayRenderer(
      canvas,
      mesh,
      ref.physical_extent as Vec3,
      keyframes.map((k) => k.pos),
    );
    overlay.render();
    overlayStatus.textContent = `session ${id.slice(0, 8)} ready — press run`;
    runButton.disabled = false;
  } catch (err) {
    showError(`Overlay setup failed: ${err instanceof ServiceError ? err.message : err}`);
  }
}

runButton.addEventListener("click", () => void runOverlay());

async function runOverlay(): Promise<void> {
  if (!overlaySession || !overlay || streaming) return;
  streaming = true;
  runButton.disabled = true;
  try {
    const ref = await client.fetchTargetRef(overlaySession);
    const radius = 2.0 * Math.max(...ref.physical_extent);
    const keyframes = orbitTrajectory({
      radius,
      occlusionWindow: occlusionToggle.checked ? DEFAULT_OCCLUSION_WINDOW : null,
    });
    await client.postTrajectory(overlaySession, keyframes);
    overlay.reset();
    overlayStatus.textContent = "streaming…";
    await client.streamTrack(overlaySession, (snap) => overlay!.onSnapshot(snap), {
      pace: "realtime",
      onEnd: () => {
        overlayStatus.textContent = "trajectory finished";
      },
    });
  } catch (err) {
    showError(`Overlay run failed: ${err instanceof ServiceError ? err.message : err}`);
  } finally {
    streaming = false;
    runButton.disabled = false;
  }
}

// --- analytics ---------------------------------------------------------------

const analyticsRoot = el<HTMLDivElement>("analytics");

async function refreshAnalytics(): Promise<void> {
  const rows: string[] = [];
  for (const group of ["A", "B", "C", "all"]) {
    try {
      const s = await client.analyticsSummary(group);
      rows.push(
        `<tr><td>${group}</td><td>${s.n}</td><td>${s.mean.toFixed(2)}</td><td>${s.stddev.toFixed(2)}</td></tr>`,
      );
    } catch {
      rows.push(`<tr><td>${group}</td><td colspan="3" class="muted">—</td></tr>`);
    }
  }
  analyticsRoot.innerHTML = `<table><thead><tr><th>group</th><th>n</th><th>mean</th><th>stddev</th></tr></thead><tbody>${rows.join("")}</tbody></table>`;
}

el<HTMLButtonElement>("analytics-refresh").addEventListener("click", () => void refreshAnalytics());

// --- boot --------------------------------------------------------------------

el<HTMLSpanElement>("service-url").textContent = serviceUrl;
localStorage.setItem("propmorph.service", serviceUrl);

void (async () => {
  try {
    await loadBundledCapture();
  } catch {
    el<HTMLSpanElement>("capture-name").textContent = "bundled fixture unavailable — upload files";
  }
  try {
    for (const session of await client.listSessions()) {
      store.upsert(session);
      if (!["Anchored", "Failed", "Cancelled"].includes(session.stage)) pollSession(session.id);
    }
  } catch (err) {
    showError(
      `Cannot reach the service at ${serviceUrl}: ${err instanceof ServiceError ? err.message : err}`,
      () => window.location.reload(),
    );
  }
  void refreshAnalytics();
})();
