/**
 * Browser viewer: orbit the camera with the mouse, relight with the tau
 * slider, and watch frames stream back from the render service.
 *
 * Interaction model: while dragging, frames are requested at a low preview
 * resolution to stay fluid; once the interaction settles, one full-resolution
 * frame is requested.  The FrameRequester guarantees a single in-flight
 * request and drops stale responses.
 */

import { buildRequest, fetchInfo, Frame, FrameRequester, ModelInfo } from "./client.js";
import { clampOrbit, ViewerState } from "./orbit.js";

const PREVIEW_RESOLUTION = 96;
const FULL_RESOLUTION = 384;
const SETTLE_MS = 200;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export async function startViewer(baseUrl: string): Promise<void> {
  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  const banner = el<HTMLDivElement>("banner");
  const overlay = el<HTMLDivElement>("overlay");
  const tauSlider = el<HTMLInputElement>("tau");
  const tauLabel = el<HTMLSpanElement>("tau-label");
  const lightA = el<HTMLSelectElement>("light-a");
  const lightB = el<HTMLSelectElement>("light-b");
  const gammaToggle = el<HTMLInputElement>("gamma");
  const lightingRow = el<HTMLDivElement>("lighting-row");

  let info: ModelInfo;
  try {
    info = await fetchInfo(baseUrl);
  } catch (err) {
    banner.textContent = String(err);
    banner.style.display = "block";
    return;
  }

  const state: ViewerState = {
    orbit: { target: [0.5, 0.5, 0.5], azimuth: 30, elevation: 20, distance: 2.5 },
    resolution: FULL_RESOLUTION,
    fov: 45,
    gamma: info.gamma,
    lightingA: 0,
    lightingB: Math.min(1, Math.max(0, info.lighting_count - 1)),
    tau: 0,
    lightingEnabled: info.lighting_count > 0,
    appearanceId: 0,
  };

  // populate the lighting pickers from the served model metadata
  if (state.lightingEnabled) {
    for (let k = 0; k < info.lighting_count; k++) {
      for (const sel of [lightA, lightB]) {
        const opt = document.createElement("option");
        opt.value = String(k);
        opt.textContent = `lighting ${k}`;
        sel.appendChild(opt);
      }
    }
    lightA.value = String(state.lightingA);
    lightB.value = String(state.lightingB);
  } else {
    lightingRow.style.display = "none";
  }

  const requester = new FrameRequester(
    baseUrl,
    (frame: Frame) => {
      banner.style.display = "none";
      overlay.textContent =
        `${frame.request.width}x${frame.request.height}  ${frame.latencyMs.toFixed(0)} ms`;
      const blob = new Blob([frame.png], { type: "image/png" });
      createImageBitmap(blob).then((bitmap) => {
        ctx.imageSmoothingEnabled = false;
        ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
      });
    },
    (message: string) => {
      banner.textContent = message;
      banner.style.display = "block";
    },
  );

  let settleTimer: number | undefined;
  function requestFrame(preview: boolean): void {
    state.orbit = clampOrbit(state.orbit);
    requester.submit(buildRequest(state, preview ? PREVIEW_RESOLUTION : undefined));
    if (preview) {
      // one full-resolution frame after the interaction settles
      window.clearTimeout(settleTimer);
      settleTimer = window.setTimeout(() => requestFrame(false), SETTLE_MS);
    }
  }

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    state.orbit.azimuth -= (ev.clientX - lastX) * 0.4;
    state.orbit.elevation += (ev.clientY - lastY) * 0.4;
    lastX = ev.clientX;
    lastY = ev.clientY;
    requestFrame(true);
  });
  canvas.addEventListener("pointerup", () => {
    dragging = false;
    requestFrame(false);
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    state.orbit.distance *= Math.exp(ev.deltaY * 0.001);
    requestFrame(true);
  }, { passive: false });

  tauSlider.addEventListener("input", () => {
    // the service requires tau in [0, 1): keep the slider just below 1
    state.tau = Math.min(0.999, Number(tauSlider.value));
    tauLabel.textContent = state.tau.toFixed(2);
    requestFrame(true);
  });
  lightA.addEventListener("change", () => {
    state.lightingA = Number(lightA.value);
    requestFrame(false);
  });
  lightB.addEventListener("change", () => {
    state.lightingB = Number(lightB.value);
    requestFrame(false);
  });
  gammaToggle.addEventListener("change", () => {
    state.gamma = gammaToggle.checked ? info.gamma : 1;
    requestFrame(false);
  });
  gammaToggle.checked = true;

  requestFrame(false);
}

const params = new URLSearchParams(window.location.search);
void startViewer(params.get("service") ?? "http://127.0.0.1:8590");
