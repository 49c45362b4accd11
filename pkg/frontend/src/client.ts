/**
 * HTTP client for the render service: request construction from viewer
 * state, /info discovery, and a single-in-flight frame requester that drops
 * stale responses.
 */

import { poseFromOrbit, ViewerState } from "./orbit.js";

export interface RenderRequestBody {
  camera_to_world: number[];
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  gamma?: number;
  appearance_id?: number;
  lighting?: { i: number; j: number; tau: number };
}

export interface ModelInfo {
  feature_width: number;
  levels: number;
  channels: number;
  gamma: number;
  deformation: boolean;
  multisampling: boolean;
  appearance_count: number;
  lighting_count: number;
  parameters: number;
  pixel_budget: number;
}

/** Pinhole intrinsics for a square image with the given vertical FoV. */
export function intrinsicsFor(resolution: number, fovDeg: number) {
  const f = 0.5 * resolution / Math.tan(0.5 * fovDeg * Math.PI / 180);
  return { fx: f, fy: f, cx: resolution / 2, cy: resolution / 2 };
}

/** Build a /render request body from the current viewer state. */
export function buildRequest(
  state: ViewerState, resolution?: number,
): RenderRequestBody {
  const res = resolution ?? state.resolution;
  const { fx, fy, cx, cy } = intrinsicsFor(res, state.fov);
  const body: RenderRequestBody = {
    camera_to_world: poseFromOrbit(state.orbit),
    fx, fy, cx, cy,
    width: res,
    height: res,
    gamma: state.gamma,
    appearance_id: state.appearanceId,
  };
  if (state.lightingEnabled) {
    body.lighting = { i: state.lightingA, j: state.lightingB, tau: state.tau };
  }
  return body;
}

export async function fetchInfo(
  baseUrl: string, fetchFn: typeof fetch = fetch,
): Promise<ModelInfo> {
  const resp = await fetchFn(baseUrl + "/info");
  if (!resp.ok) throw new Error(`GET /info failed: HTTP ${resp.status}`);
  return (await resp.json()) as ModelInfo;
}

export interface Frame {
  /** PNG bytes of the rendered image */
  png: ArrayBuffer;
  /** round-trip latency in milliseconds */
  latencyMs: number;
  /** the request that produced this frame */
  request: RenderRequestBody;
}

/**
 * Serializes render requests toward the service.
 *
 * Invariants:
 *  - at most one request is in flight at any time;
 *  - only the most recent submitted request's frame is delivered — if newer
 *    requests arrived while one was in flight, its response is dropped and
 *    only the newest pending request is issued next;
 *  - delivered frames are monotonically ordered (a frame for an older
 *    request never replaces a newer one).
 */
export class FrameRequester {
  dropped = 0;
  delivered = 0;
  issued = 0;

  private pending: RenderRequestBody | null = null;
  private inFlight = false;
  private lastDeliveredSeq = 0;
  private seq = 0;

  constructor(
    private baseUrl: string,
    private onFrame: (frame: Frame) => void,
    private onError: (message: string) => void,
    private fetchFn: typeof fetch = fetch,
    private now: () => number = () => Date.now(),
  ) {}

  /** Submit a request; supersedes any not-yet-issued pending request. */
  submit(body: RenderRequestBody): void {
    this.pending = body;
    if (!this.inFlight) void this.pump();
  }

  /** Resolves once there is no in-flight or pending work (test helper). */
  async idle(): Promise<void> {
    while (this.inFlight || this.pending !== null) {
      await new Promise((resolve) => setTimeout(resolve, 1));
    }
  }

  private async pump(): Promise<void> {
    this.inFlight = true;
    try {
      while (this.pending !== null) {
        const body = this.pending;
        this.pending = null;
        const mySeq = ++this.seq;
        this.issued += 1;
        const t0 = this.now();
        try {
          const resp = await this.fetchFn(this.baseUrl + "/render", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
          });
          if (!resp.ok) {
            const text = await resp.text();
            this.onError(`render failed: HTTP ${resp.status} ${text}`);
            continue;
          }
          const png = await resp.arrayBuffer();
          // stale if a newer request was submitted meanwhile
          if (this.pending !== null || mySeq <= this.lastDeliveredSeq) {
            this.dropped += 1;
            continue;
          }
          this.lastDeliveredSeq = mySeq;
          this.delivered += 1;
          this.onFrame({ png, latencyMs: this.now() - t0, request: body });
        } catch (err) {
          this.onError(`render failed: ${String(err)}`);
        }
      }
    } finally {
      this.inFlight = false;
    }
  }
}
