// Typed client for the annotation server's REST surface.
//
// The fetch implementation is injectable so tests can point the same code at
// a live server (node 20 global fetch) or at a stub.

import { boundaryFromContentType, parseMultipart, partByName } from "./multipart.js";

export interface ClickSets {
  foreground: [number, number, number][];
  background: [number, number, number][];
}

export interface ServerInfo {
  name: string;
  version: string;
  models: Record<string, { type: string; trained: boolean }>;
  strategies: string[];
  plan: unknown;
}

export interface DatastoreEntry {
  image_id: string;
  labeled: boolean;
  labels: string[];
}

export interface DatastoreListing {
  entries: DatastoreEntry[];
  labeled: string[];
  unlabeled: string[];
}

export interface TrainStatus {
  job_id: string | null;
  state: string;
  model_name?: string;
  epochs_done?: number;
  epochs_total?: number;
  train_loss?: number | null;
  val_dice?: number | null;
  error?: string | null;
}

export interface SampleChoice {
  image_id: string;
  score: number;
  strategy: string;
  timestamp: number;
}

export interface InferResult {
  meta: { latency_ms: number; label_voxel_count: number };
  /** The label part verbatim: gzipped NIfTI-1 bytes as sent by the server. */
  labelBytes: Uint8Array;
}

/** Non-2xx response. `body` is the response text verbatim for the error panel. */
export class ApiError extends Error {
  status: number;
  body: string;
  /** Server-side error class name when the body is the usual JSON shape. */
  errorType?: string;
  detail?: string;

  constructor(status: number, body: string) {
    let message = `HTTP ${status}`;
    let errorType: string | undefined;
    let detail: string | undefined;
    try {
      const d = JSON.parse(body);
      if (typeof d?.error === "string") errorType = d.error;
      if (typeof d?.detail === "string") detail = d.detail;
      if (errorType && detail) message = `${errorType}: ${detail}`;
    } catch {
      // non-JSON body; keep the bare status message
    }
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.body = body;
    this.errorType = errorType;
    this.detail = detail;
  }
}

export class Client {
  base: string;
  private fetchFn: typeof fetch;

  constructor(base = "", fetchFn: typeof fetch = fetch) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async req(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return resp;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    return (await (await this.req(path, init)).json()) as T;
  }

  info(): Promise<ServerInfo> {
    return this.json("/info");
  }

  listDatastore(): Promise<DatastoreListing> {
    return this.json("/datastore");
  }

  async fetchImageBytes(imageId: string): Promise<Uint8Array> {
    const resp = await this.req(`/datastore/image?image=${encodeURIComponent(imageId)}`);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async fetchLabelBytes(imageId: string, tag = "final"): Promise<Uint8Array> {
    const resp = await this.req(
      `/datastore/label?image=${encodeURIComponent(imageId)}&tag=${encodeURIComponent(tag)}`,
    );
    return new Uint8Array(await resp.arrayBuffer());
  }

  uploadImage(bytes: Uint8Array, imageId: string): Promise<{ image_id: string }> {
    const form = new FormData();
    form.append(
      "image",
      new Blob([bytes as BlobPart], { type: "application/octet-stream" }),
      `${imageId}.nii`,
    );
    form.append("image_id", imageId);
    return this.json("/datastore", { method: "POST", body: form });
  }

  putLabel(
    imageId: string,
    bytes: Uint8Array,
    tag = "final",
  ): Promise<{ image_id: string; tag: string }> {
    const q = `image=${encodeURIComponent(imageId)}&tag=${encodeURIComponent(tag)}`;
    return this.json(`/datastore/label?${q}`, {
      method: "PUT",
      body: bytes as unknown as BodyInit,
      headers: { "content-type": "application/octet-stream" },
    });
  }

  createSession(bytes: Uint8Array, ttl?: number): Promise<{ session_id: string; expiry: number }> {
    const q = ttl !== undefined ? `?ttl=${ttl}` : "";
    return this.json(`/session${q}`, {
      method: "POST",
      body: bytes as unknown as BodyInit,
      headers: { "content-type": "application/octet-stream" },
    });
  }

  async infer(
    model: string,
    target: { image?: string; session?: string },
    opts: { clicks?: ClickSets; scribbles?: Uint8Array; params?: Record<string, unknown> } = {},
  ): Promise<InferResult> {
    const qs = target.image !== undefined
      ? `image=${encodeURIComponent(target.image)}`
      : `session=${encodeURIComponent(target.session ?? "")}`;
    const params: Record<string, unknown> = { ...(opts.params ?? {}) };
    if (opts.clicks) params.clicks = opts.clicks;
    const form = new FormData();
    form.append(
      "params",
      new Blob([JSON.stringify(params)], { type: "application/json" }),
    );
    if (opts.scribbles) {
      form.append(
        "scribbles",
        new Blob([opts.scribbles as BlobPart], { type: "application/octet-stream" }),
        "scribbles.nii",
      );
    }
    const resp = await this.req(`/infer/${encodeURIComponent(model)}?${qs}`, {
      method: "POST",
      body: form,
    });
    const ctype = resp.headers.get("content-type") ?? "";
    const body = new Uint8Array(await resp.arrayBuffer());
    const parts = parseMultipart(body, boundaryFromContentType(ctype));
    const meta = JSON.parse(new TextDecoder().decode(partByName(parts, "params").data));
    return { meta, labelBytes: partByName(parts, "label").data };
  }

  startTrain(model: string, overrides: Record<string, unknown> = {}): Promise<{ job_id: string }> {
    return this.json(`/train/${encodeURIComponent(model)}`, {
      method: "POST",
      body: JSON.stringify(overrides),
      headers: { "content-type": "application/json" },
    });
  }

  trainStatus(): Promise<TrainStatus> {
    return this.json("/train");
  }

  cancelTrain(): Promise<TrainStatus> {
    return this.json("/train", { method: "DELETE" });
  }

  nextSample(strategy: string, seed = 0): Promise<SampleChoice> {
    return this.json(`/activelearning/${encodeURIComponent(strategy)}?seed=${seed}`, {
      method: "POST",
    });
  }
}
