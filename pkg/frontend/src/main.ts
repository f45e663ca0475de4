// Browser entry point: wires the REST client, viewer state and canvas
// together. Served by the annotation server at /ui.

import { ApiError, Client, type ServerInfo } from "./api.js";
import { decodeNifti, encodeNifti, type NiftiVolume } from "./nifti.js";
import { compositeMask, compositeScribbles, OVERLAY_COLOR, renderSlice } from "./render.js";
import { ViewerState, type Axis, type SliceView, SCRIB_BG, SCRIB_FG } from "./state.js";

const client = new Client("..", fetch.bind(globalThis));
const state = new ViewerState();

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("viewport");
const ctx = canvas.getContext("2d")!;
const scratch = document.createElement("canvas");
const sliceSlider = $<HTMLInputElement>("slice");
const sliceLabel = $<HTMLSpanElement>("slice-label");
const axisSelect = $<HTMLSelectElement>("axis");
const windowInput = $<HTMLInputElement>("win");
const levelInput = $<HTMLInputElement>("lev");
const opacityInput = $<HTMLInputElement>("opacity");
const modelSelect = $<HTMLSelectElement>("model");
const strategySelect = $<HTMLSelectElement>("strategy");
const imageList = $<HTMLUListElement>("images");
const statusLine = $<HTMLDivElement>("status");
const errorPanel = $<HTMLPreElement>("error-panel");
const trainLine = $<HTMLDivElement>("train-line");

let view: SliceView = { zoom: 4, offsetX: 0, offsetY: 0 };
let info: ServerInfo | null = null;
let scribbleModel = "scribbles";
let drawing = false;

// at most one request in flight; a click placed meanwhile queues one re-run
let inferBusy = false;
let inferQueued = false;

let trainTimer: ReturnType<typeof setInterval> | null = null;

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function showError(e: unknown): void {
  // server bodies are rendered verbatim so nothing gets lost in translation
  if (e instanceof ApiError) errorPanel.textContent = e.body;
  else errorPanel.textContent = String(e);
  errorPanel.classList.remove("hidden");
}

function clearError(): void {
  errorPanel.textContent = "";
  errorPanel.classList.add("hidden");
}

function fitView(): void {
  const [w, h] = state.planeSize();
  if (w === 0) return;
  const zoom = Math.max(1, Math.floor(Math.min(canvas.width / w, canvas.height / h)));
  view = {
    zoom,
    offsetX: Math.floor((canvas.width - w * zoom) / 2),
    offsetY: Math.floor((canvas.height - h * zoom) / 2),
  };
}

function draw(): void {
  ctx.fillStyle = "#10131a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!state.volume) return;

  const s = state.slice();
  const rgba = renderSlice(s.values, s.width, s.height, state.window, state.level);
  const ov = state.overlaySlice();
  if (ov) compositeMask(rgba, ov, OVERLAY_COLOR, state.overlayOpacity);
  compositeScribbles(rgba, state.scribbleSlice());

  scratch.width = s.width;
  scratch.height = s.height;
  scratch.getContext("2d")!.putImageData(new ImageData(rgba, s.width, s.height), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(
    scratch,
    view.offsetX,
    view.offsetY,
    s.width * view.zoom,
    s.height * view.zoom,
  );

  // click markers on the current slice
  for (const [pts, color] of [
    [state.clicks.positive, "#3cc85a"],
    [state.clicks.negative, "#4682f0"],
  ] as const) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    for (const p of pts) {
      const r = state.voxelToScreenRect(p, view);
      const onPlane =
        (state.axis === "axial" && p.z === state.sliceIndex) ||
        (state.axis === "coronal" && p.y === state.sliceIndex) ||
        (state.axis === "sagittal" && p.x === state.sliceIndex);
      if (!onPlane) continue;
      ctx.beginPath();
      ctx.arc(r.x + r.w / 2, r.y + r.h / 2, Math.max(r.w / 2, 4), 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  sliceLabel.textContent = `${state.sliceIndex + 1}/${state.sliceCount()}`;
}

function syncControls(): void {
  sliceSlider.max = String(Math.max(state.sliceCount() - 1, 0));
  sliceSlider.value = String(state.sliceIndex);
  windowInput.value = state.window.toPrecision(4);
  levelInput.value = state.level.toPrecision(4);
}

async function maskFromLabelBytes(labelBytes: Uint8Array): Promise<[Uint8Array, NiftiVolume]> {
  const vol = await decodeNifti(labelBytes);
  const mask = new Uint8Array(vol.data.length);
  for (let i = 0; i < vol.data.length; i++) mask[i] = vol.data[i] !== 0 ? 1 : 0;
  return [mask, vol];
}

async function runClickInference(): Promise<void> {
  if (!state.volume) return;
  if (inferBusy) {
    inferQueued = true;
    return;
  }
  inferBusy = true;
  setStatus(`running ${modelSelect.value}...`);
  try {
    const target = state.sessionId
      ? { session: state.sessionId }
      : { image: state.imageId ?? undefined };
    const res = await client.infer(modelSelect.value, target, { clicks: state.clickSets() });
    const [mask, vol] = await maskFromLabelBytes(res.labelBytes);
    state.setOverlay(mask, vol.dims);
    clearError();
    setStatus(
      `${modelSelect.value}: ${res.meta.label_voxel_count} voxels in ${res.meta.latency_ms.toFixed(1)} ms`,
    );
  } catch (e) {
    showError(e);
    setStatus("inference failed");
  } finally {
    inferBusy = false;
  }
  draw();
  if (inferQueued) {
    inferQueued = false;
    void runClickInference();
  }
}

async function runScribbleInference(): Promise<void> {
  if (!state.volume) return;
  if (!state.hasScribbles()) {
    // mirror the server's own error shape without a round trip
    showError(
      new ApiError(
        400,
        JSON.stringify({
          error: "MissingScribbles",
          detail: "draw foreground and background strokes first",
        }),
      ),
    );
    return;
  }
  if (inferBusy) {
    inferQueued = true;
    return;
  }
  inferBusy = true;
  setStatus("running scribbles...");
  try {
    const scribNii = encodeNifti({
      dims: state.volume.dims,
      data: state.rasterizeScribbles(),
      spacing: state.volume.spacing,
      affine: state.volume.affine,
    });
    const target = state.sessionId
      ? { session: state.sessionId }
      : { image: state.imageId ?? undefined };
    const res = await client.infer(scribbleModel, target, { scribbles: scribNii });
    const [mask, vol] = await maskFromLabelBytes(res.labelBytes);
    state.setOverlay(mask, vol.dims);
    clearError();
    setStatus(`scribbles: ${res.meta.label_voxel_count} voxels in ${res.meta.latency_ms.toFixed(1)} ms`);
  } catch (e) {
    showError(e);
    setStatus("inference failed");
  } finally {
    inferBusy = false;
  }
  draw();
}

async function loadImage(imageId: string): Promise<void> {
  setStatus(`loading ${imageId}...`);
  try {
    const bytes = await client.fetchImageBytes(imageId);
    const vol = await decodeNifti(bytes);
    state.setVolume(vol, { imageId });
    fitView();
    syncControls();
    clearError();
    setStatus(`${imageId}: ${vol.dims.join("x")}`);
  } catch (e) {
    showError(e);
    setStatus(`failed to load ${imageId}`);
  }
  draw();
  void refreshImages();
}

async function refreshImages(): Promise<void> {
  try {
    const listing = await client.listDatastore();
    imageList.replaceChildren(
      ...listing.entries.map((e) => {
        const li = document.createElement("li");
        li.textContent = `${e.image_id}${e.labeled ? " [labeled]" : ""}`;
        li.classList.toggle("active", e.image_id === state.imageId);
        li.onclick = () => void loadImage(e.image_id);
        return li;
      }),
    );
  } catch (e) {
    showError(e);
  }
}

async function nextSample(): Promise<void> {
  try {
    const choice = await client.nextSample(strategySelect.value);
    clearError();
    await loadImage(choice.image_id);
    setStatus(`next (${choice.strategy}): ${choice.image_id}, score ${choice.score.toFixed(4)}`);
  } catch (e) {
    if (e instanceof ApiError && e.errorType === "EmptyPool") {
      setStatus("dataset fully labeled");
      clearError();
    } else {
      showError(e);
    }
  }
}

async function submitLabel(): Promise<void> {
  if (!state.volume || !state.imageId) {
    setStatus("load a datastore image first");
    return;
  }
  if (!state.overlay) {
    setStatus("run inference before submitting");
    return;
  }
  try {
    const data = new Float32Array(state.overlay.length);
    for (let i = 0; i < data.length; i++) data[i] = state.overlay[i];
    const nii = encodeNifti({
      dims: state.volume.dims,
      data,
      spacing: state.volume.spacing,
      affine: state.volume.affine,
    });
    const saved = await client.putLabel(state.imageId, nii, "final");
    setStatus(`saved ${saved.tag} label for ${saved.image_id}`);
    clearError();
    state.clearInteractions();
    state.clearOverlay();
    await nextSample();
  } catch (e) {
    showError(e);
  }
}

function stopTrainPolling(): void {
  if (trainTimer !== null) clearInterval(trainTimer);
  trainTimer = null;
}

async function pollTrain(): Promise<void> {
  try {
    const st = await client.trainStatus();
    if (st.job_id === null) {
      trainLine.textContent = "training: idle";
      stopTrainPolling();
      return;
    }
    const done = st.epochs_done ?? 0;
    const total = st.epochs_total ?? 0;
    const dice = st.val_dice == null ? "" : `, val dice ${st.val_dice.toFixed(3)}`;
    trainLine.textContent = `training ${st.model_name}: ${st.state}, epoch ${done}/${total}${dice}`;
    if (st.state !== "pending" && st.state !== "running") {
      stopTrainPolling();
      void refreshInfo();
    }
  } catch (e) {
    trainLine.textContent = "training: status unavailable";
    stopTrainPolling();
    showError(e);
  }
}

async function startTrain(): Promise<void> {
  try {
    await client.startTrain(modelSelect.value, {});
    clearError();
    stopTrainPolling();
    trainTimer = setInterval(() => void pollTrain(), 2000);
    void pollTrain();
  } catch (e) {
    showError(e);
  }
}

async function cancelTrain(): Promise<void> {
  try {
    await client.cancelTrain();
    void pollTrain();
  } catch (e) {
    showError(e);
  }
}

async function refreshInfo(): Promise<void> {
  info = await client.info();
  const clickModels = Object.entries(info.models).filter(([, m]) => m.type !== "scribbles");
  const scrib = Object.entries(info.models).find(([, m]) => m.type === "scribbles");
  if (scrib) scribbleModel = scrib[0];
  modelSelect.replaceChildren(
    ...clickModels.map(([name, m]) => {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = `${name}${m.trained ? "" : " (untrained)"}`;
      return opt;
    }),
  );
  strategySelect.replaceChildren(
    ...info.strategies.map((s) => {
      const opt = document.createElement("option");
      opt.value = s;
      opt.textContent = s;
      return opt;
    }),
  );
  document.title = `${info.name} ${info.version}`;
}

function canvasPos(ev: MouseEvent): [number, number] {
  const r = canvas.getBoundingClientRect();
  return [
    ((ev.clientX - r.left) / r.width) * canvas.width,
    ((ev.clientY - r.top) / r.height) * canvas.height,
  ];
}

function onCanvasDown(ev: MouseEvent): void {
  if (!state.volume) return;
  const [px, py] = canvasPos(ev);
  const p = state.screenToVoxel(px, py, view);
  if (!p) return;
  switch (state.tool) {
    case "pos-click":
    case "neg-click":
      state.addClick(p, state.tool === "pos-click");
      draw();
      void runClickInference();
      break;
    case "fg-scribble":
    case "bg-scribble":
      drawing = true;
      state.beginStroke(state.tool === "fg-scribble" ? SCRIB_FG : SCRIB_BG);
      state.extendStroke(p);
      draw();
      break;
    default:
      break;
  }
}

function onCanvasMove(ev: MouseEvent): void {
  if (!drawing || !state.volume) return;
  const [px, py] = canvasPos(ev);
  const p = state.screenToVoxel(px, py, view);
  if (p) {
    state.extendStroke(p);
    draw();
  }
}

function onCanvasUp(): void {
  if (drawing) {
    drawing = false;
    state.endStroke();
    draw();
  }
}

function bindUi(): void {
  canvas.addEventListener("mousedown", onCanvasDown);
  canvas.addEventListener("mousemove", onCanvasMove);
  window.addEventListener("mouseup", onCanvasUp);

  axisSelect.onchange = () => {
    state.setAxis(axisSelect.value as Axis);
    fitView();
    syncControls();
    draw();
  };
  sliceSlider.oninput = () => {
    state.setSlice(Number(sliceSlider.value));
    draw();
  };
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    state.setSlice(state.sliceIndex + Math.sign(ev.deltaY));
    syncControls();
    draw();
  });
  windowInput.onchange = () => {
    state.window = Math.max(Number(windowInput.value) || state.window, 1e-6);
    draw();
  };
  levelInput.onchange = () => {
    state.level = Number(levelInput.value) || state.level;
    draw();
  };
  opacityInput.oninput = () => {
    state.overlayOpacity = Number(opacityInput.value);
    draw();
  };

  for (const tool of ["pos-click", "neg-click", "fg-scribble", "bg-scribble", "none"] as const) {
    $<HTMLButtonElement>(`tool-${tool}`).onclick = () => {
      state.tool = tool;
      for (const b of document.querySelectorAll("#tools button")) {
        b.classList.toggle("active", b.id === `tool-${tool}`);
      }
    };
  }

  $<HTMLButtonElement>("zoom-in").onclick = () => {
    view.zoom = Math.min(view.zoom + 1, 32);
    draw();
  };
  $<HTMLButtonElement>("zoom-out").onclick = () => {
    view.zoom = Math.max(view.zoom - 1, 1);
    draw();
  };
  $<HTMLButtonElement>("undo").onclick = () => {
    if (state.undo()) {
      draw();
      if (state.tool === "pos-click" || state.tool === "neg-click") void runClickInference();
    }
  };
  $<HTMLButtonElement>("clear").onclick = () => {
    state.clearInteractions();
    state.clearOverlay();
    draw();
  };
  $<HTMLButtonElement>("run-scribbles").onclick = () => void runScribbleInference();
  $<HTMLButtonElement>("submit").onclick = () => void submitLabel();
  $<HTMLButtonElement>("next").onclick = () => void nextSample();
  $<HTMLButtonElement>("train").onclick = () => void startTrain();
  $<HTMLButtonElement>("cancel-train").onclick = () => void cancelTrain();

  $<HTMLInputElement>("upload").onchange = async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      const bytes = new Uint8Array(await file.arrayBuffer());
      const name = file.name.replace(/\.nii(\.gz)?$/, "");
      const res = await client.uploadImage(bytes, name);
      clearError();
      setStatus(`uploaded ${res.image_id}`);
      await refreshImages();
      await loadImage(res.image_id);
    } catch (e) {
      showError(e);
    } finally {
      input.value = "";
    }
  };

  $<HTMLInputElement>("open-session").onchange = async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      const bytes = new Uint8Array(await file.arrayBuffer());
      const res = await client.createSession(bytes);
      const vol = await decodeNifti(bytes);
      state.setVolume(vol, { sessionId: res.session_id });
      fitView();
      syncControls();
      clearError();
      setStatus(`session ${res.session_id.slice(0, 8)}...: ${vol.dims.join("x")}`);
      draw();
    } catch (e) {
      showError(e);
    } finally {
      input.value = "";
    }
  };
}

async function init(): Promise<void> {
  bindUi();
  try {
    await refreshInfo();
    await refreshImages();
    void pollTrain();
    setStatus("pick an image from the list, or upload one");
  } catch (e) {
    showError(e);
    setStatus("server unreachable");
  }
  draw();
}

void init();
