/** DOM wiring for the survey workbench page.
 *
 * All heavy logic lives in the pure modules (state, overlay, rle); this
 * file only moves data between them and the document.
 */

import { ApiError, SurveyApi } from "./api.js";
import { buildOverlay, maskPixels, CLASS_COLORS } from "./overlay.js";
import { uploadAndPoll } from "./poll.js";
import {
  ALL_CLASSES,
  classCounts,
  decisions,
  initialState,
  select,
  setAccepted,
  setThreshold,
  toggleClass,
  type OverlayState,
} from "./state.js";
import type { JobRecord, Payload } from "./types.js";

const api = new SurveyApi("");

interface View {
  jobId: string | null;
  payload: Payload | null;
  state: OverlayState | null;
  imageUrl: string | null;
}

const view: View = { jobId: null, payload: null, state: null, imageUrl: null };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const status = el<HTMLParagraphElement>("status");
  status.textContent = text;
  status.className = isError ? "status error" : "status";
}

function renderToggles(): void {
  if (!view.payload || !view.state) {
    return;
  }
  const counts = classCounts(view.payload, view.state);
  const box = el<HTMLDivElement>("class-toggles");
  box.innerHTML = "";
  for (const name of ALL_CLASSES) {
    const label = document.createElement("label");
    const input = document.createElement("input");
    input.type = "checkbox";
    input.checked = view.state.visibleClasses.has(name);
    input.addEventListener("change", () => {
      view.state = toggleClass(view.state!, name);
      render();
    });
    const [r, g, b] = CLASS_COLORS[name] ?? [200, 200, 200];
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = `rgb(${r}, ${g}, ${b})`;
    label.append(input, swatch, ` ${name} (${counts[name] ?? 0})`);
    box.appendChild(label);
  }
}

function renderPredictionList(): void {
  if (!view.payload || !view.state) {
    return;
  }
  const list = el<HTMLUListElement>("predictions");
  list.innerHTML = "";
  for (const p of view.payload.predictions) {
    const item = document.createElement("li");
    if (view.state.selected === p.index) {
      item.classList.add("selected");
    }
    const accepted = view.state.accepted[p.index] ?? true;
    const toggle = document.createElement("button");
    toggle.textContent = accepted ? "reject" : "accept";
    toggle.addEventListener("click", (event) => {
      event.stopPropagation();
      view.state = setAccepted(view.state!, p.index, !accepted);
      render();
    });
    const text = document.createElement("span");
    const fate = p.role === "heat_loss_source" ? "crop" : "erase";
    text.textContent =
      `#${p.index} ${p.category} ${(100 * p.score).toFixed(1)}% ` +
      (accepted ? `(${fate})` : "(kept in image)");
    item.addEventListener("click", () => {
      view.state = select(view.state!, view.state!.selected === p.index ? null : p.index);
      render();
    });
    item.append(text, toggle);
    list.appendChild(item);
  }
}

async function renderCanvas(): Promise<void> {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx || !view.imageUrl) {
    return;
  }
  const image = new Image();
  image.src = view.imageUrl;
  await image.decode();
  canvas.width = image.naturalWidth;
  canvas.height = image.naturalHeight;
  ctx.drawImage(image, 0, 0);
  if (!view.payload || !view.state) {
    return;
  }
  for (const instruction of buildOverlay(view.payload, view.state)) {
    if (instruction.kind === "mask") {
      const buffer = document.createElement("canvas");
      buffer.width = instruction.mask.width;
      buffer.height = instruction.mask.height;
      const bctx = buffer.getContext("2d")!;
      bctx.putImageData(
        new ImageData(maskPixels(instruction), instruction.mask.width, instruction.mask.height),
        0,
        0
      );
      ctx.drawImage(buffer, 0, 0);
    } else if (instruction.kind === "box") {
      const [x, y, w, h] = instruction.bbox;
      const [r, g, b] = instruction.color;
      ctx.strokeStyle = `rgb(${r}, ${g}, ${b})`;
      ctx.lineWidth = instruction.selected ? 3 : 1;
      ctx.strokeRect(x, y, w, h);
      if (instruction.selected) {
        ctx.font = "12px sans-serif";
        ctx.fillStyle = `rgb(${r}, ${g}, ${b})`;
        ctx.fillText(instruction.label, x + 2, Math.max(10, y - 4));
      }
    } else {
      const [x, y] = instruction.bbox;
      ctx.font = "14px sans-serif";
      ctx.fillStyle = "red";
      ctx.fillText("⚠ mask error", x, Math.max(12, y));
    }
  }
}

function render(): void {
  renderToggles();
  renderPredictionList();
  void renderCanvas();
  const ready = view.jobId !== null && view.payload !== null;
  el<HTMLButtonElement>("apply-review").disabled = !ready;
  el<HTMLAnchorElement>("download-cleaned").style.visibility = ready ? "visible" : "hidden";
  el<HTMLAnchorElement>("download-crops").style.visibility = ready ? "visible" : "hidden";
}

async function handleUpload(): Promise<void> {
  const input = el<HTMLInputElement>("file-input");
  const file = input.files?.[0];
  if (!file) {
    setStatus("pick an image first", true);
    return;
  }
  if (view.imageUrl) {
    URL.revokeObjectURL(view.imageUrl);
  }
  view.imageUrl = URL.createObjectURL(file);
  view.jobId = null;
  view.payload = null;
  view.state = null;
  render();
  setStatus("uploading...");
  try {
    const record: JobRecord = await uploadAndPoll(api, file, file.name, {
      intervalMs: 1000,
      onProgress: (status) => setStatus(`job ${status}...`),
    });
    view.jobId = record.job_id;
    view.payload = record.payload ?? null;
    view.state = view.payload ? initialState(view.payload) : null;
    setStatus(
      `done: ${view.payload?.predictions.length ?? 0} detections ` +
        `(model ${view.payload?.model_id})`
    );
    el<HTMLAnchorElement>("download-cleaned").href = api.cleanedUrl(record.job_id);
    el<HTMLAnchorElement>("download-crops").href = api.cropsUrl(record.job_id);
    render();
  } catch (err) {
    if (err instanceof ApiError) {
      setStatus(`service rejected the upload: ${err.message}`, true);
    } else if (err instanceof TypeError) {
      setStatus("service unreachable; check the server and retry", true);
    } else {
      setStatus(String(err), true);
    }
  }
}

async function handleReview(): Promise<void> {
  if (!view.jobId || !view.state || !view.payload) {
    return;
  }
  setStatus("applying review...");
  try {
    const payload = await api.review(view.jobId, decisions(view.state));
    view.payload = payload;
    // keep toggles/threshold/selection; refresh accept flags from the service
    view.state = {
      ...view.state,
      accepted: payload.predictions.map((p) => p.accepted),
    };
    setStatus(`review applied: ${payload.crops.length} crop(s) regenerated`);
    render();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setStatus("job state changed; refetching...", true);
      const record = await api.getJob(view.jobId);
      view.payload = record.payload ?? view.payload;
      render();
    } else {
      setStatus(String(err), true);
    }
  }
}

function init(): void {
  el<HTMLButtonElement>("upload-btn").addEventListener("click", () => void handleUpload());
  el<HTMLButtonElement>("apply-review").addEventListener("click", () => void handleReview());
  const slider = el<HTMLInputElement>("threshold");
  slider.addEventListener("input", () => {
    if (view.state) {
      view.state = setThreshold(view.state, Number(slider.value) / 100);
      el<HTMLSpanElement>("threshold-value").textContent =
        (Number(slider.value) / 100).toFixed(2);
      render();
    }
  });
  void api
    .listModels()
    .then((models) => {
      const current = models.find((m) => m.default);
      setStatus(
        current
          ? `ready (default model ${current.id}, test mAP ${(100 * current.map_test).toFixed(1)})`
          : "ready (no models in registry)"
      );
    })
    .catch(() => setStatus("service unreachable; start it and reload", true));
}

document.addEventListener("DOMContentLoaded", init);
