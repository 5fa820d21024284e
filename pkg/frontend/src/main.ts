/** Browser wiring: canvas layers, pointer painting, phase controls, live stream. */

import { ApiClient } from "./api.js";
import { gridFromMaskRGBA, overlayRGBA } from "./overlay.js";
import type { SessionView } from "./schema.js";
import { SessionStore } from "./store.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const api = new ApiClient(window.location.origin);
const store = new SessionStore(api);

const baseCanvas = $<HTMLCanvasElement>("base-layer");
const overlayCanvas = $<HTMLCanvasElement>("overlay-layer");
const compareCanvas = $<HTMLCanvasElement>("compare-layer");
const viewport = $<HTMLDivElement>("viewport");
const toastBox = $<HTMLDivElement>("toast");
const statusBox = $<HTMLSpanElement>("status");
const lossBox = $<HTMLSpanElement>("loss");

let zoom = 4;
let panX = 0;
let panY = 0;
let baseBitmap: ImageBitmap | null = null; // newest preview/result frame
let beforeBitmap: ImageBitmap | null = null; // pre-restoration input for compare
let compareSplit = 1; // 0..1, fraction of width showing the restored frame

function pngBlob(bytes: Uint8Array): Blob {
  const copy = new Uint8Array(bytes.length);
  copy.set(bytes);
  return new Blob([copy], { type: "image/png" });
}

async function bitmapFromB64(b64: string): Promise<ImageBitmap> {
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  return createImageBitmap(pngBlob(bytes));
}

async function decodeMaskGrid(png: Uint8Array, width: number, height: number): Promise<Uint8Array> {
  const bitmap = await createImageBitmap(pngBlob(png));
  const canvas = document.createElement("canvas");
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  return gridFromMaskRGBA(ctx.getImageData(0, 0, width, height).data, width, height);
}

function render(): void {
  const { view, grid } = store.getState();
  if (!view || !grid) return;
  const w = view.width;
  const h = view.height;
  for (const canvas of [baseCanvas, overlayCanvas, compareCanvas]) {
    canvas.width = w * zoom;
    canvas.height = h * zoom;
    canvas.style.transform = `translate(${panX}px, ${panY}px)`;
  }

  const bctx = baseCanvas.getContext("2d")!;
  bctx.imageSmoothingEnabled = false; // nearest-neighbor keeps mask edges crisp
  bctx.clearRect(0, 0, baseCanvas.width, baseCanvas.height);
  if (baseBitmap) bctx.drawImage(baseBitmap, 0, 0, w * zoom, h * zoom);

  const cctx = compareCanvas.getContext("2d")!;
  cctx.imageSmoothingEnabled = false;
  cctx.clearRect(0, 0, compareCanvas.width, compareCanvas.height);
  if (beforeBitmap && compareSplit < 1) {
    const cut = Math.round(w * zoom * compareSplit);
    cctx.save();
    cctx.beginPath();
    cctx.rect(cut, 0, w * zoom - cut, h * zoom);
    cctx.clip();
    cctx.drawImage(beforeBitmap, 0, 0, w * zoom, h * zoom);
    cctx.restore();
  }

  const octx = overlayCanvas.getContext("2d")!;
  octx.imageSmoothingEnabled = false;
  octx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
  const tile = new OffscreenCanvas(w, h);
  const tctx = tile.getContext("2d")!;
  tctx.putImageData(new ImageData(overlayRGBA(grid, w, h), w, h), 0, 0);
  octx.drawImage(tile, 0, 0, w * zoom, h * zoom);
}

function renderStatus(): void {
  const { view, optimizing, latestLoss, toast, queue } = store.getState();
  statusBox.textContent = view ? `${view.id} · phase ${view.phase} · ${optimizing ? "optimizing" : view.status}` : "no session";
  lossBox.textContent = latestLoss === null ? "-" : latestLoss.toExponential(3);
  $<HTMLButtonElement>("submit-strokes").disabled = queue.length === 0;
  toastBox.textContent = toast ?? "";
  toastBox.style.display = toast ? "block" : "none";
}

store.subscribe(() => renderStatus());

function canvasPixel(event: PointerEvent): [number, number] {
  const rect = overlayCanvas.getBoundingClientRect();
  const x = ((event.clientX - rect.left) / rect.width) * overlayCanvas.width;
  const y = ((event.clientY - rect.top) / rect.height) * overlayCanvas.height;
  return [x / zoom, y / zoom];
}

let panning = false;
let panStart: [number, number] = [0, 0];

viewport.addEventListener("pointerdown", (event) => {
  if (event.button === 1 || event.shiftKey) {
    panning = true;
    panStart = [event.clientX - panX, event.clientY - panY];
    return;
  }
  viewport.setPointerCapture(event.pointerId);
  const [x, y] = canvasPixel(event);
  store.pointerDown(x, y);
  render();
});

viewport.addEventListener("pointermove", (event) => {
  if (panning) {
    panX = event.clientX - panStart[0];
    panY = event.clientY - panStart[1];
    render();
    return;
  }
  const [x, y] = canvasPixel(event);
  store.pointerMove(x, y);
});

viewport.addEventListener("pointerup", () => {
  if (panning) {
    panning = false;
    return;
  }
  store.pointerUp();
  render();
});

viewport.addEventListener("wheel", (event) => {
  event.preventDefault();
  zoom = Math.min(32, Math.max(1, zoom * (event.deltaY < 0 ? 1.25 : 0.8)));
  render();
});

$<HTMLSelectElement>("tool").addEventListener("change", (event) => {
  store.setTool({ mode: (event.target as HTMLSelectElement).value as "guidance" | "correction" });
});

$<HTMLInputElement>("color").addEventListener("input", (event) => {
  const hex = (event.target as HTMLInputElement).value;
  store.setTool({
    color: [
      parseInt(hex.slice(1, 3), 16) / 255,
      parseInt(hex.slice(3, 5), 16) / 255,
      parseInt(hex.slice(5, 7), 16) / 255,
    ],
  });
});

$<HTMLInputElement>("radius").addEventListener("input", (event) => {
  store.setTool({ radius: Number((event.target as HTMLInputElement).value) });
});

$<HTMLInputElement>("compare").addEventListener("input", (event) => {
  compareSplit = Number((event.target as HTMLInputElement).value) / 100;
  render();
});

async function reconcileMask(): Promise<void> {
  const view = store.getState().view;
  if (!view) return;
  const png = await api.maskPng(view.id);
  const grid = await decodeMaskGrid(png, view.width, view.height);
  await store.refresh(grid);
  render();
}

$<HTMLButtonElement>("submit-strokes").addEventListener("click", async () => {
  if (await store.submitQueue()) await reconcileMask();
});

let streaming = false;

async function followStream(view: SessionView): Promise<void> {
  if (streaming) return;
  streaming = true;
  try {
    for await (const event of api.stream(view.id, { after: store.getState().lastSeq })) {
      store.handleEvent(event);
      const b64 = event.type === "progress" ? event.preview : event.type === "snapshot" ? event.image : null;
      if (b64) {
        baseBitmap = await bitmapFromB64(b64);
        render();
      }
      if (event.type === "snapshot") await reconcileMask();
    }
  } finally {
    streaming = false;
  }
}

$<HTMLButtonElement>("run-phase").addEventListener("click", async () => {
  const view = store.getState().view;
  if (!view) return;
  const iterations = Number($<HTMLInputElement>("iterations").value) || undefined;
  await store.submitQueue();
  await store.startPhase(iterations);
  void followStream(view);
});

$<HTMLButtonElement>("stop-phase").addEventListener("click", () => void store.stop());

$<HTMLButtonElement>("download").addEventListener("click", () => {
  const view = store.getState().view;
  if (!view) return;
  const a = document.createElement("a");
  a.href = api.resultUrl(view.id);
  a.download = `${view.id}.png`;
  a.click();
});

async function fileToB64(file: File): Promise<string> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  return btoa(bin);
}

$<HTMLButtonElement>("create-session").addEventListener("click", async () => {
  const imageFile = $<HTMLInputElement>("image-file").files?.[0];
  const maskFile = $<HTMLInputElement>("mask-file").files?.[0];
  if (!imageFile || !maskFile) {
    store.clearToast();
    toastBox.textContent = "choose an image and a mask PNG first";
    toastBox.style.display = "block";
    return;
  }
  const view = await api.createSession(await fileToB64(imageFile), await fileToB64(maskFile));
  const maskGrid = await decodeMaskGrid(await api.maskPng(view.id), view.width, view.height);
  store.attach(view, maskGrid);
  const resultPng = await api.resultPng(view.id);
  baseBitmap = await createImageBitmap(pngBlob(resultPng));
  beforeBitmap = baseBitmap;
  render();
  void followStream(view);
});
