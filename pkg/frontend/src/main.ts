// Page bootstrap: wires the canvas, toolbar and panels to ViewerState.
// Drag pans by default; holding Shift (or enabling the select toggle)
// draws the annotation rectangle instead.

import { MAX_REGION_PIXELS, ViewerState } from "./state.js";
import { ServiceClient } from "./api.js";
import { TileCache, render } from "./renderer.js";
import { classColorCss } from "./colors.js";

const base = "";
const client = new ServiceClient(base);
const state = new ViewerState(client);

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const slideSelect = document.getElementById("slide") as HTMLSelectElement;
const modelSelect = document.getElementById("model") as HTMLSelectElement;
const annotateButton = document.getElementById("annotate") as HTMLButtonElement;
const clearButton = document.getElementById("clear") as HTMLButtonElement;
const selectToggle = document.getElementById("select-mode") as HTMLInputElement;
const bannerDiv = document.getElementById("banner")!;
const countsDiv = document.getElementById("counts")!;
const selectionDiv = document.getElementById("selection")!;

const cache = new TileCache(() => paint());

function resize(): void {
  canvas.width = canvas.clientWidth;
  canvas.height = canvas.clientHeight;
  state.viewSize = { width: canvas.width, height: canvas.height };
  paint();
}

function paint(): void {
  render(ctx, state, cache, base);
  bannerDiv.textContent = state.banner ?? "";
  bannerDiv.style.display = state.banner ? "block" : "none";
  renderSelectionInfo();
  renderCounts();
}

function renderSelectionInfo(): void {
  if (!state.selection) {
    selectionDiv.textContent = "no selection";
    annotateButton.disabled = true;
    return;
  }
  const { x, y, w, h } = state.selection;
  let text = `selection: ${w} x ${h} px at (${x}, ${y})`;
  if (state.selectionExceedsCap()) {
    text += ` — exceeds the ${MAX_REGION_PIXELS.toLocaleString()} px service cap`;
    annotateButton.disabled = true;
  } else {
    annotateButton.disabled = false;
  }
  selectionDiv.textContent = text;
}

function renderCounts(): void {
  const counts = state.visibleCounts();
  countsDiv.innerHTML = "";
  const classes = Object.keys(state.classVisibility).sort();
  if (classes.length === 0) {
    countsDiv.textContent = "no annotations yet";
    return;
  }
  for (const cls of classes) {
    const row = document.createElement("label");
    row.className = "count-row";
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = state.isClassVisible(cls);
    box.onchange = () => {
      state.toggleClass(cls);
      paint();
    };
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = classColorCss(cls);
    row.append(box, swatch, `${cls}: ${counts[cls] ?? 0}`);
    countsDiv.append(row);
  }
}

async function bootstrap(): Promise<void> {
  const slides = await client.listSlides();
  for (const slide of slides) {
    const option = document.createElement("option");
    option.value = slide.slide_id;
    option.textContent = `${slide.slide_id} (${slide.width} x ${slide.height})`;
    slideSelect.append(option);
  }
  const models = await client.listModels();
  for (const model of models) {
    const option = document.createElement("option");
    option.value = model.name;
    option.textContent = `${model.name} (${model.kind})`;
    modelSelect.append(option);
  }
  slideSelect.onchange = async () => {
    const info = slides.find((s) => s.slide_id === slideSelect.value);
    if (info) {
      await state.loadSlide(info);
      paint();
    }
  };
  modelSelect.onchange = () => {
    state.model = modelSelect.value;
  };
  if (slides.length > 0) {
    slideSelect.value = slides[0].slide_id;
    await state.loadSlide(slides[0]);
  }
  paint();
}

// One in-flight annotate request at a time; a click while one is running
// queue-replaces the follow-up request instead of stacking.
let annotateInFlight = false;
let annotateQueued = false;
annotateButton.onclick = async () => {
  if (annotateInFlight) {
    annotateQueued = true;
    return;
  }
  annotateInFlight = true;
  try {
    do {
      annotateQueued = false;
      await state.requestAnnotation();
    } while (annotateQueued);
  } finally {
    annotateInFlight = false;
  }
  paint();
};

clearButton.onclick = () => {
  state.clearOverlays();
  paint();
};

let dragging: "pan" | "select" | null = null;
let last = { x: 0, y: 0 };

canvas.addEventListener("mousedown", (ev) => {
  const pt = { x: ev.offsetX, y: ev.offsetY };
  if (ev.shiftKey || selectToggle.checked) {
    dragging = "select";
    state.beginSelection(pt);
  } else {
    dragging = "pan";
  }
  last = pt;
});

canvas.addEventListener("mousemove", (ev) => {
  const pt = { x: ev.offsetX, y: ev.offsetY };
  if (dragging === "pan") {
    state.pan(pt.x - last.x, pt.y - last.y);
    paint();
  } else if (dragging === "select") {
    state.dragSelection(pt);
    paint();
  }
  last = pt;
});

canvas.addEventListener("mouseup", (ev) => {
  if (dragging === "select") {
    state.endSelection({ x: ev.offsetX, y: ev.offsetY });
  }
  dragging = null;
  paint();
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  const factor = ev.deltaY < 0 ? 1.2 : 1 / 1.2;
  state.zoomAtPoint({ x: ev.offsetX, y: ev.offsetY }, factor);
  paint();
});

window.addEventListener("resize", resize);
resize();
bootstrap();
