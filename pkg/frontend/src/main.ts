import { HttpTransport } from "./api.js";
import { Renderer, heatmapColors } from "./render.js";
import { ViewerState } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const canvas = el<HTMLCanvasElement>("view");
const fileInput = el<HTMLInputElement>("obj-file");
const slider = el<HTMLInputElement>("bandwidth");
const sliderValue = el<HTMLSpanElement>("bandwidth-value");
const jointCount = el<HTMLSpanElement>("joint-count");
const vertexCount = el<HTMLSpanElement>("vertex-count");
const boneSelect = el<HTMLSelectElement>("bone-select");
const skinButton = el<HTMLButtonElement>("load-skin");
const wireToggle = el<HTMLInputElement>("wireframe");
const probeInput = el<HTMLInputElement>("probe-vertex");
const probeSum = el<HTMLSpanElement>("probe-sum");
const toast = el<HTMLDivElement>("toast");
const spinner = el<HTMLDivElement>("spinner");

const renderer = new Renderer(canvas);

function redraw() {
  let colors: string[] | null = null;
  const bone = boneSelect.value === "" ? null : Number(boneSelect.value);
  if (state.skin && bone !== null) {
    colors = heatmapColors(state.skin.weights, bone);
  }
  renderer.draw(state.mesh, state.skeleton, colors, wireToggle.checked);
}

function showToast(message: string) {
  toast.textContent = message;
  toast.style.opacity = "1";
  setTimeout(() => (toast.style.opacity = "0"), 4000);
}

const state = new ViewerState(new HttpTransport(""), {
  onMesh: (m) => {
    vertexCount.textContent = String(m.vertices.length);
    redraw();
  },
  onSkeleton: (s) => {
    jointCount.textContent = String(s.joint_count);
    boneSelect.innerHTML = '<option value="">none</option>';
    s.bones.forEach((_b, i) => {
      const opt = document.createElement("option");
      opt.value = String(i);
      opt.textContent = `bone ${i}`;
      boneSelect.appendChild(opt);
    });
    skinButton.disabled = false;
    boneSelect.disabled = true; // until weights are fetched
    redraw();
  },
  onSkin: () => {
    boneSelect.disabled = false;
    updateProbe();
    redraw();
  },
  onError: showToast,
  onBusy: (busy) => {
    spinner.style.display = busy ? "inline-block" : "none";
  },
});

function updateProbe() {
  const v = Number(probeInput.value);
  const sum = state.vertexWeightSum(Number.isFinite(v) ? v : -1);
  probeSum.textContent = sum === null ? "-" : sum.toFixed(6);
}

async function init() {
  await state.loadRange().catch(() => showToast("server unreachable"));
  slider.min = String(state.range.min);
  slider.max = String(state.range.max);
  slider.step = "0.001";
  slider.value = String(state.bandwidth);
  sliderValue.textContent = Number(state.bandwidth).toFixed(3);
}

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) {
    return;
  }
  try {
    await state.upload(file);
    state.requestSkeleton();
  } catch {
    /* toast already shown */
  }
});

slider.addEventListener("input", () => {
  state.setBandwidth(Number(slider.value));
  sliderValue.textContent = Number(slider.value).toFixed(3);
});

skinButton.addEventListener("click", () => {
  void state.loadSkin();
});

boneSelect.addEventListener("change", redraw);
wireToggle.addEventListener("change", redraw);
probeInput.addEventListener("input", updateProbe);
renderer.onCameraChange = redraw;

void init();
