import init, { Scene, brdf_slice } from "./pkg/multips_demo.js";

const SIZE = 128;
const $ = (id) => document.getElementById(id);

function blit(canvas, rgba) {
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
}

let scene = null;
let light = { x: 0.3, y: 0.3 };

function relight() {
  blit($("relit"), scene.relight(light.x, light.y));
}

function newScene() {
  if (scene) scene.free();
  scene = new Scene(Number($("seed").value), Number($("material").value), SIZE);
  relight();
}

function solve() {
  const r = scene.photometric_stereo(Number($("lights").value));
  blit($("estimated"), r.estimated());
  blit($("truth"), r.truth());
  blit($("error"), r.error());
  $("mae").textContent = `mean angular error ${r.mae_deg().toFixed(2)} deg`;
  r.free();
}

function drawLobe() {
  const canvas = $("lobe");
  const ctx = canvas.getContext("2d");
  const incidence = Number($("incidence").value);
  const values = brdf_slice(0.7, Number($("metallic").value) / 100, Number($("roughness").value) / 100, 0.5, incidence, 181);
  const peak = Math.max(...values, 1e-9);
  const cx = canvas.width / 2, cy = canvas.height - 10, r = canvas.height - 30;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#444";
  ctx.beginPath();
  ctx.moveTo(10, cy);
  ctx.lineTo(canvas.width - 10, cy);
  ctx.stroke();
  const t = (incidence * Math.PI) / 180;
  ctx.strokeStyle = "#fc3";
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx - r * Math.sin(t), cy - r * Math.cos(t));
  ctx.stroke();
  ctx.strokeStyle = "#6cf";
  ctx.beginPath();
  values.forEach((v, i) => {
    const a = ((-90 + i) * Math.PI) / 180;
    const len = (v / peak) * r;
    const x = cx + len * Math.sin(a), y = cy - len * Math.cos(a);
    if (i === 0) ctx.moveTo(x, y); else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

function pointerLight(ev) {
  const rect = ev.target.getBoundingClientRect();
  light = {
    x: ((ev.clientX - rect.left) / rect.width) * 2 - 1,
    y: 1 - ((ev.clientY - rect.top) / rect.height) * 2,
  };
  relight();
}

await init();
newScene();
solve();
drawLobe();

let dragging = false;
$("relit").addEventListener("pointerdown", (ev) => { dragging = true; pointerLight(ev); });
$("relit").addEventListener("pointermove", (ev) => { if (dragging) pointerLight(ev); });
window.addEventListener("pointerup", () => { dragging = false; });
$("new-scene").addEventListener("click", () => { newScene(); solve(); });
$("lights").addEventListener("input", () => { $("lights-value").textContent = $("lights").value; });
$("solve").addEventListener("click", solve);
for (const id of ["incidence", "roughness", "metallic"]) $(id).addEventListener("input", drawLobe);
