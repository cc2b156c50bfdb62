import init, { schedule_curves, simulate_window, noise_window } from "./pkg/mtsci_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

function frame(canvas, series) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const all = series.flatMap((s) => s.ys);
  const lo = Math.min(...all), hi = Math.max(...all);
  const span = hi - lo || 1;
  const n = Math.max(...series.map((s) => s.ys.length));
  const x = (i) => 20 + (i / Math.max(n - 1, 1)) * (canvas.width - 40);
  const y = (v) => canvas.height - 15 - ((v - lo) / span) * (canvas.height - 30);
  return { ctx, x, y };
}

function plot(canvas, series) {
  const { ctx, x, y } = frame(canvas, series);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.setLineDash(s.dash || []);
    ctx.beginPath();
    s.ys.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
    for (const i of s.marks || []) {
      ctx.fillStyle = s.color;
      ctx.fillRect(x(i) - 3, y(s.ys[i]) - 3, 6, 6);
    }
  }
  ctx.setLineDash([]);
}

function run(fn, out) {
  try {
    fn();
  } catch (e) {
    $(out).textContent = "error: " + e.message;
  }
}

function drawSchedule() {
  run(() => {
    const r = JSON.parse(schedule_curves(+$("s-steps").value, +$("s-b1").value, +$("s-bk").value, $("s-shape").value));
    plot($("s-plot"), [
      { ys: r.alpha_bars, color: COLORS[0] },
      { ys: r.betas, color: COLORS[1] },
      { ys: r.sigmas, color: COLORS[2], dash: [4, 3] },
    ]);
    const last = r.alpha_bars[r.alpha_bars.length - 1];
    $("s-out").textContent = `blue alpha_bar, red beta, green sigma\nalpha_bar_K = ${last.toExponential(4)}`;
  }, "s-out");
}

function drawMissing() {
  run(() => {
    const r = JSON.parse(simulate_window(+$("m-feat").value, $("m-pat").value, +$("m-ratio").value, +$("m-seed").value));
    const series = [];
    r.truth.forEach((ys, j) => {
      const color = COLORS[j % COLORS.length];
      const marks = r.held_out[j].flatMap((h, i) => (h ? [i] : []));
      series.push({ ys, color, marks });
      series.push({ ys: r.linear[j], color, dash: [4, 3] });
    });
    plot($("m-plot"), series);
    const fmt = (v) => (v === null ? "n/a" : v.toFixed(4));
    $("m-out").textContent =
      `held-out cells (squares): ${r.held_out_cells}\n` +
      `MAE mean baseline: ${fmt(r.mae_mean)}\nMAE linear interpolation (dashed): ${fmt(r.mae_linear)}`;
  }, "m-out");
}

function drawNoise() {
  const steps = +$("n-steps").value;
  $("n-k").max = steps;
  const k = Math.min(+$("n-k").value, steps);
  $("n-kval").textContent = k;
  run(() => {
    const r = JSON.parse(noise_window(steps, +$("n-bk").value, k, 7));
    plot($("n-plot"), [
      { ys: r.clean, color: COLORS[0] },
      { ys: r.noised, color: COLORS[1] },
    ]);
    $("n-out").textContent = `x_k = ${r.signal_scale.toFixed(4)} x_0 + ${r.noise_scale.toFixed(4)} eps`;
  }, "n-out");
}

await init();
$("s-go").onclick = drawSchedule;
$("m-go").onclick = drawMissing;
for (const id of ["n-k", "n-steps", "n-bk"]) $(id).oninput = drawNoise;
drawSchedule();
drawMissing();
drawNoise();
