// Expects the wasm-bindgen output (`--target web`) in ./pkg.
import init, { Demo } from "./pkg/halluc_web.js";

const $ = (id) => document.getElementById(id);
const SCALE = 4;
let demo = null;

function status(text) {
  $("status").textContent = text;
}

// Draw an RGBA buffer of known width onto a canvas, scaled up.
function paint(canvas, rgba, width) {
  const height = rgba.length / 4 / width;
  const src = new ImageData(new Uint8ClampedArray(rgba), width, height);
  const tmp = new OffscreenCanvas(width, height);
  tmp.getContext("2d").putImageData(src, 0, 0);
  canvas.width = width * SCALE;
  canvas.height = height * SCALE;
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

// Long calls block the main thread; let the status line repaint first.
function busy(text, fn) {
  status(text);
  setTimeout(() => {
    try {
      fn();
    } catch (e) {
      status(`error: ${e}`);
    }
  }, 20);
}

function make() {
  busy("generating…", () => {
    demo?.free();
    demo = new Demo(Number($("seed").value), Number($("noise").value));
    const size = demo.image_size();
    const cls = JSON.parse(demo.classes());
    $("classes").textContent = `base classes ${cls.base.join(", ")} · novel classes ${cls.novel.join(", ")}`;
    paint($("gallery"), demo.gallery(), 4 * size);
    $("losses").textContent = "";
    $("novel").replaceChildren();
    status("ready");
  });
}

function showProgress(json) {
  const p = JSON.parse(json);
  $("losses").textContent =
    `${p.phase}: ${p.steps} steps, loss_D ${p.loss_d.toFixed(3)}, loss_G ${p.loss_g.toFixed(3)}`;
}

function hallucinate() {
  busy("hallucinating…", () => {
    const m = Number($("m").value);
    const rows = JSON.parse(demo.hallucinate(Number($("pool").value), m, $("gated").checked));
    const size = demo.image_size();
    const out = $("novel");
    out.replaceChildren();
    for (const cls of JSON.parse(demo.classes()).novel) {
      const h = document.createElement("h3");
      h.textContent = `class ${cls}: support, then candidates best first (top ${m} kept)`;
      const support = document.createElement("canvas");
      paint(support, demo.support(cls), size);
      const strip = document.createElement("canvas");
      const rgba = demo.candidates(cls);
      paint(strip, rgba, rgba.length / 4 / size);
      const table = document.createElement("table");
      table.innerHTML = "<tr><th>rank</th><th>gen</th><th>realism</th><th>posterior</th><th>score</th></tr>";
      for (const r of rows.filter((r) => r.class === cls)) {
        const tr = table.insertRow();
        if (r.selected) tr.className = "sel";
        for (const v of [r.rank, r.generation_index, r.realism.toFixed(3), r.posterior.toFixed(3), r.score.toFixed(3)]) {
          tr.insertCell().textContent = v;
        }
      }
      out.append(h, support, strip, table);
    }
    status("ready");
  });
}

await init();
$("make").onclick = make;
$("train").onclick = () => busy("training…", () => showProgress(demo.train_base(100)));
$("finetune").onclick = () => busy("finetuning…", () => showProgress(demo.finetune(100)));
$("hallucinate").onclick = hallucinate;
make();
