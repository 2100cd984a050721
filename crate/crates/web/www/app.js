import init, { temperature, route, rerank_nbest } from "./pkg/mtforge_web.js";

const $ = (id) => document.getElementById(id);

function guard(out, f) {
  try {
    f();
    out.classList.remove("err");
  } catch (e) {
    out.textContent = String(e);
    out.classList.add("err");
  }
}

function showTemperature() {
  const out = $("temp-out");
  $("temp-val").textContent = $("temp").value;
  guard(out, () => {
    const rows = JSON.parse(temperature($("sizes").value, Number($("temp").value)));
    out.innerHTML = "<tr><th>lang</th><th>share</th><th>p</th><th></th></tr>" +
      rows.map((r) => `<tr><td>${r.lang}</td><td>${r.share.toFixed(4)}</td>` +
        `<td>${r.prob.toFixed(4)}</td><td><div class="bar" style="width:${300 * r.prob}px"></div></td></tr>`).join("");
  });
}

function randomLogits() {
  const rows = [];
  for (let t = 0; t < 12; t++) {
    rows.push(Array.from({ length: 4 }, () => (Math.random() * 4 - 2).toFixed(2)).join(" "));
  }
  $("logits").value = rows.join("\n");
  showRoute();
}

function showRoute() {
  const out = $("route-out");
  guard(out, () => {
    const r = JSON.parse(route($("logits").value, Number($("cf").value)));
    const lines = r.tokens.map((t, i) => t.dropped
      ? `token ${i}: dropped`
      : `token ${i}: ` + t.assign.map(([e, w]) => `expert ${e} (${w.toFixed(3)})`).join(", "));
    out.textContent = `capacity ${r.capacity}, load [${r.load.join(", ")}], l_aux ${r.aux_loss.toFixed(4)}\n\n` +
      lines.join("\n");
  });
}

function showRerank() {
  const out = $("rerank-out");
  guard(out, () => {
    const r = JSON.parse(rerank_nbest($("nbest").value, $("refs").value.trimEnd(),
      Number($("l1").value), Number($("l2").value), Number($("lp").value)));
    out.textContent = `λ = (${$("l1").value}, ${$("l2").value}, ${$("lp").value})\n` +
      `BLEU ${r.bleu.toFixed(2)} (direct model only: ${r.baseline_bleu.toFixed(2)})\n\n` +
      r.best.join("\n");
  });
}

await init();
for (const id of ["sizes", "temp"]) $(id).addEventListener("input", showTemperature);
for (const id of ["logits", "cf"]) $(id).addEventListener("input", showRoute);
for (const id of ["nbest", "refs", "l1", "l2", "lp"]) $(id).addEventListener("input", showRerank);
$("randomize").addEventListener("click", randomLogits);
showTemperature();
randomLogits();
showRerank();
