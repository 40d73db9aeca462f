import init, { analyzeScalar, analyzeCase, checkDiscrete, listCases } from "./pkg/stiffkit_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const fmt = (x) => (typeof x === "number" ? x.toPrecision(6) : String(x));

function summary(r) {
  const lines = [
    `kappa  ${fmt(r.kappa)}`,
    `gamma  ${fmt(r.gamma)}`,
    `sigma  ${fmt(r.sigma)}`,
    `T*     ${fmt(r.transient_time)}`,
  ];
  if (r.stiff) lines.push("stiff");
  if (r.ill_conditioned) lines.push("ill-conditioned");
  return lines.join("\n");
}

function show(out, f) {
  out.textContent = "...";
  // let the page repaint before a long analysis blocks the thread
  setTimeout(() => {
    try {
      out.textContent = f();
    } catch (e) {
      out.textContent = `error: ${e.message ?? e}`;
    }
  }, 10);
}

await init();

const cases = JSON.parse(listCases());
for (const c of cases) {
  const o = document.createElement("option");
  o.value = c.name;
  o.textContent = c.name;
  $("c-name").append(o);
}
function pickCase() {
  const c = cases.find((c) => c.name === $("c-name").value);
  $("c-param").textContent = c.param;
  $("c-value").value = c.grid[Math.min(1, c.grid.length - 1)];
  $("c-name").title = c.description;
}
$("c-name").addEventListener("change", pickCase);
pickCase();

$("s-go").addEventListener("click", () =>
  show($("s-out"), () => summary(JSON.parse(analyzeScalar(num("s-re"), num("s-im"), num("s-t"))))),
);

$("c-go").addEventListener("click", () =>
  show($("c-out"), () => {
    const r = JSON.parse(analyzeCase($("c-name").value, Number($("c-value").value)));
    return `${r.description}\n${summary(r)}\neta*   [${r.eta_star.map(fmt).join(", ")}]`;
  }),
);

$("d-go").addEventListener("click", () =>
  show($("d-out"), () => {
    const r = JSON.parse(checkDiscrete(num("d-l"), num("d-t"), $("d-m").value, num("d-n")));
    const c = r.continuous;
    return [
      `          continuous   discrete`,
      `kappa     ${fmt(c.kappa).padEnd(12)} ${fmt(r.kappa_d)}   ${r.wr1 ? "ok" : "off"}`,
      `gamma     ${fmt(c.gamma).padEnd(12)} ${fmt(r.gamma_d)}   ${r.wr2 ? "ok" : "off"}`,
      `sigma     ${fmt(c.sigma).padEnd(12)} ${fmt(r.sigma_d)}`,
      r.pass ? "well represented" : "not well represented",
    ].join("\n");
  }),
);
