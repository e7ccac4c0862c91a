import init, { score_records, analyze_matrix, record_graph, reference_matrix } from "./pkg/personkg_web.js";

const SAMPLE = {
  "Name": "Zeng Guofan",
  "Alias": "Courtesy name Bohan, pseudonym Disheng",
  "Gender": "Male",
  "Era": "Late Qing Dynasty",
  "Birthplace": "Xiangxiang, Hunan",
  "DateOfBirth": "1811",
  "DateOfDeath": "1872",
  "Achievements": [{ "Influence": "Founded the Xiang Army", "Location": "Hunan", "Time": "1853" }],
};

const $ = (id) => document.getElementById(id);

function run(errorId, f) {
  $(errorId).textContent = "";
  try {
    f();
  } catch (e) {
    $(errorId).textContent = e.message ?? String(e);
  }
}

function fillTable(table, header, rows, best) {
  table.replaceChildren();
  const head = table.insertRow();
  for (const h of header) head.appendChild(document.createElement("th")).textContent = h;
  for (const row of rows) {
    const tr = table.insertRow();
    if (best && row[0] === best) tr.className = "best";
    for (const cell of row) tr.insertCell().textContent = cell;
  }
}

function score() {
  const out = JSON.parse(score_records($("pred").value, $("gold").value));
  fillTable($("fields"), ["field", "method", "score"],
    out.fields.map((f) => [f.field, f.method, f.score.toFixed(2)]));
  fillTable($("totals"), ["scheme", "total"], out.totals.map((t) => [t.scheme, t.total.toFixed(4)]));
}

function analyze() {
  const mode = document.querySelector("input[name=mode]:checked").value;
  const out = JSON.parse(analyze_matrix($("matrix").value, mode));
  fillTable($("variances"), ["scheme", "population", "sample"],
    out.per_scheme.map((s) => [s.scheme_name, s.population.toFixed(4), s.sample.toFixed(4)]),
    out.selected_scheme);
}

function graph() {
  const out = JSON.parse(record_graph($("record").value));
  $("graph-summary").textContent =
    `${out.nodes} nodes, ${out.relationships} relationships` +
    (out.warnings.length ? `; ${out.warnings.length} warnings: ${out.warnings.join(" | ")}` : "");
  $("cypher").textContent = out.cypher;
}

await init();
const sample = JSON.stringify(SAMPLE, null, 2);
$("pred").value = sample.replace('"1872"', '"1871"');
$("gold").value = sample;
$("matrix").value = reference_matrix();
$("record").value = sample;
$("score").onclick = () => run("score-error", score);
$("analyze").onclick = () => run("analyze-error", analyze);
$("graph").onclick = () => run("graph-error", graph);
