/** DOM wiring for the console: runs list, live run view (charts + green
 * panel), AutoBuild form, and the translate playground. */

import * as api from "./api.js";
import { energyBarsSvg, lineChartSvg } from "./charts.js";
import { displayValue, stageBadge } from "./format.js";
import {
  DEFAULT_FORM,
  RunFormState,
  ratioSum,
  submitEnabled,
  toRunConfig,
  validate,
} from "./form.js";
import { EventSeries, SERIES_KEYS, SERIES_LABELS } from "./series.js";

const root = document.getElementById("app") as HTMLElement;

let activeStream: EventSource | null = null;

function closeStream(): void {
  if (activeStream) {
    activeStream.close();
    activeStream = null;
  }
}

function el(tag: string, attrs: Record<string, string> = {}, html = ""): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    node.setAttribute(k, v);
  }
  if (html) {
    node.innerHTML = html;
  }
  return node;
}

function navigate(hash: string): void {
  window.location.hash = hash;
}

// ---------------------------------------------------------------------------
// runs list

async function renderRuns(): Promise<void> {
  closeStream();
  root.innerHTML = "<h2>Runs</h2>";
  const list = el("div", { class: "runs" });
  root.appendChild(list);
  try {
    const runs = await api.listRuns();
    if (runs.length === 0) {
      list.innerHTML = "<p>No runs yet. Launch one from the AutoBuild tab.</p>";
      return;
    }
    for (const run of runs) {
      const stages = Object.entries(run.stages)
        .map(([name, status]) => `<span class="stage ${status}" title="${name}: ${status}">${stageBadge(status)}</span>`)
        .join("");
      const row = el(
        "div",
        { class: "run-row" },
        `<a href="#run/${encodeURIComponent(run.run_id)}">${run.run_id}</a>` +
          `<span class="stages">${stages}</span>` +
          (run.active ? '<span class="live-badge">live</span>' : ""),
      );
      list.appendChild(row);
    }
  } catch (err) {
    list.innerHTML = `<p class="error">${String(err)}</p>`;
  }
}

// ---------------------------------------------------------------------------
// run detail: live charts + green panel

async function renderRun(runId: string): Promise<void> {
  closeStream();
  root.innerHTML = `<h2>Run ${runId}</h2>`;
  const banner = el("div", { class: "banner hidden" });
  const stagesBox = el("div", { class: "stage-table" });
  const chartsBox = el("div", { class: "charts" });
  const greenBox = el("div", { class: "green-panel" }, "<h3>Green report</h3><p>loading…</p>");
  root.append(banner, stagesBox, chartsBox, greenBox);

  const chartSlots = new Map<string, HTMLElement>();
  for (const key of SERIES_KEYS) {
    const slot = el("div", { class: "chart-slot", id: `chart-${key}` });
    chartsBox.appendChild(slot);
    chartSlots.set(key, slot);
  }

  const refreshStages = async () => {
    try {
      const detail = await api.runDetail(runId);
      stagesBox.innerHTML = Object.entries(detail.stages)
        .map(
          ([name, s]) =>
            `<div class="stage-row"><span>${name}</span>` +
            `<span class="stage ${s.status}">${s.status}</span>` +
            (s.error ? `<span class="error">${s.error}</span>` : "") +
            `</div>`,
        )
        .join("");
    } catch {
      stagesBox.innerHTML = '<p class="error">run not found</p>';
    }
  };

  const refreshGreen = async () => {
    try {
      const report = await api.greenReport(runId);
      if (report.status === "pending") {
        greenBox.innerHTML = "<h3>Green report</h3><p>not generated yet</p>";
        return;
      }
      const methodBadge = `<span class="method-badge ${report.method}">${report.method}</span>`;
      greenBox.innerHTML =
        `<h3>Green report ${methodBadge}</h3>` +
        energyBarsSvg(report.stage_energy_kwh) +
        `<dl>` +
        `<dt>total energy</dt><dd>${displayValue(report.total_energy_kwh)} kWh</dd>` +
        `<dt>emissions</dt><dd>${displayValue(report.total_kg_co2)} kgCO2</dd>` +
        `<dt>PUE</dt><dd>${displayValue(report.factors.pue)}</dd>` +
        `<dt>carbon intensity</dt><dd>${displayValue(report.factors.carbon_intensity)} kgCO2/kWh (${report.factors.region})</dd>` +
        `<dt>samples</dt><dd>${displayValue(report.sample_count)}</dd>` +
        `</dl>`;
    } catch {
      greenBox.innerHTML = "<h3>Green report</h3><p class='error'>unavailable</p>";
    }
  };

  const series = new EventSeries();
  const redraw = () => {
    for (const key of SERIES_KEYS) {
      const slot = chartSlots.get(key)!;
      slot.innerHTML = lineChartSvg(series.points(key), { title: SERIES_LABELS[key] });
    }
  };
  redraw();
  await refreshStages();
  await refreshGreen();

  const stream = new EventSource(api.eventsUrl(runId));
  activeStream = stream;
  stream.onmessage = (message: MessageEvent) => {
    banner.classList.add("hidden");
    const event = JSON.parse(message.data) as api.TrainingEvent;
    if (series.add(event)) {
      redraw(); // a fresh point lands within one event-loop turn of receipt
    }
  };
  stream.addEventListener("end", () => {
    stream.close();
    activeStream = null;
    void refreshStages();
    void refreshGreen();
  });
  stream.onerror = () => {
    banner.textContent = "event stream lost; reconnecting…";
    banner.classList.remove("hidden");
    // EventSource reconnects itself; replayed events are deduplicated by step
  };
}

// ---------------------------------------------------------------------------
// AutoBuild form

function renderAutoBuild(): void {
  closeStream();
  root.innerHTML = "<h2>AutoBuild</h2>";
  const form = { ...DEFAULT_FORM };
  const banner = el("div", { class: "banner hidden" });
  const grid = el("div", { class: "form-grid" });
  const ratioNote = el("div", { class: "ratio-note" });
  const errorsBox = el("div", { class: "form-errors" });
  const submit = el("button", { class: "primary" }, "AutoBuild") as HTMLButtonElement;
  root.append(banner, grid, ratioNote, errorsBox, submit);

  const fields: Array<[keyof RunFormState, string, string]> = [
    ["runName", "run name", "text"],
    ["sourcePath", "source corpus path (on the server)", "text"],
    ["targetPath", "target corpus path (on the server)", "text"],
    ["trainRatio", "train ratio", "number"],
    ["validRatio", "valid ratio", "number"],
    ["testRatio", "test ratio", "number"],
    ["seed", "seed", "number"],
    ["vocabSize", "subword vocab size", "number"],
    ["modelWidth", "model width", "number"],
    ["layerCount", "layers", "number"],
    ["headCount", "attention heads", "number"],
    ["learningRate", "base learning rate", "number"],
    ["maxSteps", "max steps", "number"],
    ["validationInterval", "validation interval", "number"],
  ];

  const update = () => {
    const sum = ratioSum(form);
    const ok = Math.abs(sum - 1.0) <= 1e-9;
    ratioNote.innerHTML = `ratio sum: <b class="${ok ? "ok" : "bad"}">${sum}</b>`;
    const errors = validate(form);
    errorsBox.innerHTML = Object.values(errors)
      .map((e) => `<div class="error">${e}</div>`)
      .join("");
    submit.disabled = !submitEnabled(form);
  };

  for (const [key, label, type] of fields) {
    const wrap = el("label", { class: "field" }, `<span>${label}</span>`);
    const input = el("input", { type, step: "any", value: String(form[key]) }) as HTMLInputElement;
    input.addEventListener("input", () => {
      if (type === "number") {
        (form as Record<string, unknown>)[key] = Number(input.value);
      } else {
        (form as Record<string, unknown>)[key] = input.value;
      }
      update();
    });
    wrap.appendChild(input);
    grid.appendChild(wrap);
  }
  for (const [key, label, options] of [
    ["subwordKind", "subword model", ["unigram", "bpe"]],
    ["architecture", "architecture", ["transformer", "rnn"]],
    ["optimizer", "optimizer", ["adaptive-moment", "sgd"]],
  ] as Array<[keyof RunFormState, string, string[]]>) {
    const wrap = el("label", { class: "field" }, `<span>${label}</span>`);
    const select = el("select") as HTMLSelectElement;
    for (const option of options) {
      select.appendChild(el("option", { value: option }, option));
    }
    select.value = String(form[key]);
    select.addEventListener("change", () => {
      (form as Record<string, unknown>)[key] = select.value;
      update();
    });
    wrap.appendChild(select);
    grid.appendChild(wrap);
  }
  update();

  submit.addEventListener("click", async () => {
    submit.disabled = true;
    const result = await api.launchRun(toRunConfig(form));
    if (result.ok && result.runId) {
      navigate(`run/${encodeURIComponent(result.runId)}`);
      return;
    }
    banner.textContent = result.conflict
      ? `another run is active: ${result.error ?? "conflict"}`
      : result.error ?? "launch failed";
    banner.classList.remove("hidden");
    submit.disabled = !submitEnabled(form);
  });
}

// ---------------------------------------------------------------------------
// translate playground

async function renderTranslate(): Promise<void> {
  closeStream();
  root.innerHTML = "<h2>Translate</h2>";
  const banner = el("div", { class: "banner hidden" });
  const picker = el("div", { class: "model-picker" });
  const input = el("textarea", { rows: "4", placeholder: "one sentence per line" }) as HTMLTextAreaElement;
  const controls = el("div", { class: "controls" });
  const beam = el("input", { type: "number", value: "5", min: "1" }) as HTMLInputElement;
  const alpha = el("input", { type: "number", value: "0.6", step: "any" }) as HTMLInputElement;
  controls.append("beam ", beam, " length penalty ", alpha);
  const go = el("button", { class: "primary" }, "Translate") as HTMLButtonElement;
  const results = el("div", { class: "results" });
  root.append(banner, picker, input, controls, go, results);

  let models: api.ModelEntry[] = [];
  try {
    models = await api.listModels();
  } catch (err) {
    banner.textContent = String(err);
    banner.classList.remove("hidden");
  }
  if (models.length === 0) {
    picker.innerHTML = "<p>No deployed models. Deploy a run first.</p>";
  }
  const checks: HTMLInputElement[] = [];
  for (const model of models) {
    const wrap = el("label", { class: "model-check" });
    const check = el("input", { type: "checkbox", value: model.name }) as HTMLInputElement;
    checks.push(check);
    wrap.append(check, ` ${model.name} (${model.status})`);
    picker.appendChild(wrap);
  }

  const update = () => {
    const anyModel = checks.some((c) => c.checked);
    go.disabled = !anyModel || input.value.trim() === "";
  };
  checks.forEach((c) => c.addEventListener("change", update));
  input.addEventListener("input", update);
  update();

  go.addEventListener("click", async () => {
    banner.classList.add("hidden");
    const selected = checks.filter((c) => c.checked).map((c) => c.value);
    const lines = input.value.split("\n").map((l) => l.trim()).filter((l) => l);
    go.disabled = true;
    try {
      const body = api.translateBody(selected, lines, Number(beam.value), Number(alpha.value));
      const translations = await api.translate(body);
      results.innerHTML =
        (selected.length > 1
          ? `<p class="note">ensemble of ${selected.length} models</p>`
          : "") +
        translations
          .map(
            (t) =>
              `<div class="result"><div class="text">${t.text}</div>` +
              `<div class="score">score ${displayValue(t.normalized_score)}</div></div>`,
          )
          .join("");
    } catch (err) {
      banner.textContent = String(err);
      banner.classList.remove("hidden");
    } finally {
      go.disabled = false;
      update();
    }
  });
}

// ---------------------------------------------------------------------------
// router

function route(): void {
  const hash = window.location.hash.slice(1);
  if (hash.startsWith("run/")) {
    void renderRun(decodeURIComponent(hash.slice("run/".length)));
  } else if (hash === "autobuild") {
    renderAutoBuild();
  } else if (hash === "translate") {
    void renderTranslate();
  } else {
    void renderRuns();
  }
  document.querySelectorAll("nav a").forEach((a) => {
    a.classList.toggle("active", a.getAttribute("href") === `#${hash || "runs"}`);
  });
}

window.addEventListener("hashchange", route);
route();
