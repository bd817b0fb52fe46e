/**
 * Page bootstrap: wires DOM events to the workbench flows and
 * re-renders the affected panels after each server round trip.
 */

import { HypothesisInfo, ServiceClient } from "./api.js";
import {
  renderCandidates,
  renderError,
  renderHypotheses,
  renderPools,
  renderTraining,
  renderTree,
} from "./render.js";
import { Workbench } from "./state.js";

const panels = {
  hypotheses: document.getElementById("hypotheses") as HTMLDivElement,
  tree: document.getElementById("tree") as HTMLDivElement,
  candidates: document.getElementById("candidates") as HTMLDivElement,
  pools: document.getElementById("pools") as HTMLSpanElement,
  training: document.getElementById("training") as HTMLSpanElement,
  error: document.getElementById("error") as HTMLDivElement,
  kInput: document.getElementById("k-input") as HTMLInputElement,
  factInput: document.getElementById("fact-input") as HTMLInputElement,
  addFactBtn: document.getElementById("add-fact") as HTMLButtonElement,
  retrainBtn: document.getElementById("retrain") as HTMLButtonElement,
};

const client = new ServiceClient(window.location.origin.replace(/:\d+$/, ":8000"));
const bench = new Workbench(client);
let hypothesisList: HypothesisInfo[] = [];

function redraw() {
  panels.tree.innerHTML = renderTree(bench.state.tree, bench.state.queryNodeId);
  panels.candidates.innerHTML = renderCandidates(bench.state);
  panels.pools.innerHTML = renderPools(bench.state);
  panels.training.innerHTML = renderTraining(bench.state);
  panels.error.innerHTML = renderError(bench.state);
}

// flows throw after recording state.error; the redraw shows it inline
async function attempt(action: () => Promise<unknown>) {
  try {
    await action();
  } catch {
    // already surfaced in state.error
  }
  redraw();
}

function currentK(): number {
  const k = parseInt(panels.kInput.value, 10);
  return Number.isFinite(k) && k > 0 ? k : 10;
}

panels.hypotheses.addEventListener("click", (ev) => {
  const target = ev.target as HTMLElement;
  const hid = target.dataset.hypothesis;
  if (hid) {
    attempt(() => bench.start(hid));
  }
});

panels.tree.addEventListener("click", (ev) => {
  const target = (ev.target as HTMLElement).closest("[data-node-id]") as HTMLElement | null;
  const nodeId = target?.dataset.nodeId;
  if (nodeId) {
    attempt(() => bench.query(nodeId, currentK()));
  }
});

panels.candidates.addEventListener("click", (ev) => {
  const target = ev.target as HTMLElement;
  const factId = target.dataset.factId;
  if (!factId || target.tagName !== "BUTTON") {
    return;
  }
  if (target.dataset.act === "relevant") {
    attempt(() => bench.markRelevant(factId));
  } else if (target.dataset.act === "irrelevant") {
    attempt(() => bench.markIrrelevant(factId));
  }
});

panels.addFactBtn.addEventListener("click", () => {
  const text = panels.factInput.value.trim();
  if (text.length > 0) {
    attempt(async () => {
      await bench.addManualFact(text);
      panels.factInput.value = "";
    });
  }
});

panels.retrainBtn.addEventListener("click", () => {
  attempt(async () => {
    await bench.retrain({});
    // the fresh generation changes rankings, so rerun the open query
    if (bench.state.queryNodeId !== null) {
      await bench.query(bench.state.queryNodeId, currentK());
    }
  });
});

async function init() {
  hypothesisList = await client.hypotheses();
  panels.hypotheses.innerHTML = renderHypotheses(hypothesisList);
  redraw();
}

init().catch((err) => {
  panels.error.innerHTML = renderError({ ...bench.state, error: String(err) });
});
