import { ApiError, createSession, sendChat } from "./api.js";
import {
  renderErrorBanner,
  renderInspector,
  renderTranscript,
} from "./render.js";
import type { ChatResponse, TranscriptEntry } from "./types.js";

interface ViewModel {
  sessionId: string | null;
  transcript: TranscriptEntry[];
  pending: boolean;
  error: string | null;
  selected: { entry: number; token: number } | null;
}

const vm: ViewModel = {
  sessionId: null,
  transcript: [],
  pending: false,
  error: null,
  selected: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function redraw(): void {
  el("error").innerHTML = vm.error ? renderErrorBanner(vm.error) : "";
  el("transcript").innerHTML = renderTranscript(vm.transcript);
  const input = el<HTMLInputElement>("utterance");
  const send = el<HTMLButtonElement>("send");
  send.disabled =
    vm.pending || !vm.sessionId || input.value.trim().length === 0;
  el<HTMLButtonElement>("start").disabled = vm.pending;

  const panel = el("inspector");
  if (vm.selected) {
    const entry = vm.transcript[vm.selected.entry];
    const trace = entry?.trace;
    const record = trace?.trace[vm.selected.token];
    if (trace && record) {
      panel.innerHTML = renderInspector(
        record,
        trace.dialogue_tokens,
        trace.knowledge_tokens,
      );
      return;
    }
  }
  panel.innerHTML =
    '<div class="inspector-hint">click a generated token to inspect its grounding</div>';
}

async function startSession(): Promise<void> {
  const knowledge = el<HTMLTextAreaElement>("knowledge")
    .value.split("\n")
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
  const triples = el<HTMLTextAreaElement>("triples").value;
  vm.pending = true;
  vm.error = null;
  redraw();
  try {
    const res = await createSession(knowledge, triples || undefined);
    vm.sessionId = res.session_id;
    vm.transcript = [];
    vm.selected = null;
    el("session-label").textContent = `session ${res.session_id.slice(0, 8)}`;
  } catch (err) {
    vm.error = err instanceof ApiError ? err.message : String(err);
  } finally {
    vm.pending = false;
    redraw();
  }
}

async function send(): Promise<void> {
  const input = el<HTMLInputElement>("utterance");
  const text = input.value.trim();
  if (!vm.sessionId || !text || vm.pending) return;
  vm.pending = true;
  vm.error = null;
  redraw();
  try {
    const response: ChatResponse = await sendChat(vm.sessionId, text);
    vm.transcript.push({ speaker: "you", text });
    vm.transcript.push({
      speaker: "model",
      text: response.response,
      trace: response,
    });
    vm.selected = null;
    input.value = "";
  } catch (err) {
    // transcript stays intact on errors; they surface in the banner
    vm.error = err instanceof ApiError ? err.message : String(err);
  } finally {
    vm.pending = false;
    redraw();
  }
}

export function wire(): void {
  el("start").addEventListener("click", () => void startSession());
  el("send").addEventListener("click", () => void send());
  el<HTMLInputElement>("utterance").addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void send();
  });
  el<HTMLInputElement>("utterance").addEventListener("input", redraw);
  el("transcript").addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.classList.contains("token-chip")) {
      vm.selected = {
        entry: Number(target.dataset.entry),
        token: Number(target.dataset.token),
      };
      redraw();
    }
  });
  redraw();
}

if (typeof document !== "undefined" && document.getElementById("send")) {
  wire();
}
