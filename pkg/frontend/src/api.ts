import type { ChatResponse, SessionConfig, TraceRecord } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(path, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  const body = await resp.text();
  if (!resp.ok) {
    let message = `HTTP ${resp.status}`;
    try {
      const parsed = JSON.parse(body);
      if (parsed.error) message = `${message}: ${parsed.error}`;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, message);
  }
  return JSON.parse(body) as T;
}

export function createSession(
  knowledge: string[],
  triplesInline?: string,
  config?: SessionConfig,
): Promise<{ session_id: string }> {
  const body: Record<string, unknown> = { knowledge };
  if (triplesInline) body.triples_inline = triplesInline;
  if (config && Object.keys(config).length > 0) body.config = config;
  return request("/session", { method: "POST", body: JSON.stringify(body) });
}

export function sendChat(
  sessionId: string,
  utterance: string,
): Promise<ChatResponse> {
  return request(`/session/${encodeURIComponent(sessionId)}/chat`, {
    method: "POST",
    body: JSON.stringify({ utterance }),
  });
}

export function fetchTrace(traceId: string): Promise<TraceRecord[]> {
  return request(`/trace/${encodeURIComponent(traceId)}`);
}
