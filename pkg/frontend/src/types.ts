/** JSON schemas of the dialogue service, consumed bit-exactly. */

export type CopySource = "vocab" | "dialogue" | "knowledge" | "triple";

/** Per-token grounding record: gate values, copy source, attention. */
export interface TraceRecord {
  token: string;
  g1: number;
  g2: number;
  g3: number;
  source: CopySource;
  alpha_d: number[];
  alpha_kb: number[];
  /** [head, relation, tail, weight] rows, heaviest triples first. */
  alpha_t: [string, string, string, number][];
}

export interface ChatResponse {
  session_id: string;
  response: string;
  trace_id: string;
  trace: TraceRecord[];
  dialogue_tokens: string[];
  knowledge_tokens: string[];
}

export interface SessionConfig {
  window?: number;
  beam_width?: number;
  max_decode_len?: number;
  knowledge_topk?: number;
}

export interface TranscriptEntry {
  speaker: "you" | "model";
  text: string;
  /** set on model entries so their tokens stay inspectable */
  trace?: ChatResponse;
}
