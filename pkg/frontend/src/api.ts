/** Typed client for the gateway API. The console never computes scores,
 * energy or emissions itself: these types carry server values verbatim. */

export interface TrainingEvent {
  timestamp: number;
  step: number;
  train_loss: number;
  train_accuracy: number;
  valid_accuracy: number;
  valid_ppl: number;
  learning_rate: number;
  energy_kwh: number;
}

export interface ModelEntry {
  name: string;
  bundle_path: string;
  status: string;
  decode_defaults: { beam_size?: number; alpha?: number; max_len?: number } | null;
}

export interface RunSummary {
  run_id: string;
  stages: Record<string, string>;
  active: boolean;
}

export interface RunDetail {
  run_id: string;
  config_digest: string;
  stages: Record<string, { status: string; error: string | null }>;
  artifacts: Record<string, string>;
  active: boolean;
}

export interface TranslationOut {
  text: string;
  total_log_prob: number;
  normalized_score: number;
  finished: boolean;
  piece_ids: number[];
}

export interface GreenReport {
  stage_energy_kwh: Record<string, number>;
  total_energy_kwh: number;
  factors: { pue: number; carbon_intensity: number; region: string };
  total_kg_co2: number;
  sample_count: number;
  method: string;
  stage_methods: Record<string, string>;
  status?: string;
}

export interface TranslateRequestBody {
  models: string[];
  text: string[];
  beam: number;
  alpha: number;
  max_len: number;
}

export function translateBody(
  models: string[],
  text: string[],
  beam = 5,
  alpha = 0.6,
  maxLen = 64,
): TranslateRequestBody {
  return { models, text, beam, alpha, max_len: maxLen };
}

export function eventsUrl(runId: string): string {
  return `/api/runs/${encodeURIComponent(runId)}/events`;
}

export function greenUrl(runId: string): string {
  return `/api/runs/${encodeURIComponent(runId)}/green`;
}

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) {
    throw new Error(`${url}: ${resp.status}`);
  }
  return (await resp.json()) as T;
}

export async function listModels(): Promise<ModelEntry[]> {
  const data = await getJson<{ models: ModelEntry[] }>("/api/models");
  return data.models;
}

export async function listRuns(): Promise<RunSummary[]> {
  const data = await getJson<{ runs: RunSummary[] }>("/api/runs");
  return data.runs;
}

export function runDetail(runId: string): Promise<RunDetail> {
  return getJson<RunDetail>(`/api/runs/${encodeURIComponent(runId)}`);
}

export function greenReport(runId: string): Promise<GreenReport> {
  return getJson<GreenReport>(greenUrl(runId));
}

export async function translate(body: TranslateRequestBody): Promise<TranslationOut[]> {
  const resp = await fetch("/api/translate", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  const data = await resp.json();
  if (!resp.ok) {
    throw new Error(data.error ?? `translate failed: ${resp.status}`);
  }
  return data.translations as TranslationOut[];
}

export interface LaunchResult {
  ok: boolean;
  runId?: string;
  conflict?: boolean;
  error?: string;
}

export async function launchRun(config: unknown): Promise<LaunchResult> {
  const resp = await fetch("/api/runs", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(config),
  });
  const data = await resp.json();
  if (resp.status === 409) {
    return { ok: false, conflict: true, error: data.error };
  }
  if (!resp.ok) {
    return { ok: false, error: data.error ?? `launch failed: ${resp.status}` };
  }
  return { ok: true, runId: data.run_id };
}
