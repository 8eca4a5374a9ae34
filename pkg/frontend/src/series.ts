/** Chart series accumulated from the training-event stream. Points are
 * deduplicated by step, so a reconnect (which replays the whole log) never
 * produces duplicates. */

import type { TrainingEvent } from "./api.js";

export const SERIES_KEYS = [
  "train_loss",
  "valid_accuracy",
  "valid_ppl",
  "learning_rate",
  "energy_kwh",
] as const;

export type SeriesKey = (typeof SERIES_KEYS)[number];

export const SERIES_LABELS: Record<SeriesKey, string> = {
  train_loss: "training loss",
  valid_accuracy: "validation accuracy",
  valid_ppl: "validation perplexity",
  learning_rate: "learning rate",
  energy_kwh: "cumulative energy (kWh)",
};

export interface Point {
  step: number;
  value: number;
}

export class EventSeries {
  private steps = new Set<number>();
  readonly events: TrainingEvent[] = [];

  /** Returns true when the event was new (not a replayed duplicate). */
  add(event: TrainingEvent): boolean {
    if (this.steps.has(event.step)) {
      return false;
    }
    this.steps.add(event.step);
    this.events.push(event);
    this.events.sort((a, b) => a.step - b.step);
    return true;
  }

  points(key: SeriesKey): Point[] {
    return this.events.map((e) => ({ step: e.step, value: e[key] }));
  }

  get size(): number {
    return this.events.length;
  }

  latest(): TrainingEvent | null {
    return this.events.length ? this.events[this.events.length - 1] : null;
  }
}
