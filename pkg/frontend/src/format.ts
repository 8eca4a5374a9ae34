/** Display helpers. Server values are shown verbatim: displayValue is the
 * identity on the JSON number's string form, so what the user reads is
 * exactly what the API returned. Rounded forms are only used for axis
 * ticks, never for reported values. */

export function displayValue(value: number): string {
  return String(value);
}

export function axisTick(value: number): string {
  if (!Number.isFinite(value)) {
    return String(value);
  }
  if (value !== 0 && (Math.abs(value) >= 10000 || Math.abs(value) < 0.001)) {
    return value.toExponential(2);
  }
  return String(Math.round(value * 10000) / 10000);
}

export function stageBadge(status: string): string {
  const glyphs: Record<string, string> = {
    done: "✓",
    running: "…",
    failed: "✗",
    pending: "·",
  };
  return glyphs[status] ?? "?";
}
