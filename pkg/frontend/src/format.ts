/**
 * Display formatting for values taken from service payloads.
 *
 * All views format numbers through these helpers, and the end-to-end
 * test re-applies them to the raw API payload when diffing rendered
 * text — so "display precision" is defined in exactly one place.
 */

/** Signed fixed-point for coefficients and AMEs, e.g. "+1.2345". */
export function fmtCoef(x: number): string {
  const s = x.toFixed(4);
  return x >= 0 ? `+${s}` : s;
}

/** Probabilities and standard errors, e.g. "0.7312". */
export function fmtProb(x: number): string {
  return x.toFixed(4);
}

/** Verbal-map levels, matching the service's card text, e.g. "0.975". */
export function fmtMapValue(x: number): string {
  return x.toFixed(3);
}

/** Constraint residuals and side effects, e.g. "3.142e-7". */
export function fmtResidual(x: number): string {
  return x.toExponential(3);
}

/** Short form of a content hash or version token. */
export function fmtHash(h: string): string {
  return h.slice(0, 12);
}

/** Log-likelihoods and other diagnostics, e.g. "-41.0913". */
export function fmtDiag(x: number): string {
  return x.toFixed(4);
}

/** Escape text destined for innerHTML (names, scenarios, error details). */
export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}
