// Eight-slice risk pie geometry. Slice angle is proportional to the
// complication's probability (share of the probability total), High
// slices are visually distinguished, and every slice renders in the
// fixed complication order even when tiny.

import type { ComplicationRisk } from "./types.js";

export interface SliceGeometry {
  code: string;
  path: string;
  startAngle: number;
  endAngle: number;
  high: boolean;
  probability: number;
  labelAngle: number;
}

const MIN_VISIBLE_SHARE = 0.004; // keep near-zero slices hoverable

export function sliceShares(probabilities: number[]): number[] {
  const floored = probabilities.map((p) => Math.max(p, 0));
  const total = floored.reduce((a, b) => a + b, 0);
  if (total <= 0) {
    return probabilities.map(() => 1 / probabilities.length);
  }
  const shares = floored.map((p) =>
    Math.max(p / total, MIN_VISIBLE_SHARE),
  );
  const norm = shares.reduce((a, b) => a + b, 0);
  return shares.map((s) => s / norm);
}

export function polarToCartesian(
  cx: number, cy: number, radius: number, angleRadians: number,
): { x: number; y: number } {
  // angle 0 at 12 o'clock, clockwise
  return {
    x: cx + radius * Math.sin(angleRadians),
    y: cy - radius * Math.cos(angleRadians),
  };
}

export function arcPath(
  cx: number, cy: number, radius: number, start: number, end: number,
): string {
  const from = polarToCartesian(cx, cy, radius, start);
  const to = polarToCartesian(cx, cy, radius, end);
  const largeArc = end - start > Math.PI ? 1 : 0;
  return [
    `M ${cx} ${cy}`,
    `L ${from.x.toFixed(3)} ${from.y.toFixed(3)}`,
    `A ${radius} ${radius} 0 ${largeArc} 1 ${to.x.toFixed(3)} ${to.y.toFixed(3)}`,
    "Z",
  ].join(" ");
}

export function buildSlices(
  complications: ComplicationRisk[],
  cx = 100, cy = 100, radius = 90,
): SliceGeometry[] {
  const shares = sliceShares(complications.map((c) => c.probability));
  const slices: SliceGeometry[] = [];
  let angle = 0;
  for (let i = 0; i < complications.length; i++) {
    const span = shares[i] * 2 * Math.PI;
    const entry = complications[i];
    slices.push({
      code: entry.code,
      path: arcPath(cx, cy, radius, angle, angle + span),
      startAngle: angle,
      endAngle: angle + span,
      high: entry.risk_class === "High",
      probability: entry.probability,
      labelAngle: angle + span / 2,
    });
    angle += span;
  }
  return slices;
}

export function clampProbability(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(0, value));
}
