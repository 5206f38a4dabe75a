// Image-space <-> canvas-space transforms and overlay drawing. The backing
// store is sized in device pixels (CSS size x devicePixelRatio) so picking
// and rendering stay exact; at integer zoom the mapping is lossless.

import type { PointPair } from "./api.js";

export interface ViewTransform {
  zoom: number; // image px -> CSS px
  panX: number; // CSS px
  panY: number;
  dpr: number; // device pixel ratio
}

export function imageToCanvas(p: PointPair, vt: ViewTransform): PointPair {
  return [(p[0] * vt.zoom + vt.panX) * vt.dpr, (p[1] * vt.zoom + vt.panY) * vt.dpr];
}

export function canvasToImage(p: PointPair, vt: ViewTransform): PointPair {
  return [(p[0] / vt.dpr - vt.panX) / vt.zoom, (p[1] / vt.dpr - vt.panY) / vt.zoom];
}

export function clientToImage(
  clientX: number,
  clientY: number,
  rect: { left: number; top: number },
  vt: ViewTransform,
): PointPair {
  // Client coordinates are CSS pixels relative to the viewport.
  const cssX = clientX - rect.left;
  const cssY = clientY - rect.top;
  return [(cssX - vt.panX) / vt.zoom, (cssY - vt.panY) / vt.zoom];
}

export interface OverlayStyle {
  color: string;
  radius: number;
  label?: boolean;
  cross?: boolean;
}

// Color convention: detected glints blue, template-projected green.
export const DETECTED_STYLE: OverlayStyle = { color: "#3b82f6", radius: 6, label: true };
export const PROJECTED_STYLE: OverlayStyle = { color: "#22c55e", radius: 9, label: false };
export const LABEL_STYLE: OverlayStyle = { color: "#eab308", radius: 5, cross: true };
export const PENDING_STYLE: OverlayStyle = { color: "#f472b6", radius: 6, label: true, cross: true };

export function drawMarkers(
  ctx: CanvasRenderingContext2D,
  points: Iterable<[number, PointPair]>,
  vt: ViewTransform,
  style: OverlayStyle,
): void {
  ctx.save();
  ctx.strokeStyle = style.color;
  ctx.fillStyle = style.color;
  ctx.lineWidth = Math.max(1.5, vt.dpr);
  ctx.font = `${12 * vt.dpr}px system-ui, sans-serif`;
  for (const [led, p] of points) {
    const [cx, cy] = imageToCanvas(p, vt);
    const r = style.radius * vt.dpr;
    ctx.beginPath();
    ctx.arc(cx, cy, r, 0, Math.PI * 2);
    ctx.stroke();
    if (style.cross) {
      ctx.beginPath();
      ctx.moveTo(cx - r, cy);
      ctx.lineTo(cx + r, cy);
      ctx.moveTo(cx, cy - r);
      ctx.lineTo(cx, cy + r);
      ctx.stroke();
    }
    if (style.label) {
      ctx.fillText(String(led), cx + r + 2 * vt.dpr, cy - r);
    }
  }
  ctx.restore();
}

// Nearest marker within pickRadius CSS px of the pointer, for drag-to-correct.
export function pickMarker(
  imagePoint: PointPair,
  markers: Iterable<[number, PointPair]>,
  vt: ViewTransform,
  pickRadiusCss = 8,
): number | null {
  const radiusImg = pickRadiusCss / vt.zoom;
  let best: number | null = null;
  let bestD = Infinity;
  for (const [led, p] of markers) {
    const d = Math.hypot(imagePoint[0] - p[0], imagePoint[1] - p[1]);
    if (d < bestD && d <= radiusImg) {
      bestD = d;
      best = led;
    }
  }
  return best;
}
