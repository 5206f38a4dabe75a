// Session state for annotation and review. Pure logic, no DOM: the canvas
// and keyboard layers call into this and the tests exercise it directly.
//
// Invariants: exactly one LED is active at any time, and pending edits must
// be saved or explicitly discarded before the frame changes.

import type { AnnotationRecord, PointPair, Prediction } from "./api.js";

export interface OverlayToggles {
  detected: boolean;
  templateProjected: boolean;
  labels: boolean;
}

export interface PendingPoint {
  x: number;
  y: number;
  snapped: boolean;
}

export const SNAP_RADIUS_PX = 3;

export class PendingEditsError extends Error {
  constructor() {
    super("pending edits must be saved or discarded before switching frames");
  }
}

function dist(ax: number, ay: number, bx: number, by: number): number {
  return Math.hypot(ax - bx, ay - by);
}

export class AnnotationSession {
  frameId: string | null = null;
  frameW = 0;
  frameH = 0;
  readonly ledIds: number[];
  private active: number;
  private pending = new Map<number, PendingPoint>();
  private undoStack: number[] = [];
  overlays: OverlayToggles = { detected: true, templateProjected: true, labels: false };
  overrides: Record<string, unknown> = {};
  snapEnabled = true;

  constructor(ledIds: number[]) {
    if (ledIds.length === 0) throw new Error("need at least one LED id");
    this.ledIds = [...ledIds].sort((a, b) => a - b);
    this.active = this.ledIds[0];
  }

  get activeLed(): number {
    return this.active;
  }

  setActiveLed(id: number): void {
    if (!this.ledIds.includes(id)) throw new Error(`unknown LED id ${id}`);
    this.active = id;
  }

  cycleLed(step = 1): number {
    const i = this.ledIds.indexOf(this.active);
    const n = this.ledIds.length;
    this.active = this.ledIds[(i + step + n) % n];
    return this.active;
  }

  get pendingEdits(): ReadonlyMap<number, PendingPoint> {
    return this.pending;
  }

  hasPendingEdits(): boolean {
    return this.pending.size > 0;
  }

  loadFrame(frameId: string, frameW: number, frameH: number, opts?: { discardPending?: boolean }): void {
    if (this.hasPendingEdits() && !opts?.discardPending) throw new PendingEditsError();
    this.frameId = frameId;
    this.frameW = frameW;
    this.frameH = frameH;
    this.pending.clear();
    this.undoStack = [];
  }

  // Place the active LED at (x, y) image coordinates; snaps to the nearest
  // detected centroid within SNAP_RADIUS_PX when snapping is on. Advances
  // to the next unplaced LED so click-click-click annotates a constellation.
  placePoint(x: number, y: number, detected: PointPair[] = []): PendingPoint {
    let px = x;
    let py = y;
    let snapped = false;
    if (this.snapEnabled && detected.length > 0) {
      let best: PointPair | null = null;
      let bestD = Infinity;
      for (const [dx, dy] of detected) {
        const d = dist(x, y, dx, dy);
        if (d < bestD) {
          bestD = d;
          best = [dx, dy];
        }
      }
      if (best && bestD <= SNAP_RADIUS_PX) {
        [px, py] = best;
        snapped = true;
      }
    }
    px = Math.min(Math.max(px, 0), this.frameW - 1);
    py = Math.min(Math.max(py, 0), this.frameH - 1);
    const point = { x: px, y: py, snapped };
    this.pending.set(this.active, point);
    this.undoStack.push(this.active);
    this.advanceToUnplaced();
    return point;
  }

  private advanceToUnplaced(): void {
    const n = this.ledIds.length;
    const start = this.ledIds.indexOf(this.active);
    for (let k = 1; k <= n; k++) {
      const candidate = this.ledIds[(start + k) % n];
      if (!this.pending.has(candidate)) {
        this.active = candidate;
        return;
      }
    }
  }

  undo(): number | null {
    const led = this.undoStack.pop();
    if (led === undefined) return null;
    this.pending.delete(led);
    this.active = led;
    return led;
  }

  discardPending(): void {
    this.pending.clear();
    this.undoStack = [];
  }

  toRecord(verdict: "accepted" | "corrected" | "rejected" = "accepted"): AnnotationRecord {
    if (this.frameId === null) throw new Error("no frame loaded");
    const glints: AnnotationRecord["glints"] = {};
    for (const [led, p] of this.pending) {
      glints[String(led)] = { x: p.x, y: p.y, source: "human" };
    }
    return {
      frame_id: this.frameId,
      frame_w: this.frameW,
      frame_h: this.frameH,
      verdict,
      glints,
    };
  }

  markSaved(): void {
    this.pending.clear();
    this.undoStack = [];
  }
}

export type ReviewVerdict = "accepted" | "corrected" | "rejected";

export class ReviewSession {
  frameId: string;
  frameW: number;
  frameH: number;
  // led -> current position; corrections overwrite the served prediction.
  private points = new Map<number, PointPair>();
  private corrected = new Set<number>();
  rejected = false;

  constructor(prediction: Prediction) {
    this.frameId = prediction.frame_id;
    this.frameW = prediction.frame_w;
    this.frameH = prediction.frame_h;
    for (const [led, xy] of Object.entries(prediction.glints)) {
      this.points.set(Number(led), [xy[0], xy[1]]);
    }
  }

  get glints(): ReadonlyMap<number, PointPair> {
    return this.points;
  }

  correctedLeds(): number[] {
    return [...this.corrected].sort((a, b) => a - b);
  }

  dragTo(led: number, x: number, y: number): void {
    if (!this.points.has(led)) throw new Error(`LED ${led} not present in prediction`);
    const cx = Math.min(Math.max(x, 0), this.frameW - 1);
    const cy = Math.min(Math.max(y, 0), this.frameH - 1);
    this.points.set(led, [cx, cy]);
    this.corrected.add(led);
    this.rejected = false;
  }

  reject(): void {
    this.rejected = true;
  }

  verdict(): ReviewVerdict {
    if (this.rejected) return "rejected";
    return this.corrected.size > 0 ? "corrected" : "accepted";
  }

  toRecord(): AnnotationRecord {
    const glints: AnnotationRecord["glints"] = {};
    for (const [led, [x, y]] of this.points) {
      glints[String(led)] = {
        x,
        y,
        source: this.corrected.has(led) ? "human" : "detected",
      };
    }
    return {
      frame_id: this.frameId,
      frame_w: this.frameW,
      frame_h: this.frameH,
      verdict: this.verdict(),
      glints,
    };
  }
}
