// Annotation flow: click to place the active LED (sub-pixel via the zoomed
// canvas), number keys or Tab to pick LEDs, snap-to-detected, undo, save.

import { ApiClient, type Prediction } from "./api.js";
import { drawMarkers, DETECTED_STYLE, LABEL_STYLE, PENDING_STYLE, PROJECTED_STYLE } from "./overlay.js";
import { AnnotationSession } from "./state.js";
import type { CanvasViewer } from "./viewer.js";

export class AnnotateFlow {
  prediction: Prediction | null = null;

  constructor(
    private api: ApiClient,
    private viewer: CanvasViewer,
    public session: AnnotationSession,
    private onStatus: (msg: string) => void,
  ) {}

  async enter(frameId: string, opts?: { discardPending?: boolean }): Promise<void> {
    this.prediction = await this.api.getPrediction(frameId);
    this.session.loadFrame(frameId, this.prediction.frame_w, this.prediction.frame_h, opts);
    await this.viewer.loadImage(this.api.imageUrl(frameId));
    this.install();
    this.onStatus(`annotating ${frameId}: click to place LED ${this.session.activeLed}`);
  }

  private detectedPoints(): [number, [number, number]][] {
    if (!this.prediction) return [];
    return Object.entries(this.prediction.glints).map(([led, xy]) => [Number(led), xy]);
  }

  private install(): void {
    this.viewer.setPasses([
      (ctx, vt) => {
        const t = this.session.overlays;
        if (t.detected && this.prediction) drawMarkers(ctx, this.detectedPoints(), vt, DETECTED_STYLE);
        if (t.templateProjected && this.prediction) {
          const proj = Object.entries(this.prediction.projected).map(
            ([led, xy]) => [Number(led), xy] as [number, [number, number]],
          );
          drawMarkers(ctx, proj, vt, PROJECTED_STYLE);
        }
        if (t.labels && this.prediction?.labels) {
          const labels = Object.entries(this.prediction.labels).map(
            ([led, xy]) => [Number(led), xy] as [number, [number, number]],
          );
          drawMarkers(ctx, labels, vt, LABEL_STYLE);
        }
        const pending = [...this.session.pendingEdits].map(
          ([led, p]) => [led, [p.x, p.y]] as [number, [number, number]],
        );
        drawMarkers(ctx, pending, vt, PENDING_STYLE);
      },
    ]);

    this.viewer.onPointerDown = ([x, y], ev) => {
      if (ev.button !== 0) return;
      const detected = this.detectedPoints().map(([, xy]) => xy);
      const placed = this.session.placePoint(x, y, detected);
      this.onStatus(
        `LED placed at (${placed.x.toFixed(2)}, ${placed.y.toFixed(2)})` +
          (placed.snapped ? " [snapped]" : "") +
          `; next: LED ${this.session.activeLed}`,
      );
      this.viewer.draw();
    };
    this.viewer.onPointerMove = null;
    this.viewer.onPointerUp = null;
  }

  handleKey(ev: KeyboardEvent): boolean {
    if (/^[0-9]$/.test(ev.key)) {
      const id = Number(ev.key);
      if (this.session.ledIds.includes(id)) {
        this.session.setActiveLed(id);
        this.onStatus(`active LED ${id}`);
        return true;
      }
      return false;
    }
    if (ev.key === "Tab") {
      this.session.cycleLed(ev.shiftKey ? -1 : 1);
      this.onStatus(`active LED ${this.session.activeLed}`);
      return true;
    }
    if (ev.key === "u") {
      const led = this.session.undo();
      this.onStatus(led === null ? "nothing to undo" : `removed LED ${led}`);
      this.viewer.draw();
      return true;
    }
    if (ev.key === "s") {
      void this.save();
      return true;
    }
    return false;
  }

  async save(): Promise<void> {
    if (!this.session.hasPendingEdits()) {
      this.onStatus("nothing to save");
      return;
    }
    const record = this.session.toRecord("accepted");
    const stored = await this.api.submitAnnotation(record);
    this.session.markSaved();
    this.onStatus(`saved annotation #${stored.record_id} (${Object.keys(stored.glints).length} points)`);
    this.viewer.draw();
  }
}
