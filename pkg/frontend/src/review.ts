// Review flow: accept the served correspondence, drag a glint to correct it,
// or reject the frame. What-if parameter overrides rerun the frame server-side
// and redraw the overlays in place.

import { ApiClient, type Prediction } from "./api.js";
import { drawMarkers, pickMarker, DETECTED_STYLE, LABEL_STYLE, PROJECTED_STYLE } from "./overlay.js";
import { ReviewSession } from "./state.js";
import type { CanvasViewer } from "./viewer.js";

export class ReviewFlow {
  session: ReviewSession | null = null;
  prediction: Prediction | null = null;
  private dragging: number | null = null;

  constructor(
    private api: ApiClient,
    private viewer: CanvasViewer,
    private onStatus: (msg: string) => void,
  ) {}

  async enter(frameId: string): Promise<void> {
    this.prediction = await this.api.getPrediction(frameId);
    this.session = new ReviewSession(this.prediction);
    await this.viewer.loadImage(this.api.imageUrl(frameId));
    this.install();
    const n = this.session.glints.size;
    this.onStatus(
      this.prediction.status === "ok"
        ? `reviewing ${frameId}: ${n} glints, matcher ${this.prediction.matcher}`
        : `reviewing ${frameId}: ${this.prediction.status} (${this.prediction.reason ?? "no reason"})`,
    );
  }

  private install(): void {
    this.viewer.setPasses([
      (ctx, vt) => {
        if (!this.session || !this.prediction) return;
        const proj = Object.entries(this.prediction.projected).map(
          ([led, xy]) => [Number(led), xy] as [number, [number, number]],
        );
        drawMarkers(ctx, proj, vt, PROJECTED_STYLE);
        if (this.prediction.labels) {
          const labels = Object.entries(this.prediction.labels).map(
            ([led, xy]) => [Number(led), xy] as [number, [number, number]],
          );
          drawMarkers(ctx, labels, vt, LABEL_STYLE);
        }
        drawMarkers(ctx, this.session.glints, vt, DETECTED_STYLE);
      },
    ]);

    this.viewer.onPointerDown = (img, ev) => {
      if (ev.button !== 0 || !this.session) return;
      this.dragging = pickMarker(img, this.session.glints, this.viewer.vt);
    };
    this.viewer.onPointerMove = (img) => {
      if (this.dragging === null || !this.session) return;
      this.session.dragTo(this.dragging, img[0], img[1]);
      this.viewer.draw();
    };
    this.viewer.onPointerUp = () => {
      if (this.dragging !== null && this.session) {
        const [x, y] = this.session.glints.get(this.dragging)!;
        this.onStatus(`LED ${this.dragging} corrected to (${x.toFixed(2)}, ${y.toFixed(2)})`);
      }
      this.dragging = null;
    };
  }

  async submit(verdict?: "rejected"): Promise<void> {
    if (!this.session) return;
    if (verdict === "rejected") this.session.reject();
    const stored = await this.api.submitAnnotation(this.session.toRecord());
    this.onStatus(`stored review #${stored.record_id} (${stored.verdict})`);
  }

  // What-if loop: rerun with overrides (e.g. sla.eps, detect.percentile) and
  // swap in the fresh prediction without leaving the page.
  async whatIf(overrides: Record<string, unknown>): Promise<void> {
    if (!this.session) return;
    const fresh = await this.api.rerun(this.session.frameId, overrides);
    this.prediction = fresh;
    this.session = new ReviewSession(fresh);
    this.viewer.draw();
    this.onStatus(
      fresh.status === "ok"
        ? `what-if: ${fresh.inliers} inliers, median residual ${fresh.median_residual?.toFixed(3)}`
        : `what-if: ${fresh.status} (${fresh.reason ?? ""})`,
    );
  }
}
