// Canvas viewer: frame bitmap, zoom/pan, device-pixel-ratio-aware redraws.
// Flows subscribe to pointer events in image coordinates and contribute
// overlay draw passes; the viewer owns no annotation state.

import type { PointPair } from "./api.js";
import { clientToImage, type ViewTransform } from "./overlay.js";

export type DrawPass = (ctx: CanvasRenderingContext2D, vt: ViewTransform) => void;
export type PointerHandler = (imagePoint: PointPair, ev: PointerEvent) => void;

export class CanvasViewer {
  readonly canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private image: ImageBitmap | null = null;
  vt: ViewTransform = { zoom: 1, panX: 0, panY: 0, dpr: window.devicePixelRatio || 1 };
  private passes: DrawPass[] = [];
  onPointerDown: PointerHandler | null = null;
  onPointerMove: PointerHandler | null = null;
  onPointerUp: PointerHandler | null = null;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    this.resize();
    window.addEventListener("resize", () => {
      this.resize();
      this.draw();
    });

    canvas.addEventListener("pointerdown", (ev) => {
      canvas.setPointerCapture(ev.pointerId);
      this.onPointerDown?.(this.toImage(ev), ev);
    });
    canvas.addEventListener("pointermove", (ev) => this.onPointerMove?.(this.toImage(ev), ev));
    canvas.addEventListener("pointerup", (ev) => this.onPointerUp?.(this.toImage(ev), ev));
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const factor = ev.deltaY < 0 ? 1.25 : 0.8;
      this.zoomAround(ev.clientX, ev.clientY, factor);
    });
  }

  private toImage(ev: PointerEvent): PointPair {
    const rect = this.canvas.getBoundingClientRect();
    return clientToImage(ev.clientX, ev.clientY, rect, this.vt);
  }

  private resize(): void {
    const rect = this.canvas.getBoundingClientRect();
    this.vt.dpr = window.devicePixelRatio || 1;
    this.canvas.width = Math.max(1, Math.round(rect.width * this.vt.dpr));
    this.canvas.height = Math.max(1, Math.round(rect.height * this.vt.dpr));
  }

  async loadImage(url: string): Promise<void> {
    const res = await fetch(url);
    if (!res.ok) throw new Error(`image fetch failed: ${res.status}`);
    this.image = await createImageBitmap(await res.blob());
    this.fit();
    this.draw();
  }

  fit(): void {
    if (!this.image) return;
    const rect = this.canvas.getBoundingClientRect();
    const zx = rect.width / this.image.width;
    const zy = rect.height / this.image.height;
    // Prefer the largest integer zoom that fits; fall back to fractional fit.
    const z = Math.min(zx, zy);
    this.vt.zoom = z >= 1 ? Math.floor(z) : z;
    this.vt.panX = (rect.width - this.image.width * this.vt.zoom) / 2;
    this.vt.panY = (rect.height - this.image.height * this.vt.zoom) / 2;
  }

  zoomAround(clientX: number, clientY: number, factor: number): void {
    const rect = this.canvas.getBoundingClientRect();
    const cssX = clientX - rect.left;
    const cssY = clientY - rect.top;
    const imgX = (cssX - this.vt.panX) / this.vt.zoom;
    const imgY = (cssY - this.vt.panY) / this.vt.zoom;
    this.vt.zoom = Math.min(Math.max(this.vt.zoom * factor, 0.1), 64);
    this.vt.panX = cssX - imgX * this.vt.zoom;
    this.vt.panY = cssY - imgY * this.vt.zoom;
    this.draw();
  }

  setPasses(passes: DrawPass[]): void {
    this.passes = passes;
  }

  draw(): void {
    const { ctx, canvas } = this;
    ctx.save();
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.fillStyle = "#111418";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    if (this.image) {
      ctx.imageSmoothingEnabled = this.vt.zoom < 1;
      ctx.drawImage(
        this.image,
        this.vt.panX * this.vt.dpr,
        this.vt.panY * this.vt.dpr,
        this.image.width * this.vt.zoom * this.vt.dpr,
        this.image.height * this.vt.zoom * this.vt.dpr,
      );
    }
    for (const pass of this.passes) pass(ctx, this.vt);
    ctx.restore();
  }
}
