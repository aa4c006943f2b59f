// Viewer state: current slide, viewport, rectangle selection, chosen
// model and annotation overlay layers with per-class visibility.
// Everything is level-0 pixel based so overlays stay registered to the
// tissue across pan and zoom.

import {
  AnnotationResultJson,
  ServiceClient,
  SlideInfo,
} from "./api.js";
import { DziDescriptor } from "./dzi.js";
import {
  Point,
  Size,
  Viewport,
  clampZoom,
  fitZoom,
  panBy,
  screenToSlide,
  zoomAt,
} from "./geometry.js";

export const MAX_REGION_PIXELS = 4096 * 4096;

export interface SelectionRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface OverlayPolygon {
  points: Array<[number, number]>; // level-0 px
  className: string;
}

export interface OverlayLayer {
  id: number;
  slideId: string;
  model: string;
  polygons: OverlayPolygon[];
  counts: Record<string, number>;
}

export class ViewerState {
  slideId: string | null = null;
  descriptor: DziDescriptor | null = null;
  viewport: Viewport = { centerX: 0, centerY: 0, zoom: 1 };
  viewSize: Size = { width: 800, height: 600 };
  model = "helm";
  selection: SelectionRect | null = null;
  layers: OverlayLayer[] = [];
  classVisibility: Record<string, boolean> = {};
  banner: string | null = null;

  private dragStart: Point | null = null;
  private nextLayerId = 1;

  constructor(private client: ServiceClient) {}

  get slideSize(): Size {
    if (!this.descriptor) {
      return { width: 1, height: 1 };
    }
    return { width: this.descriptor.width, height: this.descriptor.height };
  }

  async loadSlide(info: SlideInfo): Promise<void> {
    try {
      this.descriptor = await this.client.fetchDescriptor(info.slide_id);
    } catch (err) {
      this.banner = `failed to load ${info.slide_id}: ${(err as Error).message}`;
      return;
    }
    this.slideId = info.slide_id;
    this.banner = null;
    this.selection = null;
    this.layers = []; // overlays reference the slide they were computed on
    this.viewport = {
      centerX: this.descriptor.width / 2,
      centerY: this.descriptor.height / 2,
      zoom: clampZoom(
        fitZoom(this.slideSize, this.viewSize),
        this.slideSize,
        this.viewSize,
      ),
    };
  }

  pan(dxScreen: number, dyScreen: number): void {
    this.viewport = panBy(this.viewport, dxScreen, dyScreen);
  }

  zoomAtPoint(screenPt: Point, factor: number): void {
    this.viewport = zoomAt(
      this.viewport,
      this.viewSize,
      this.slideSize,
      screenPt,
      factor,
    );
  }

  // -- rectangle selection -------------------------------------------------

  beginSelection(screenPt: Point): void {
    this.dragStart = screenPt;
    this.selection = null;
  }

  dragSelection(screenPt: Point): void {
    if (!this.dragStart || !this.descriptor) {
      return;
    }
    const a = screenToSlide(this.viewport, this.viewSize, this.dragStart);
    const b = screenToSlide(this.viewport, this.viewSize, screenPt);
    const x0 = Math.max(0, Math.min(a.x, b.x));
    const y0 = Math.max(0, Math.min(a.y, b.y));
    const x1 = Math.min(this.descriptor.width, Math.max(a.x, b.x));
    const y1 = Math.min(this.descriptor.height, Math.max(a.y, b.y));
    const rect = {
      x: Math.round(x0),
      y: Math.round(y0),
      w: Math.round(x1 - x0),
      h: Math.round(y1 - y0),
    };
    this.selection = rect.w >= 1 && rect.h >= 1 ? rect : null;
  }

  endSelection(screenPt: Point): SelectionRect | null {
    this.dragSelection(screenPt);
    this.dragStart = null;
    return this.selection;
  }

  selectionExceedsCap(): boolean {
    return (
      this.selection !== null &&
      this.selection.w * this.selection.h > MAX_REGION_PIXELS
    );
  }

  // -- annotation ------------------------------------------------------------

  async requestAnnotation(): Promise<OverlayLayer | null> {
    if (!this.slideId || !this.descriptor || !this.selection) {
      return null;
    }
    let result: AnnotationResultJson;
    try {
      result = await this.client.annotate(
        this.slideId,
        { ...this.selection, level: this.descriptor.maxLevel },
        this.model,
      );
    } catch (err) {
      this.banner = `annotation failed: ${(err as Error).message}`;
      return null;
    }
    this.banner = null;
    const layer: OverlayLayer = {
      id: this.nextLayerId++,
      slideId: this.slideId,
      model: result.model,
      polygons: result.detections.map((det) => ({
        points: det.contour,
        className: det.class,
      })),
      counts: result.counts,
    };
    this.layers.push(layer);
    for (const cls of Object.keys(result.counts)) {
      if (!(cls in this.classVisibility)) {
        this.classVisibility[cls] = true;
      }
    }
    return layer;
  }

  toggleClass(className: string): void {
    this.classVisibility[className] = !(this.classVisibility[className] ?? true);
  }

  clearOverlays(): void {
    this.layers = [];
  }

  isClassVisible(className: string): boolean {
    return this.classVisibility[className] ?? true;
  }

  visiblePolygons(): OverlayPolygon[] {
    const out: OverlayPolygon[] = [];
    for (const layer of this.layers) {
      if (layer.slideId !== this.slideId) {
        continue;
      }
      for (const poly of layer.polygons) {
        if (this.isClassVisible(poly.className)) {
          out.push(poly);
        }
      }
    }
    return out;
  }

  // Per-class totals over visible layers; the counts panel reads this.
  visibleCounts(): Record<string, number> {
    const counts: Record<string, number> = {};
    for (const poly of this.visiblePolygons()) {
      counts[poly.className] = (counts[poly.className] ?? 0) + 1;
    }
    return counts;
  }
}
