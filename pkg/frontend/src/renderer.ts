// Canvas rendering: pyramid tiles for the current viewport, overlay
// polygons and the live selection rectangle. Tile fetches are cached and
// trigger a repaint when they land; stale requests are simply ignored on
// arrival (the cache keeps them for later).

import { classColorCss } from "./colors.js";
import { DziDescriptor, levelScale, tileBox, tileUrl, visibleTiles } from "./dzi.js";
import { levelForZoom, slideToScreen } from "./geometry.js";
import { ViewerState } from "./state.js";

export class TileCache {
  private images = new Map<string, HTMLImageElement>();
  private pending = new Map<string, HTMLImageElement>();

  constructor(private onLoad: () => void) {}

  get(url: string): HTMLImageElement | null {
    const img = this.images.get(url);
    if (img && img.complete && img.naturalWidth > 0) {
      return img;
    }
    if (!this.images.has(url) && !this.pending.has(url)) {
      const fresh = new Image();
      fresh.onload = () => {
        this.pending.delete(url);
        this.images.set(url, fresh);
        this.onLoad();
      };
      fresh.onerror = () => this.pending.delete(url);
      this.pending.set(url, fresh);
      fresh.src = url;
    }
    return null;
  }

  // Cancel in-flight fetches that fell out of the viewport.
  prune(visible: Set<string>): void {
    for (const [url, img] of this.pending) {
      if (!visible.has(url)) {
        img.src = "";
        this.pending.delete(url);
      }
    }
  }
}

export function render(
  ctx: CanvasRenderingContext2D,
  state: ViewerState,
  cache: TileCache,
  base: string,
): void {
  const view = state.viewSize;
  ctx.fillStyle = "#202228";
  ctx.fillRect(0, 0, view.width, view.height);
  const d = state.descriptor;
  if (!d || !state.slideId) {
    return;
  }
  drawTiles(ctx, state, cache, base, d);
  drawOverlays(ctx, state);
  drawSelection(ctx, state);
}

function drawTiles(
  ctx: CanvasRenderingContext2D,
  state: ViewerState,
  cache: TileCache,
  base: string,
  d: DziDescriptor,
): void {
  const vp = state.viewport;
  const view = state.viewSize;
  const level = levelForZoom(vp.zoom, d.maxLevel);
  const scale = levelScale(d, level);
  const topLeft = {
    x: vp.centerX - view.width / 2 / vp.zoom,
    y: vp.centerY - view.height / 2 / vp.zoom,
  };
  const visible = {
    x: topLeft.x,
    y: topLeft.y,
    w: view.width / vp.zoom,
    h: view.height / vp.zoom,
  };
  const tiles = visibleTiles(d, level, visible);
  const wanted = new Set(
    tiles.map(({ col, row }) => tileUrl(base, state.slideId!, d, level, col, row)),
  );
  cache.prune(wanted);
  for (const { col, row } of tiles) {
    const url = tileUrl(base, state.slideId!, d, level, col, row);
    const img = cache.get(url);
    if (!img) {
      continue;
    }
    const box = tileBox(d, level, col, row);
    const origin = slideToScreen(vp, view, {
      x: box.x * scale,
      y: box.y * scale,
    });
    ctx.drawImage(
      img,
      origin.x,
      origin.y,
      box.w * scale * vp.zoom,
      box.h * scale * vp.zoom,
    );
  }
}

function drawOverlays(ctx: CanvasRenderingContext2D, state: ViewerState): void {
  const vp = state.viewport;
  const view = state.viewSize;
  ctx.lineWidth = 2;
  for (const poly of state.visiblePolygons()) {
    if (poly.points.length === 0) {
      continue;
    }
    ctx.strokeStyle = classColorCss(poly.className);
    ctx.beginPath();
    poly.points.forEach(([x, y], i) => {
      const pt = slideToScreen(vp, view, { x, y });
      if (i === 0) {
        ctx.moveTo(pt.x, pt.y);
      } else {
        ctx.lineTo(pt.x, pt.y);
      }
    });
    ctx.closePath();
    ctx.stroke();
  }
}

function drawSelection(ctx: CanvasRenderingContext2D, state: ViewerState): void {
  if (!state.selection) {
    return;
  }
  const vp = state.viewport;
  const view = state.viewSize;
  const a = slideToScreen(vp, view, { x: state.selection.x, y: state.selection.y });
  const w = state.selection.w * vp.zoom;
  const h = state.selection.h * vp.zoom;
  ctx.save();
  ctx.strokeStyle = "#ffffff";
  ctx.setLineDash([6, 4]);
  ctx.lineWidth = 1.5;
  ctx.strokeRect(a.x, a.y, w, h);
  ctx.restore();
}
