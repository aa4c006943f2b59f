// Viewport math: conversions between screen pixels and level-0 slide
// pixels. zoom is screen pixels per level-0 pixel (1 = native resolution).

export interface Point {
  x: number;
  y: number;
}

export interface Viewport {
  centerX: number; // level-0 px
  centerY: number;
  zoom: number;
}

export interface Size {
  width: number;
  height: number;
}

export function screenToSlide(vp: Viewport, view: Size, pt: Point): Point {
  return {
    x: vp.centerX + (pt.x - view.width / 2) / vp.zoom,
    y: vp.centerY + (pt.y - view.height / 2) / vp.zoom,
  };
}

export function slideToScreen(vp: Viewport, view: Size, pt: Point): Point {
  return {
    x: view.width / 2 + (pt.x - vp.centerX) * vp.zoom,
    y: view.height / 2 + (pt.y - vp.centerY) * vp.zoom,
  };
}

export function fitZoom(slide: Size, view: Size): number {
  return Math.min(view.width / slide.width, view.height / slide.height);
}

// Zoom is clamped to native resolution at the top; the bottom leaves some
// slack below fit-to-view so small slides can still be panned around.
export function clampZoom(zoom: number, slide: Size, view: Size): number {
  const lo = fitZoom(slide, view) / 4;
  return Math.min(1, Math.max(lo, zoom));
}

// Pyramid level whose resolution best covers the current zoom: level
// max_level renders 1:1, each level below halves the resolution.
export function levelForZoom(zoom: number, maxLevel: number): number {
  const level = maxLevel + Math.ceil(Math.log2(Math.min(zoom, 1)));
  return Math.max(0, Math.min(maxLevel, level));
}

export function zoomAt(
  vp: Viewport,
  view: Size,
  slide: Size,
  screenPt: Point,
  factor: number,
): Viewport {
  const anchor = screenToSlide(vp, view, screenPt);
  const zoom = clampZoom(vp.zoom * factor, slide, view);
  // Keep the slide point under the cursor fixed on screen.
  return {
    zoom,
    centerX: anchor.x - (screenPt.x - view.width / 2) / zoom,
    centerY: anchor.y - (screenPt.y - view.height / 2) / zoom,
  };
}

export function panBy(vp: Viewport, dxScreen: number, dyScreen: number): Viewport {
  return {
    zoom: vp.zoom,
    centerX: vp.centerX - dxScreen / vp.zoom,
    centerY: vp.centerY - dyScreen / vp.zoom,
  };
}
