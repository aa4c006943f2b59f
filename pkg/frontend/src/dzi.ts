// DeepZoom descriptor parsing and tile arithmetic, environment-free so the
// same code runs in the browser and under node tests.

export interface DziDescriptor {
  width: number;
  height: number;
  tileSize: number;
  overlap: number;
  format: string;
  maxLevel: number;
}

function attr(xml: string, name: string): string {
  const match = xml.match(new RegExp(`${name}="([^"]+)"`));
  if (!match) {
    throw new Error(`descriptor is missing ${name}`);
  }
  return match[1];
}

export function parseDzi(xml: string): DziDescriptor {
  const width = parseInt(attr(xml, "Width"), 10);
  const height = parseInt(attr(xml, "Height"), 10);
  return {
    width,
    height,
    tileSize: parseInt(attr(xml, "TileSize"), 10),
    overlap: parseInt(attr(xml, "Overlap"), 10),
    format: attr(xml, "Format"),
    maxLevel: Math.max(0, Math.ceil(Math.log2(Math.max(width, height)))),
  };
}

export function levelScale(d: DziDescriptor, level: number): number {
  return 2 ** (d.maxLevel - level);
}

export function levelDimensions(d: DziDescriptor, level: number): [number, number] {
  const scale = levelScale(d, level);
  return [Math.ceil(d.width / scale), Math.ceil(d.height / scale)];
}

export function tileGrid(d: DziDescriptor, level: number): [number, number] {
  const [w, h] = levelDimensions(d, level);
  return [Math.ceil(w / d.tileSize), Math.ceil(h / d.tileSize)];
}

// Pixel box of a tile file at its level, overlap margins included.
export function tileBox(
  d: DziDescriptor,
  level: number,
  col: number,
  row: number,
): { x: number; y: number; w: number; h: number } {
  const [lw, lh] = levelDimensions(d, level);
  const x0 = col * d.tileSize - (col > 0 ? d.overlap : 0);
  const y0 = row * d.tileSize - (row > 0 ? d.overlap : 0);
  const x1 = Math.min(lw, (col + 1) * d.tileSize + d.overlap);
  const y1 = Math.min(lh, (row + 1) * d.tileSize + d.overlap);
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}

export function tileUrl(
  base: string,
  slideId: string,
  d: DziDescriptor,
  level: number,
  col: number,
  row: number,
): string {
  return `${base}/slides/${slideId}_files/${level}/${col}_${row}.${d.format}`;
}

// Tiles intersecting a level-0 rectangle, for progressive rendering.
export function visibleTiles(
  d: DziDescriptor,
  level: number,
  rect: { x: number; y: number; w: number; h: number },
): Array<{ col: number; row: number }> {
  const scale = levelScale(d, level);
  const [cols, rows] = tileGrid(d, level);
  const c0 = Math.max(0, Math.floor(rect.x / scale / d.tileSize));
  const r0 = Math.max(0, Math.floor(rect.y / scale / d.tileSize));
  const c1 = Math.min(cols - 1, Math.floor((rect.x + rect.w) / scale / d.tileSize));
  const r1 = Math.min(rows - 1, Math.floor((rect.y + rect.h) / scale / d.tileSize));
  const tiles = [];
  for (let row = r0; row <= r1; row++) {
    for (let col = c0; col <= c1; col++) {
      tiles.push({ col, row });
    }
  }
  return tiles;
}
