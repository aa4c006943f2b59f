// Client for the annotation-service HTTP API. The viewer talks to exactly
// four surfaces: GET /slides, GET <slide>.dzi (+ tiles), GET /models and
// POST /annotate.

import { DziDescriptor, parseDzi } from "./dzi.js";

export interface SlideInfo {
  slide_id: string;
  width: number;
  height: number;
}

export interface ModelInfo {
  name: string;
  kind: string;
  classes: string[];
}

export interface RegionRequest {
  x: number;
  y: number;
  w: number;
  h: number;
  level: number;
}

export interface DetectionJson {
  contour: Array<[number, number]>;
  centroid: [number, number];
  area: number;
  circularity: number;
  class: string;
}

export interface AnnotationResultJson {
  detections: DetectionJson[];
  counts: Record<string, number>;
  region: RegionRequest;
  model: string;
  elapsed_ms: number;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class ServiceClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(`${this.base}${path}`);
    if (!resp.ok) {
      throw new ServiceError(resp.status, await describeFailure(resp));
    }
    return (await resp.json()) as T;
  }

  listSlides(): Promise<SlideInfo[]> {
    return this.getJson<SlideInfo[]>("/slides");
  }

  listModels(): Promise<ModelInfo[]> {
    return this.getJson<ModelInfo[]>("/models");
  }

  async fetchDescriptor(slideId: string): Promise<DziDescriptor> {
    const resp = await this.fetchFn(`${this.base}/slides/${slideId}.dzi`);
    if (!resp.ok) {
      throw new ServiceError(resp.status, await describeFailure(resp));
    }
    return parseDzi(await resp.text());
  }

  async annotate(
    slideId: string,
    region: RegionRequest,
    model: string,
  ): Promise<AnnotationResultJson> {
    const resp = await this.fetchFn(`${this.base}/annotate`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ slide_id: slideId, region, model }),
    });
    if (!resp.ok) {
      throw new ServiceError(resp.status, await describeFailure(resp));
    }
    return (await resp.json()) as AnnotationResultJson;
  }
}

async function describeFailure(resp: Response): Promise<string> {
  try {
    const payload = await resp.json();
    if (payload && typeof payload.error === "string") {
      return payload.error;
    }
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${resp.status}`;
}
