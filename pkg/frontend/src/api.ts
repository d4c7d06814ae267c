// Typed client for the explanation service. Field names mirror the wire
// format exactly; this module is the only place that talks to the network.

export interface ImageInfo {
  id: string;
  h: number;
  w: number;
  c: number;
}

export interface MapPayload {
  h: number;
  w: number;
  values: number[]; // row-major, signed
  min: number;
  max: number;
}

export interface ExplainResponse {
  S: number;
  D: number;
  overall_query: MapPayload;
  overall_ref: MapPayload;
}

export interface PointResponse {
  map: MapPayload;
  clicked_feature_cell: [number, number];
}

export interface RetrieveResult {
  id: string;
  similarity: number;
  image: string;
}

export type Variant =
  | "overall_decomp"
  | "overall_decomp_bias"
  | "gradcam"
  | "gradcam_nonorm";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function post<T>(fetchFn: FetchLike, url: string, body: unknown): Promise<T> {
  const resp = await fetchFn(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    let detail = `${resp.status}`;
    try {
      const doc = await resp.json();
      if (doc && typeof doc.error === "string") detail = doc.error;
    } catch {
      // non-JSON error body; keep the status code
    }
    throw new Error(`${url} failed: ${detail}`);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  imageUrl(id: string): string {
    return `${this.base}/api/image/${id}`;
  }

  async listImages(): Promise<ImageInfo[]> {
    const resp = await this.fetchFn(`${this.base}/api/images`);
    if (!resp.ok) throw new Error(`listImages failed: ${resp.status}`);
    const doc = await resp.json();
    return doc.images as ImageInfo[];
  }

  explain(
    queryId: string,
    refId: string,
    variant: Variant,
    withBias: boolean,
  ): Promise<ExplainResponse> {
    return post(this.fetchFn, `${this.base}/api/explain`, {
      query_id: queryId,
      ref_id: refId,
      variant,
      with_bias: withBias,
    });
  }

  point(
    queryId: string,
    refId: string,
    x: number,
    y: number,
    side: "query" | "ref",
  ): Promise<PointResponse> {
    return post(this.fetchFn, `${this.base}/api/point`, {
      query_id: queryId,
      ref_id: refId,
      x,
      y,
      side,
    });
  }

  retrieve(
    queryId: string,
    roi: Array<[number, number]> | null,
    k: number,
  ): Promise<RetrieveResult[]> {
    return post<{ results: RetrieveResult[] }>(this.fetchFn, `${this.base}/api/retrieve`, {
      query_id: queryId,
      roi,
      k,
    }).then((doc) => doc.results);
  }
}
