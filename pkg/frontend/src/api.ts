/** Typed client for the rigging service endpoints. */

export interface JointPos {
  x: number;
  y: number;
  z: number;
}

export interface SkeletonResponse {
  joints: JointPos[];
  bones: [number, number][];
  root: number;
  joint_count: number;
  bandwidth: number;
}

export interface SkinResponse {
  bones: [number, number][];
  weights: number[][];
}

export interface MeshResponse {
  vertices: number[][];
  triangles: number[][];
}

export interface BandwidthRange {
  min: number;
  max: number;
  default: number;
}

/** Transport abstraction so the state machine is testable without a server. */
export interface Transport {
  uploadModel(objBytes: Blob | ArrayBuffer | string): Promise<{ model_id: string }>;
  requestSkeleton(modelId: string, bandwidth: number): Promise<SkeletonResponse>;
  fetchSkin(modelId: string): Promise<SkinResponse>;
  fetchMesh(modelId: string): Promise<MeshResponse>;
  bandwidthRange(): Promise<BandwidthRange>;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({ error: resp.statusText }));
  if (!resp.ok) {
    throw new ApiError(resp.status, (body as { error?: string }).error ?? resp.statusText);
  }
  return body as T;
}

export class HttpTransport implements Transport {
  constructor(private base: string = "") {}

  uploadModel(objBytes: Blob | ArrayBuffer | string) {
    return fetch(`${this.base}/model`, { method: "POST", body: objBytes }).then(
      (r) => parse<{ model_id: string }>(r),
    );
  }

  requestSkeleton(modelId: string, bandwidth: number) {
    return fetch(`${this.base}/skeleton`, {
      method: "POST",
      body: JSON.stringify({ model_id: modelId, bandwidth }),
      headers: { "Content-Type": "application/json" },
    }).then((r) => parse<SkeletonResponse>(r));
  }

  fetchSkin(modelId: string) {
    return fetch(`${this.base}/skin/${modelId}`).then((r) => parse<SkinResponse>(r));
  }

  fetchMesh(modelId: string) {
    return fetch(`${this.base}/mesh/${modelId}`).then((r) => parse<MeshResponse>(r));
  }

  bandwidthRange() {
    return fetch(`${this.base}/bandwidth-range`).then((r) => parse<BandwidthRange>(r));
  }
}
