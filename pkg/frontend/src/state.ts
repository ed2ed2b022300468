/** Viewer state machine.
 *
 * Invariants it enforces:
 *  - the bandwidth is always clamped to the server's advertised range;
 *  - skeleton requests carry a sequence number, responses arriving out of
 *    order are discarded, so the displayed skeleton always corresponds to
 *    the most recent completed request;
 *  - at most one skeleton request is in flight per model; slider changes
 *    during flight supersede each other and fire once the response lands;
 *  - slider changes are debounced before hitting the network.
 */

import type { MeshResponse, SkeletonResponse, SkinResponse, Transport } from "./api.js";

export interface Scheduler {
  schedule(fn: () => void, ms: number): number;
  cancel(id: number): void;
}

export const realScheduler: Scheduler = {
  schedule: (fn, ms) => setTimeout(fn, ms) as unknown as number,
  cancel: (id) => clearTimeout(id),
};

export interface StateEvents {
  onSkeleton?: (s: SkeletonResponse, seq: number) => void;
  onMesh?: (m: MeshResponse) => void;
  onSkin?: (s: SkinResponse) => void;
  onError?: (message: string) => void;
  onBusy?: (busy: boolean) => void;
}

export const DEBOUNCE_MS = 150;

export class ViewerState {
  modelId: string | null = null;
  bandwidth = 0.057;
  range = { min: 0.01, max: 0.1 };
  skeleton: SkeletonResponse | null = null;
  skin: SkinResponse | null = null;
  mesh: MeshResponse | null = null;
  selectedBone: number | null = null;

  private seq = 0;
  private displayedSeq = -1;
  private inFlight = false;
  private queued: number | null = null;
  private debounceId: number | null = null;

  constructor(
    private transport: Transport,
    private events: StateEvents = {},
    private scheduler: Scheduler = realScheduler,
    private debounceMs: number = DEBOUNCE_MS,
  ) {}

  clamp(value: number): number {
    return Math.min(this.range.max, Math.max(this.range.min, value));
  }

  async loadRange(): Promise<void> {
    const r = await this.transport.bandwidthRange();
    this.range = { min: r.min, max: r.max };
    this.bandwidth = this.clamp(r.default);
  }

  async upload(objBytes: Blob | ArrayBuffer | string): Promise<string> {
    this.events.onBusy?.(true);
    try {
      const { model_id } = await this.transport.uploadModel(objBytes);
      // a fresh model replaces the previous view entirely
      this.modelId = model_id;
      this.skeleton = null;
      this.skin = null;
      this.selectedBone = null;
      this.displayedSeq = -1;
      this.mesh = await this.transport.fetchMesh(model_id);
      this.events.onMesh?.(this.mesh);
      return model_id;
    } catch (e) {
      this.events.onError?.(errorMessage(e));
      throw e;
    } finally {
      this.events.onBusy?.(false);
    }
  }

  /** Debounced slider handler. */
  setBandwidth(value: number): void {
    this.bandwidth = this.clamp(value);
    if (this.debounceId !== null) {
      this.scheduler.cancel(this.debounceId);
    }
    this.debounceId = this.scheduler.schedule(() => {
      this.debounceId = null;
      this.requestSkeleton();
    }, this.debounceMs);
  }

  /** Issue (or queue) a skeleton request for the current bandwidth. */
  requestSkeleton(): void {
    if (this.modelId === null) {
      return;
    }
    if (this.inFlight) {
      this.queued = this.bandwidth;
      return;
    }
    this.fire(this.bandwidth);
  }

  private fire(bandwidth: number): void {
    const mySeq = ++this.seq;
    this.inFlight = true;
    this.events.onBusy?.(true);
    this.transport
      .requestSkeleton(this.modelId as string, bandwidth)
      .then((resp) => {
        if (mySeq > this.displayedSeq) {
          this.displayedSeq = mySeq;
          this.skeleton = resp;
          this.skin = null; // the old weights belong to the old skeleton
          this.events.onSkeleton?.(resp, mySeq);
        }
      })
      .catch((e) => {
        if (e instanceof Object && (e as { status?: number }).status === 422) {
          this.bandwidth = this.clamp(bandwidth);
        }
        this.events.onError?.(errorMessage(e));
      })
      .finally(() => {
        this.inFlight = false;
        this.events.onBusy?.(false);
        if (this.queued !== null) {
          const next = this.queued;
          this.queued = null;
          if (next !== bandwidth || this.skeleton === null) {
            this.fire(next);
          }
        }
      });
  }

  async loadSkin(): Promise<SkinResponse | null> {
    if (this.modelId === null || this.skeleton === null) {
      return null;
    }
    this.events.onBusy?.(true);
    try {
      this.skin = await this.transport.fetchSkin(this.modelId);
      this.events.onSkin?.(this.skin);
      return this.skin;
    } catch (e) {
      this.events.onError?.(errorMessage(e));
      return null;
    } finally {
      this.events.onBusy?.(false);
    }
  }

  /** Sum of the displayed per-bone weights for one vertex (conservation readout). */
  vertexWeightSum(vertex: number): number | null {
    if (this.skin === null || vertex < 0 || vertex >= this.skin.weights.length) {
      return null;
    }
    return this.skin.weights[vertex].reduce((acc, w) => acc + w, 0);
  }
}

function errorMessage(e: unknown): string {
  if (e instanceof Error) {
    return e.message;
  }
  return String(e);
}
