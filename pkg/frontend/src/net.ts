/** Service client with latest-wins frame requests.
 *
 * Every issued request gets a sequence number; a response is delivered
 * only if nothing newer has already been displayed, so the shown frame
 * always corresponds to a pose the user actually occupied and stale
 * responses are dropped. Identical in-flight requests (same URL) are
 * coalesced rather than duplicated.
 */

export interface MetaInfo {
  n_layers: number;
  msi_width: number;
  msi_height: number;
  d_inv_max: number;
  background_radius: number;
  pose_bounds_radius: number;
  backend: string;
  max_render_dim: number;
}

export interface FetchResponse {
  ok: boolean;
  status: number;
  blob(): Promise<Blob>;
  json(): Promise<unknown>;
}

export type FetchLike = (url: string) => Promise<FetchResponse>;

export interface FrameResult {
  /** Delivered image, or null when the response was dropped as stale. */
  blob: Blob | null;
  status: number;
  stale: boolean;
}

export function renderUrl(base: string, pose: string, w: number, h: number,
                          mode: string, target: string, fov: number): string {
  const q = new URLSearchParams({
    pose,
    w: String(w),
    h: String(h),
    mode,
    target,
    fov: String(fov),
  });
  return `${base}/render?${q.toString()}`;
}

export async function fetchMeta(base: string, fetchFn: FetchLike): Promise<MetaInfo> {
  const res = await fetchFn(`${base}/meta`);
  if (!res.ok) throw new Error(`meta failed with status ${res.status}`);
  return (await res.json()) as MetaInfo;
}

export class FrameRequester {
  private nextSeq = 0;
  private displayedSeq = 0;
  private inFlight = new Map<string, Promise<FrameResult>>();

  constructor(private fetchFn: FetchLike) {}

  /** True while any request is outstanding. */
  get pending(): boolean {
    return this.inFlight.size > 0;
  }

  request(url: string): Promise<FrameResult> {
    const existing = this.inFlight.get(url);
    if (existing) return existing;

    const seq = ++this.nextSeq;
    const promise = this.fetchFn(url)
      .then(async (res): Promise<FrameResult> => {
        if (seq <= this.displayedSeq) {
          return { blob: null, status: res.status, stale: true };
        }
        if (!res.ok) {
          return { blob: null, status: res.status, stale: false };
        }
        const blob = await res.blob();
        if (seq <= this.displayedSeq) {
          return { blob: null, status: res.status, stale: true };
        }
        this.displayedSeq = seq;
        return { blob, status: res.status, stale: false };
      })
      .finally(() => {
        this.inFlight.delete(url);
      });
    this.inFlight.set(url, promise);
    return promise;
  }
}
