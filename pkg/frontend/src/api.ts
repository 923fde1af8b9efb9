/** Typed client for the engine's HTTP/JSON API.
 *
 * The service contract: GET /api/pages, GET /api/pages/{id}/image,
 * GET /api/search?q=&k=, POST /api/search/qbe, GET /api/health. Boxes are
 * integer [x, y, w, h] in original page pixels.
 */

import type { Hit, PageInfo, QbeBody } from "./model.js";

export interface Health {
  status: string;
  index_version: number;
  pages: number;
  proposals: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function checked(res: Response): Promise<any> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const doc = await res.json();
      if (doc && typeof doc.detail === "string") detail = doc.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return res.json();
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  async pages(signal?: AbortSignal): Promise<PageInfo[]> {
    return checked(await fetch(`${this.base}/api/pages`, { signal }));
  }

  async search(q: string, k: number, signal?: AbortSignal): Promise<Hit[]> {
    const url = `${this.base}/api/search?q=${encodeURIComponent(q)}&k=${k}`;
    const doc = await checked(await fetch(url, { signal }));
    return doc.hits;
  }

  async qbe(body: QbeBody, signal?: AbortSignal): Promise<Hit[]> {
    const doc = await checked(
      await fetch(`${this.base}/api/search/qbe`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
        signal,
      }),
    );
    return doc.hits;
  }

  async health(signal?: AbortSignal): Promise<Health> {
    return checked(await fetch(`${this.base}/api/health`, { signal }));
  }

  pageImageUrl(page_id: string): string {
    return `${this.base}/api/pages/${encodeURIComponent(page_id)}/image`;
  }
}

/** Serializes searches: starting a new request aborts the one in flight and
 * hands out a monotonically increasing token, so the state layer can drop
 * stale responses even if they slip past the abort. */
export class SearchGate {
  private controller: AbortController | null = null;
  private seq = 0;

  next(): { token: number; signal: AbortSignal } {
    this.controller?.abort();
    this.controller = new AbortController();
    this.seq += 1;
    return { token: this.seq, signal: this.controller.signal };
  }

  get lastToken(): number {
    return this.seq;
  }
}
