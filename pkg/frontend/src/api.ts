/** Typed client for the listening-test service API. */

export interface SessionView {
  session_id: string;
  listener_id: string;
  cursor: number;
  total: number;
  status: "open" | "complete";
}

export interface ItemView {
  complete: boolean;
  total?: number;
  position?: number;
  item_id?: number;
  kind?: "mos" | "ab";
  text?: string;
  scenario?: string;
  overview?: string;
  audio?: string[];
}

export interface SubmitAck {
  recorded: boolean;
  session_id: string;
  cursor: number;
  total: number;
  status: string;
}

export type RatingValue = number | "A" | "B" | "Same";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ListenApi {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async createSession(listenerId: string, seed?: number): Promise<SessionView> {
    return asJson(
      await fetch(this.url("/api/sessions"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ listener_id: listenerId, seed: seed ?? null }),
      }),
    );
  }

  async session(sessionId: string): Promise<SessionView> {
    return asJson(await fetch(this.url(`/api/sessions/${sessionId}`)));
  }

  async nextItem(sessionId: string): Promise<ItemView> {
    return asJson(await fetch(this.url(`/api/sessions/${sessionId}/next`)));
  }

  async submitRating(
    sessionId: string,
    itemId: number,
    value: RatingValue,
    idempotencyKey: string,
  ): Promise<SubmitAck> {
    return asJson(
      await fetch(this.url(`/api/sessions/${sessionId}/ratings`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({
          item_id: itemId,
          value,
          idempotency_key: idempotencyKey,
        }),
      }),
    );
  }

  audioUrl(ref: string): string {
    return this.url(`/audio/${ref}`);
  }
}
