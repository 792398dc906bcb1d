/** Session flow state machine, independent of the DOM.
 *
 * Enforces the listening-test rules: a rating can only be submitted after
 * playback has started for every audio reference of the current item, each
 * item is submitted exactly once (retries reuse one idempotency key so a
 * lost acknowledgment never double-records), and completion follows the
 * server cursor so a reload resumes where the listener left off.
 */

import { ApiError, ItemView, ListenApi, RatingValue, SessionView } from "./api.js";

const SESSION_STORAGE_KEY = "listen.session";

function randomKey(): string {
  const bytes = new Uint8Array(12);
  if (typeof crypto !== "undefined" && crypto.getRandomValues) {
    crypto.getRandomValues(bytes);
  } else {
    for (let i = 0; i < bytes.length; i += 1) bytes[i] = Math.floor(Math.random() * 256);
  }
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export interface SessionStorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export class SessionFlow {
  item: ItemView | null = null;
  private playbackStarted = new Set<number>();
  private choice: RatingValue | null = null;
  private submitting = false;
  private pendingKey: string | null = null;

  constructor(
    private readonly api: ListenApi,
    public session: SessionView,
    private readonly retryDelayMs = 300,
    private readonly maxAttempts = 4,
  ) {}

  /** Create a session, or resume the one stored from a previous load. */
  static async start(
    api: ListenApi,
    listenerId: string,
    storage?: SessionStorageLike,
    seed?: number,
  ): Promise<SessionFlow> {
    const stored = storage?.getItem(SESSION_STORAGE_KEY);
    if (stored) {
      try {
        const view = await api.session(stored);
        return new SessionFlow(api, view);
      } catch (error) {
        if (!(error instanceof ApiError && error.status === 404)) throw error;
        storage?.removeItem(SESSION_STORAGE_KEY);
      }
    }
    const view = await api.createSession(listenerId, seed);
    storage?.setItem(SESSION_STORAGE_KEY, view.session_id);
    return new SessionFlow(api, view);
  }

  async loadCurrent(): Promise<ItemView> {
    this.item = await this.api.nextItem(this.session.session_id);
    this.playbackStarted.clear();
    this.choice = null;
    this.pendingKey = null;
    return this.item;
  }

  get complete(): boolean {
    return this.item?.complete ?? false;
  }

  get audioRefs(): string[] {
    return this.item?.audio ?? [];
  }

  audioUrl(ref: string): string {
    return this.api.audioUrl(ref);
  }

  markPlaybackStarted(refIndex: number): void {
    if (refIndex >= 0 && refIndex < this.audioRefs.length) {
      this.playbackStarted.add(refIndex);
    }
  }

  allPlaybackStarted(): boolean {
    const refs = this.audioRefs;
    return refs.length > 0 && refs.every((_, i) => this.playbackStarted.has(i));
  }

  select(value: RatingValue): void {
    if (!this.item || this.item.complete) throw new Error("no active item");
    if (this.item.kind === "mos") {
      if (typeof value !== "number" || !Number.isInteger(value) || value < 1 || value > 5) {
        throw new Error(`MOS choice must be an integer 1..5, got ${String(value)}`);
      }
    } else if (value !== "A" && value !== "B" && value !== "Same") {
      throw new Error(`A/B choice must be A, B or Same, got ${String(value)}`);
    }
    this.choice = value;
  }

  get selected(): RatingValue | null {
    return this.choice;
  }

  blockedReason(): string | null {
    if (!this.item || this.item.complete) return "no active item";
    if (!this.allPlaybackStarted()) return "play every sample first";
    if (this.choice === null) return "pick a rating first";
    if (this.submitting) return "submit already in flight";
    return null;
  }

  canSubmit(): boolean {
    return this.blockedReason() === null;
  }

  /** Submit exactly once, retrying transient failures with the same key. */
  async submitAndAdvance(): Promise<ItemView> {
    const reason = this.blockedReason();
    if (reason !== null) throw new Error(`submit blocked: ${reason}`);
    const item = this.item!;
    this.submitting = true;
    this.pendingKey = this.pendingKey ?? randomKey();
    try {
      let lastError: unknown = null;
      for (let attempt = 0; attempt < this.maxAttempts; attempt += 1) {
        try {
          const ack = await this.api.submitRating(
            this.session.session_id,
            item.item_id!,
            this.choice!,
            this.pendingKey,
          );
          this.session = { ...this.session, cursor: ack.cursor, status: ack.status as SessionView["status"] };
          return await this.loadCurrent();
        } catch (error) {
          if (error instanceof ApiError) throw error; // server verdict: do not blind-retry
          lastError = error; // network failure: ack may be lost, retry same key
          await new Promise((resolve) => setTimeout(resolve, this.retryDelayMs));
        }
      }
      throw lastError instanceof Error
        ? lastError
        : new Error("submit failed after retries");
    } finally {
      this.submitting = false;
    }
  }
}
