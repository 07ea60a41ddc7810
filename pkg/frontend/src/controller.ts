// Session state machine between the polling loop, the keyboard, and the
// service. Holds the query queue with optimistic advance: a submitted card
// leaves the queue immediately, sits in the outbox until the server accepts
// the batch, and comes back with an inline error if the batch bounces.
//
// Values only enter the outbox through select()+submit(), so every posted
// annotation traces back to a user action on a listed value.

import {
  AnnotationItem,
  ApiClient,
  ApiError,
  IterationDoc,
  PendingQuery,
  SessionSummary,
} from "./api.js";

export const BATCH_SIZE = 10;

export interface CardState {
  query: PendingQuery;
  selected: number | null; // index into query.values; submit needs one
  error: string | null; // set when a batch holding this pair was rejected
}

export type Connection = { ok: true } | { ok: false; message: string };

const key = (q: { sample: number; concept: number }) => `${q.sample}:${q.concept}`;

export class SessionController {
  summary: SessionSummary | null = null;
  queue: CardState[] = [];
  outbox: AnnotationItem[] = [];
  history: IterationDoc[] = [];
  connection: Connection = { ok: true };
  private refreshing = false;
  private flushing = false;

  constructor(
    private api: ApiClient,
    readonly sessionId: string,
    private onChange: () => void = () => {},
  ) {}

  get current(): CardState | null {
    return this.queue[0] ?? null;
  }

  /** Pull summary, queries and metric history; safe to call on a timer. */
  async refresh(): Promise<void> {
    if (this.refreshing) return;
    this.refreshing = true;
    try {
      const summary = await this.api.getSession(this.sessionId);
      const queries =
        summary.phase === "awaiting_annotations" ? await this.api.getQueries(this.sessionId) : [];
      const metrics = await this.api.getMetrics(this.sessionId);
      this.summary = summary;
      this.history = metrics.history;
      this.reconcile(queries);
      this.connection = { ok: true };
    } catch (e) {
      // keep the last good state; the view shows a banner and retries
      this.connection = { ok: false, message: e instanceof Error ? e.message : String(e) };
    } finally {
      this.refreshing = false;
      this.onChange();
    }
  }

  /** Rebuild the queue from the server's unanswered list, keeping local
   *  selections and inline errors, and hiding pairs already in the outbox. */
  private reconcile(serverQueries: PendingQuery[]): void {
    const held = new Map(this.queue.map((c) => [key(c.query), c]));
    const posted = new Set(this.outbox.map(key));
    this.queue = serverQueries
      .filter((q) => !posted.has(key(q)))
      .map((q) => {
        const prev = held.get(key(q));
        return prev ? { ...prev, query: q } : { query: q, selected: null, error: null };
      });
  }

  /** Select a candidate value on the current card. Indices outside the
   *  card's value list are ignored, so unlisted values cannot be chosen. */
  select(valueIndex: number): void {
    const card = this.current;
    if (!card) return;
    if (!Number.isInteger(valueIndex) || valueIndex < 0 || valueIndex >= card.query.values.length)
      return;
    card.selected = valueIndex;
    card.error = null;
    this.onChange();
  }

  /** Commit the current card's selection: optimistic advance plus batch
   *  flush every BATCH_SIZE answers or when the queue runs dry. */
  async submit(): Promise<void> {
    const card = this.current;
    if (!card || card.selected === null) return; // submit disabled until selected
    this.queue.shift();
    this.outbox.push({
      sample: card.query.sample,
      concept: card.query.concept,
      value: card.selected,
    });
    this.onChange();
    if (this.outbox.length >= BATCH_SIZE || this.queue.length === 0) {
      await this.flush();
    }
  }

  /** POST the outbox as one batch. The server applies batches atomically,
   *  so a 409/422 means nothing was recorded: every outbox card returns to
   *  the front of the queue carrying the rejection message. */
  async flush(): Promise<void> {
    if (this.flushing || this.outbox.length === 0) return;
    this.flushing = true;
    const batch = this.outbox;
    this.outbox = []; // submits during the POST start a fresh batch
    let accepted = false;
    try {
      await this.api.postAnnotations(this.sessionId, batch);
      accepted = true;
      this.connection = { ok: true };
    } catch (e) {
      if (e instanceof ApiError && (e.status === 409 || e.status === 422)) {
        this.rollback(batch, e.detail);
      } else {
        // transport trouble: put the batch back, the next tick retries it
        this.outbox = [...batch, ...this.outbox];
        this.connection = { ok: false, message: e instanceof Error ? e.message : String(e) };
      }
    } finally {
      this.flushing = false;
      this.onChange();
    }
    // answers queued while the POST was in flight; only chain on success,
    // failures wait for the 2 s tick so retries cannot spin
    if (accepted && this.outbox.length > 0 && (this.outbox.length >= BATCH_SIZE || this.queue.length === 0)) {
      await this.flush();
    }
  }

  private rollback(batch: AnnotationItem[], detail: string): void {
    const restored: CardState[] = batch.map((item) => ({
      query: {
        sample: item.sample,
        concept: item.concept,
        concept_name: `concept ${item.concept}`,
        uncertainty: null,
        image_ref: null,
        values: [],
      },
      selected: null,
      error: detail,
    }));
    this.queue = [...restored, ...this.queue];
    // authoritative pair data (names, values, uncertainties) comes back
    // through reconcile on the next refresh; kick one off right away
    void this.refresh();
  }

  /** Timer entry point: retry stuck batches, then re-poll the server. */
  async tick(): Promise<void> {
    if (this.outbox.length > 0 && !this.flushing) {
      await this.flush();
    }
    await this.refresh();
  }
}

// -- small view-model helpers (pure; the DOM layer stays dumb) --------------

export function uncertaintyPercent(u: number | null): number | null {
  if (u === null || !Number.isFinite(u)) return null;
  return Math.round(Math.min(1, Math.max(0, u)) * 100);
}

/** "spent / planned" annotation budget; the planned total becomes known
 *  once the first snapshot reports the per-iteration acquisition size. */
export function budgetLabel(summary: SessionSummary, history: IterationDoc[]): string {
  const spent = summary.cumulative_annotations;
  const first = history[0];
  if (!first) return `${spent}`;
  const step = first.acquired_pairs.length;
  if (step === 0) return `${spent}`; // 0-iteration run: already complete
  const total = first.cumulative_annotations + summary.iterations * step;
  return `${spent} / ${total}`;
}

/** Completed snapshots out of the planned iterations+1 (0-iteration runs
 *  still produce one). The dashboard has no history array, so fall back to
 *  the summary fields: latest_metrics stays null until a snapshot lands. */
export function iterationLabel(summary: SessionSummary, history: IterationDoc[]): string {
  const done =
    history.length > 0 ? history.length : summary.latest_metrics === null ? 0 : summary.iteration + 1;
  return `${done} of ${summary.iterations + 1}`;
}
