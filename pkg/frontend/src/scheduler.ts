/** Debounced, sequence-numbered request scheduler for /layout.
 *
 * Contract: at most one request in flight; edits within the debounce
 * window coalesce into a single request; a response is delivered only if
 * no newer request has been issued since (stale responses are discarded
 * by sequence number).
 */

export type Fetcher<T> = () => Promise<T>;

export interface SchedulerHooks<T> {
  onResult: (result: T, seq: number) => void;
  onError?: (err: unknown, seq: number) => void;
}

export class LayoutScheduler<T> {
  private seq = 0;
  private delivered = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private pending: Fetcher<T> | null = null;

  constructor(
    private hooks: SchedulerHooks<T>,
    private debounceMs = 150,
  ) {}

  /** Schedule a request; supersedes anything not yet sent. */
  request(fetcher: Fetcher<T>): void {
    this.pending = fetcher;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.flush();
    }, this.debounceMs);
  }

  private flush(): void {
    if (this.inFlight || this.pending === null) return;
    const fetcher = this.pending;
    this.pending = null;
    const seq = ++this.seq;
    this.inFlight = true;
    fetcher().then(
      (result) => this.settle(seq, () => {
        if (seq > this.delivered) {
          this.delivered = seq;
          this.hooks.onResult(result, seq);
        }
      }),
      (err) => this.settle(seq, () => {
        if (seq > this.delivered) {
          this.delivered = seq;
          this.hooks.onError?.(err, seq);
        }
      }),
    );
  }

  private settle(seq: number, deliver: () => void): void {
    this.inFlight = false;
    // a newer edit arrived while this request was in flight: its response
    // is stale regardless of arrival order, so send the follow-up first
    const stale = this.pending !== null || this.timer !== null;
    if (!stale) deliver();
    if (this.pending !== null && this.timer === null) this.flush();
  }
}
