/** Latest-wins request coalescing.
 *
 * The editor issues at most one request per debounce window and never has
 * two in flight: pushes during the window collapse to the newest value, and
 * pushes during a flight arm exactly one trailing send once the response
 * lands. Completions are numbered so a caller can drop a response that a
 * newer send has superseded (identity switches mid-flight, say).
 */
export class LatestWins<T> {
  private latest: T | undefined;
  private dirty = false;
  private inFlight = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private seq = 0;
  private sent = 0;

  constructor(
    private readonly windowMs: number,
    private readonly send: (value: T, seq: number) => Promise<void>,
    private readonly onSettled?: () => void,
  ) {}

  push(value: T): void {
    this.latest = value;
    this.dirty = true;
    if (this.timer === null && !this.inFlight) this.arm();
  }

  /** Sends so far; rate tests read this. */
  get sendCount(): number {
    return this.sent;
  }

  /** True when seq belongs to the most recent send. */
  isCurrent(seq: number): boolean {
    return seq === this.seq;
  }

  get busy(): boolean {
    return this.inFlight || this.timer !== null || this.dirty;
  }

  private arm(): void {
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire();
    }, this.windowMs);
  }

  private async fire(): Promise<void> {
    if (!this.dirty || this.inFlight) return;
    this.dirty = false;
    this.inFlight = true;
    const seq = ++this.seq;
    this.sent += 1;
    try {
      await this.send(this.latest as T, seq);
    } finally {
      this.inFlight = false;
      if (this.dirty) {
        if (this.timer === null) this.arm();
      } else {
        this.onSettled?.();
      }
    }
  }
}
