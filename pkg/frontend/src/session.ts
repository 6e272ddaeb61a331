/** Editor session: the single state machine behind the sliders.
 *
 * State is a pure function of (identity, activation map), with the server
 * as the only compositor: every viewport update is a verbatim /compose
 * response. Edits are validated against the fetched AU catalog before any
 * request is built, debounced 60 ms, latest-wins. Each mutating call is
 * recorded so a fresh session can replay the script and land on the same
 * viewport, which is also how undo is verified.
 */
import { ApiClient } from "./api.js";
import { LatestWins } from "./debounce.js";
import { ActivationMap, AuInfo, EditorAction, TemplateResponse } from "./types.js";
import { ViewportModel } from "./viewport.js";

export interface SessionHooks {
  onViewport?: (model: ViewportModel) => void;
  onState?: (state: SessionState) => void;
  /** service trouble surfaces here as a toast; edits stay enabled */
  onError?: (message: string) => void;
}

export interface SessionState {
  identity: string | null;
  activation: ActivationMap;
  presetInUse: string | null;
  /** server-side compose time from X-Compute-Ms */
  lastComposeMs: number | null;
  /** full round trip as observed by the client */
  lastLatencyMs: number | null;
  undoDepth: number;
}

interface UndoEntry {
  activation: ActivationMap;
  presetInUse: string | null;
}

export const DEBOUNCE_MS = 60;
export const UNDO_LIMIT = 100;

export class EditorSession {
  readonly viewport = new ViewportModel();
  /** raw body of the compose response currently on screen */
  lastComposeRaw: string | null = null;

  private identity: string | null = null;
  private activation: ActivationMap = {};
  private presetInUse: string | null = null;
  private lastComposeMs: number | null = null;
  private lastLatencyMs: number | null = null;
  private readonly undoStack: UndoEntry[] = [];
  private readonly script: EditorAction[] = [];
  private readonly templates = new Map<string, TemplateResponse>();
  private readonly debouncer: LatestWins<ActivationMap>;
  private waiters: Array<() => void> = [];

  private constructor(
    private readonly client: ApiClient,
    readonly aus: AuInfo[],
    readonly emotions: Record<string, Record<string, number>>,
    private readonly hooks: SessionHooks,
    windowMs: number,
  ) {
    this.debouncer = new LatestWins<ActivationMap>(
      windowMs,
      (act, seq) => this.sendCompose(act, seq),
      () => this.releaseWaiters(),
    );
  }

  /** Catalog and presets are fetched, never hardcoded. */
  static async create(
    client: ApiClient,
    hooks: SessionHooks = {},
    windowMs: number = DEBOUNCE_MS,
  ): Promise<EditorSession> {
    const [aus, emotions] = await Promise.all([client.aus(), client.emotions()]);
    return new EditorSession(client, aus, emotions, hooks, windowMs);
  }

  get state(): SessionState {
    return {
      identity: this.identity,
      activation: { ...this.activation },
      presetInUse: this.presetInUse,
      lastComposeMs: this.lastComposeMs,
      lastLatencyMs: this.lastLatencyMs,
      undoDepth: this.undoStack.length,
    };
  }

  get composeRequests(): number {
    return this.debouncer.sendCount;
  }

  exportScript(): EditorAction[] {
    return this.script.map((a) => ({ ...a }));
  }

  /** Resolves once no compose is pending or in flight. */
  idle(): Promise<void> {
    if (!this.debouncer.busy) return Promise.resolve();
    return new Promise((resolve) => this.waiters.push(resolve));
  }

  async selectIdentity(identity: string): Promise<void> {
    // template (and with it the topology) is fetched once per identity and
    // reused on re-selection; composes afterwards only move positions
    let template = this.templates.get(identity);
    if (template === undefined) {
      template = await this.client.template(identity);
      this.templates.set(identity, template);
    }
    this.identity = identity;
    this.activation = this.zeroActivation();
    this.presetInUse = null;
    this.undoStack.length = 0;
    this.script.length = 0;
    this.lastComposeRaw = null;
    this.viewport.setIdentity(identity, template.vertices, template.topology);
    this.notify();
  }

  sliderEdit(au: number, value: number): boolean {
    if (!this.requireIdentity()) return false;
    const problem = this.validateSlider(au, value);
    if (problem !== null) {
      this.hooks.onError?.(problem);
      return false;
    }
    this.pushUndo();
    this.activation[au] = value;
    this.presetInUse = null;
    this.script.push({ kind: "slider", au, value });
    this.queueCompose();
    return true;
  }

  applyEmotion(name: string, intensity: number): boolean {
    if (!this.requireIdentity()) return false;
    const preset = this.emotions[name];
    if (preset === undefined) {
      this.hooks.onError?.(`unknown emotion ${JSON.stringify(name)}`);
      return false;
    }
    if (!Number.isFinite(intensity) || intensity < 0 || intensity > 1) {
      this.hooks.onError?.(`intensity must be in [0, 1], got ${intensity}`);
      return false;
    }
    this.pushUndo();
    const next = this.zeroActivation();
    for (const [auKey, weight] of Object.entries(preset)) {
      next[Number(auKey)] = weight * intensity;
    }
    this.activation = next;
    this.presetInUse = name;
    this.script.push({ kind: "emotion", name, intensity });
    this.queueCompose();
    return true;
  }

  undo(): boolean {
    const entry = this.undoStack.pop();
    if (entry === undefined) return false;
    this.activation = { ...entry.activation };
    this.presetInUse = entry.presetInUse;
    this.script.push({ kind: "undo" });
    this.queueCompose();
    return true;
  }

  /** Rebuild a session from a recorded script; same script, same viewport. */
  static async replay(
    client: ApiClient,
    identity: string,
    script: EditorAction[],
    hooks: SessionHooks = {},
    windowMs: number = DEBOUNCE_MS,
  ): Promise<EditorSession> {
    const session = await EditorSession.create(client, hooks, windowMs);
    await session.selectIdentity(identity);
    for (const action of script) {
      if (action.kind === "slider") session.sliderEdit(action.au, action.value);
      else if (action.kind === "emotion") session.applyEmotion(action.name, action.intensity);
      else session.undo();
    }
    return session;
  }

  // ------------------------------------------------------------- internals

  private zeroActivation(): ActivationMap {
    const act: ActivationMap = {};
    for (const au of this.aus) act[au.id] = 0;
    return act;
  }

  private validateSlider(au: number, value: number): string | null {
    if (!(au in this.activation)) return `AU${au} is not in the catalog`;
    if (!Number.isFinite(value) || value < 0 || value > 1) {
      return `AU${au}: weight must be in [0, 1], got ${value}`;
    }
    return null;
  }

  private requireIdentity(): boolean {
    if (this.identity === null) {
      this.hooks.onError?.("select an identity first");
      return false;
    }
    return true;
  }

  private pushUndo(): void {
    this.undoStack.push({
      activation: { ...this.activation },
      presetInUse: this.presetInUse,
    });
    if (this.undoStack.length > UNDO_LIMIT) this.undoStack.shift();
  }

  private queueCompose(): void {
    this.notify();
    this.debouncer.push({ ...this.activation });
  }

  private async sendCompose(act: ActivationMap, seq: number): Promise<void> {
    const identity = this.identity;
    if (identity === null) return;
    const started = Date.now();
    try {
      const result = await this.client.compose(identity, act);
      if (!this.debouncer.isCurrent(seq) || identity !== this.identity) return;
      this.viewport.updatePositions(result.payload.vertices);
      this.lastComposeRaw = result.rawBody;
      this.lastComposeMs = result.computeMs;
      this.lastLatencyMs = Date.now() - started;
      this.hooks.onViewport?.(this.viewport);
      this.notify();
    } catch (err) {
      this.hooks.onError?.(err instanceof Error ? err.message : String(err));
    }
  }

  private releaseWaiters(): void {
    for (const resolve of this.waiters.splice(0)) resolve();
  }

  private notify(): void {
    this.hooks.onState?.(this.state);
  }
}
