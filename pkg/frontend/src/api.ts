/** Typed client for the aublend service. One method per route, zod-checked.
 *
 * Compose request bodies are built with AU keys in ascending numeric order
 * and zero weights dropped, so a given slider state always serializes to the
 * same bytes and an all-zero state asks for the bare template.
 */
import {
  ActivationMap,
  ausResponseSchema,
  AuInfo,
  ComposeResponse,
  composeResponseSchema,
  emotionsResponseSchema,
  errorResponseSchema,
  identitiesResponseSchema,
  IdentityRow,
  PredictResponse,
  predictResponseSchema,
  TemplateResponse,
  templateResponseSchema,
  violationsResponseSchema,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly violations: string[] = [],
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ComposeResult {
  payload: ComposeResponse;
  /** raw response body; the viewport contract is byte-level fidelity */
  rawBody: string;
  computeMs: number | null;
}

export function composeBody(
  identity: string,
  activation: ActivationMap,
  includeTopology = false,
): string {
  const aus = Object.keys(activation)
    .map(Number)
    .filter((au) => activation[au] !== 0)
    .sort((a, b) => a - b);
  const acts: Record<string, number> = {};
  for (const au of aus) acts[String(au)] = activation[au]!;
  const body: Record<string, unknown> = {
    identity_id: identity,
    activations: acts,
  };
  if (includeTopology) body.include_topology = true;
  return JSON.stringify(body);
}

async function raise(res: Response): Promise<never> {
  const text = await res.text();
  let message = `HTTP ${res.status}`;
  let violations: string[] = [];
  try {
    const parsed = JSON.parse(text);
    const err = errorResponseSchema.safeParse(parsed);
    if (err.success) message = err.data.error;
    const viol = violationsResponseSchema.safeParse(parsed);
    if (viol.success) {
      violations = viol.data.violations;
      message = violations.join("; ");
    }
  } catch {
    /* non-JSON error body; keep the status line */
  }
  throw new ApiError(res.status, message, violations);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson(path: string): Promise<unknown> {
    const res = await this.fetchFn(this.baseUrl + path);
    if (!res.ok) await raise(res);
    return res.json();
  }

  async aus(): Promise<AuInfo[]> {
    return ausResponseSchema.parse(await this.getJson("/api/aus")).aus;
  }

  async emotions(): Promise<Record<string, Record<string, number>>> {
    return emotionsResponseSchema.parse(await this.getJson("/api/emotions"))
      .emotions;
  }

  async identities(): Promise<{ identities: IdentityRow[]; modelsLoaded: boolean }> {
    const data = identitiesResponseSchema.parse(
      await this.getJson("/api/identities"),
    );
    return { identities: data.identities, modelsLoaded: data.models_loaded };
  }

  async template(identity: string): Promise<TemplateResponse> {
    return templateResponseSchema.parse(
      await this.getJson(`/api/identity/${encodeURIComponent(identity)}/template`),
    );
  }

  async compose(
    identity: string,
    activation: ActivationMap,
    includeTopology = false,
  ): Promise<ComposeResult> {
    const res = await this.fetchFn(this.baseUrl + "/api/compose", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: composeBody(identity, activation, includeTopology),
    });
    if (!res.ok) await raise(res);
    const header = res.headers.get("X-Compute-Ms");
    const rawBody = await res.text();
    return {
      payload: composeResponseSchema.parse(JSON.parse(rawBody)),
      rawBody,
      computeMs: header === null ? null : Number(header),
    };
  }

  async predict(identity: string): Promise<PredictResponse> {
    const res = await this.fetchFn(
      this.baseUrl + `/api/identity/${encodeURIComponent(identity)}/predict`,
      { method: "POST" },
    );
    if (!res.ok) await raise(res);
    return predictResponseSchema.parse(await res.json());
  }
}
