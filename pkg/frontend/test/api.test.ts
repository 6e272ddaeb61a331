/** Client-contract tests over a real socket: shapes, error mapping, and the
 * canonical request body builder. */
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient, ApiError, composeBody } from "../src/api.js";
import { AU_IDS, FakeService } from "./fake_service.js";

let service: FakeService;
let baseUrl: string;
let close: () => Promise<void>;

beforeAll(async () => {
  service = new FakeService();
  const started = await service.listen();
  baseUrl = started.url;
  close = started.close;
});

afterAll(async () => {
  await close();
});

describe("composeBody", () => {
  it("sorts AU keys numerically and drops zero weights", () => {
    const body = composeBody("x", { 43: 0.5, 4: 0.25, 12: 0, 6: 1 });
    expect(body).toBe('{"identity_id":"x","activations":{"4":0.25,"6":1,"43":0.5}}');
  });

  it("emits an empty activation object for the all-zero state", () => {
    expect(composeBody("x", { 12: 0, 4: 0 })).toBe(
      '{"identity_id":"x","activations":{}}',
    );
  });
});

describe("ApiClient", () => {
  it("fetches the AU catalog", async () => {
    const aus = await new ApiClient(baseUrl).aus();
    expect(aus.map((a) => a.id)).toEqual(AU_IDS);
    expect(aus[0]).toHaveProperty("name");
    expect(aus[0]).toHaveProperty("region");
  });

  it("fetches emotions and identities", async () => {
    const client = new ApiClient(baseUrl);
    const emotions = await client.emotions();
    expect(Object.keys(emotions)).toContain("happiness");
    const { identities, modelsLoaded } = await client.identities();
    expect(identities.map((i) => i.id)).toEqual(service.identities);
    expect(modelsLoaded).toBe(false);
  });

  it("round-trips template geometry", async () => {
    const template = await new ApiClient(baseUrl).template("identity_0000");
    expect(template.vertices).toEqual(service.template("identity_0000"));
    expect(template.vertices.length).toBe(template.vertex_count * 3);
    expect(template.topology.length % 3).toBe(0);
  });

  it("maps 404 to ApiError with the server message", async () => {
    await expect(new ApiClient(baseUrl).template("nobody")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
      message: "unknown identity 'nobody'",
    });
  });

  it("collects every violation from a 422", async () => {
    const error = await new ApiClient(baseUrl)
      .compose("identity_0000", { 99: 2 } as Record<number, number>)
      .catch((e: unknown) => e as ApiError);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(422);
    expect((error as ApiError).violations).toEqual([
      "AU99 is not registered",
      "AU99: weight 2 outside [0, 1]",
    ]);
  });

  it("exposes the compute-time header and the raw body", async () => {
    const result = await new ApiClient(baseUrl).compose("identity_0000", { 12: 1 });
    expect(result.computeMs).toBe(0.042);
    expect(result.rawBody).toBe(JSON.stringify(JSON.parse(result.rawBody)));
    expect(result.payload.vertices.length).toBe(result.payload.vertex_count * 3);
  });

  it("requests topology only when asked", async () => {
    const client = new ApiClient(baseUrl);
    const bare = await client.compose("identity_0000", { 12: 1 });
    expect(bare.payload.topology).toBeUndefined();
    const withTopo = await client.compose("identity_0000", { 12: 1 }, true);
    expect(withTopo.payload.topology).toEqual([0, 1, 2, 1, 3, 2, 2, 3, 4]);
  });

  it("returns byte-identical bodies for byte-identical requests", async () => {
    const client = new ApiClient(baseUrl);
    const first = await client.compose("identity_0000", { 12: 1, 6: 0.5 });
    const second = await client.compose("identity_0000", { 6: 0.5, 12: 1 });
    expect(first.rawBody).toBe(second.rawBody);
  });
});
