/** Reload-and-replay: a fresh session fed the recorded script reproduces the
 * original viewport bit for bit, over a real socket with the real debounce. */
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { EditorSession } from "../src/session.js";
import { FakeService } from "./fake_service.js";

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

describe("reload and replay", () => {
  it("reproduces viewport and state from the recorded script", async () => {
    const original = await EditorSession.create(new ApiClient(baseUrl), {}, 5);
    await original.selectIdentity("identity_0000");
    original.applyEmotion("happiness", 0.8);
    await original.idle();
    original.sliderEdit(4, 0.3);
    await original.idle();
    original.sliderEdit(12, 1.0);
    await original.idle();
    original.undo();
    await original.idle();

    const script = original.exportScript();
    expect(script).toHaveLength(4);

    const replayed = await EditorSession.replay(
      new ApiClient(baseUrl), "identity_0000", script, {}, 5);
    await replayed.idle();

    expect(replayed.state.activation).toEqual(original.state.activation);
    expect(replayed.state.presetInUse).toBe(original.state.presetInUse);
    expect(Array.from(replayed.viewport.positions!)).toEqual(
      Array.from(original.viewport.positions!),
    );
    expect(replayed.lastComposeRaw).toBe(original.lastComposeRaw);
  });

  it("keeps the state a pure function of the activation map", async () => {
    // two sessions reaching the same map along different edit paths see the
    // same composed surface
    const a = await EditorSession.create(new ApiClient(baseUrl), {}, 5);
    await a.selectIdentity("identity_0001");
    a.sliderEdit(6, 1.0);
    await a.idle();
    a.sliderEdit(12, 1.0);
    await a.idle();

    const b = await EditorSession.create(new ApiClient(baseUrl), {}, 5);
    await b.selectIdentity("identity_0001");
    b.applyEmotion("happiness", 1.0);
    await b.idle();

    expect(Array.from(a.viewport.positions!)).toEqual(
      Array.from(b.viewport.positions!),
    );
    expect(a.lastComposeRaw).toBe(b.lastComposeRaw);
  });
});
