/** DOM wiring: identity picker, 32 AU sliders, preset buttons, undo,
 * latency readout, toast area, and the 3D view. All catalog data comes from
 * the service; unknown presets simply never get a button.
 */
import { ApiClient } from "./api.js";
import { MeshView } from "./render.js";
import { EditorSession, SessionState } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

function toast(message: string): void {
  const box = el<HTMLDivElement>("toasts");
  const note = document.createElement("div");
  note.className = "toast";
  note.textContent = message;
  box.appendChild(note);
  setTimeout(() => note.remove(), 4000);
}

function fmtMs(ms: number | null): string {
  return ms === null ? "-" : `${ms.toFixed(1)} ms`;
}

async function main(): Promise<void> {
  const client = new ApiClient("");
  const sliders = new Map<number, HTMLInputElement>();
  let session: EditorSession;

  const refresh = (state: SessionState): void => {
    for (const [au, input] of sliders) {
      const value = state.activation[au] ?? 0;
      if (Number(input.value) !== value) input.value = String(value);
      const label = input.previousElementSibling as HTMLElement;
      label.dataset.value = value.toFixed(2);
    }
    el<HTMLSpanElement>("latency").textContent =
      `compose ${fmtMs(state.lastComposeMs)} / round trip ${fmtMs(state.lastLatencyMs)}`;
    el<HTMLSpanElement>("preset-marker").textContent =
      state.presetInUse === null ? "manual" : `preset: ${state.presetInUse}`;
    (el<HTMLButtonElement>("undo")).disabled = state.undoDepth === 0;
  };

  session = await EditorSession.create(client, {
    onError: toast,
    onState: refresh,
  });

  const sliderBox = el<HTMLDivElement>("sliders");
  for (const au of session.aus) {
    const row = document.createElement("div");
    row.className = "slider-row";
    const label = document.createElement("label");
    label.textContent = `AU${au.id} ${au.name}`;
    label.dataset.value = "0.00";
    const input = document.createElement("input");
    input.type = "range";
    input.min = "0";
    input.max = "1";
    input.step = "0.01";
    input.value = "0";
    input.addEventListener("input", () => {
      session.sliderEdit(au.id, Number(input.value));
    });
    row.append(label, input);
    sliderBox.appendChild(row);
    sliders.set(au.id, input);
  }

  const presetBox = el<HTMLDivElement>("presets");
  const intensity = el<HTMLInputElement>("intensity");
  for (const name of Object.keys(session.emotions).sort()) {
    const button = document.createElement("button");
    button.textContent = name;
    button.addEventListener("click", () => {
      session.applyEmotion(name, Number(intensity.value));
    });
    presetBox.appendChild(button);
  }

  el<HTMLButtonElement>("undo").addEventListener("click", () => session.undo());

  const picker = el<HTMLSelectElement>("identity");
  const { identities } = await client.identities();
  for (const row of identities) {
    const option = document.createElement("option");
    option.value = row.id;
    option.textContent = `${row.id} (${row.vertex_count} vertices)`;
    picker.appendChild(option);
  }
  picker.addEventListener("change", () => {
    session.selectIdentity(picker.value).catch((err) => toast(String(err)));
  });

  new MeshView(el<HTMLCanvasElement>("view"), session.viewport);
  if (identities.length > 0) {
    picker.value = identities[0]!.id;
    await session.selectIdentity(picker.value);
  } else {
    toast("service has no identities loaded");
  }
}

main().catch((err) => {
  document.body.insertAdjacentHTML(
    "beforeend",
    `<div class="fatal">failed to start: ${String(err)}</div>`,
  );
});
