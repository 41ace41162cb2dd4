/**
 * Page wiring: DOM, timers, and the glue between device, session, scene,
 * and haptics. Input sampling (90 Hz) and rendering (rAF) run on
 * independent timers; network callbacks only update state that the next
 * frame picks up.
 *
 * Controls — drag: move in the board plane; wheel: press in/out;
 * Q/E, A/D, W/S: rotate; R/F or gamepad trigger: gripper;
 * C or button: clutch; X or button: stiffness mode.
 */
import { applyRumble, meterWidth } from "./haptics.js";
import { applyGamepad, DeviceState, KEY_ROT_STEP } from "./input.js";
import type { Vec3 } from "./protocol.js";
import { ClientSession } from "./session.js";
import { drawScene, makeViewport } from "./scene.js";

const INPUT_RATE_HZ = 90;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const params = new URLSearchParams(location.search);
  const arm = params.get("arm") ?? "arm";
  const url = `ws://${location.host}/ws`;

  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d")!;
  const statusBadge = el<HTMLSpanElement>("status");
  const clutchBadge = el<HTMLSpanElement>("clutch");
  const modeBadge = el<HTMLSpanElement>("mode");
  const forceBar = el<HTMLDivElement>("force-bar");
  const gripBar = el<HTMLDivElement>("grip-bar");
  const dropped = el<HTMLSpanElement>("dropped");

  const device = new DeviceState();
  let ghostBase: { ee: Vec3; dev: Vec3 } | null = null;
  let wasClutched = false;

  const session = new ClientSession({
    url,
    arm,
    onStatus: (s) => {
      statusBadge.textContent = s;
      statusBadge.className = `badge ${s}`;
    },
    onError: (code, message) => {
      statusBadge.textContent = `${code}: ${message}`;
      statusBadge.className = "badge failed";
    },
    onState: (state) => {
      if (state.clutch && !wasClutched) {
        ghostBase = { ee: [...state.ee_pos], dev: [...device.pos] };
      } else if (!state.clutch) {
        ghostBase = null;
      }
      wasClutched = state.clutch;
      clutchBadge.textContent = state.clutch ? "clutch IN" : "clutch out";
      clutchBadge.className = `badge ${state.clutch ? "on" : ""}`;
      modeBadge.textContent = `mode ${state.mode}`;
      forceBar.style.width = meterWidth(state.haptic);
      gripBar.style.width = meterWidth(1 - state.gripper);
      applyRumble(navigator.getGamepads?.()[0] ?? null, state.haptic);
    },
  });
  session.connect();

  // --- pointer / wheel / keys -------------------------------------------

  canvas.addEventListener("pointerdown", (ev) => {
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (ev.buttons & 1) device.dragBy(ev.movementX, ev.movementY);
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    device.wheelBy(ev.deltaY);
  }, { passive: false });

  const rotations: Record<string, [Vec3, number]> = {
    q: [[0, 0, 1], +KEY_ROT_STEP], e: [[0, 0, 1], -KEY_ROT_STEP],
    a: [[0, 1, 0], +KEY_ROT_STEP], d: [[0, 1, 0], -KEY_ROT_STEP],
    w: [[1, 0, 0], +KEY_ROT_STEP], s: [[1, 0, 0], -KEY_ROT_STEP],
  };
  window.addEventListener("keydown", (ev) => {
    const key = ev.key.toLowerCase();
    const rot = rotations[key];
    if (rot) device.rotateBy(rot[0], rot[1]);
    else if (key === "c") device.pulseMenu();
    else if (key === "x") device.pulseGrip();
    else if (key === "r") device.setTrigger(device.trigger + 0.1);
    else if (key === "f") device.setTrigger(device.trigger - 0.1);
  });
  el<HTMLButtonElement>("btn-clutch").addEventListener(
    "click", () => device.pulseMenu());
  el<HTMLButtonElement>("btn-mode").addEventListener(
    "click", () => device.pulseGrip());

  // --- loops ---------------------------------------------------------------

  let lastTick = performance.now();
  setInterval(() => {
    const now = performance.now();
    const dt = (now - lastTick) / 1000;
    lastTick = now;
    const pad = navigator.getGamepads?.()[0];
    if (pad) applyGamepad(device, pad, dt);
    session.sendInput(device.sample());
    dropped.textContent = session.droppedInputs
      ? `${session.droppedInputs} inputs dropped` : "";
  }, 1000 / INPUT_RATE_HZ);

  const render = () => {
    const vp = makeViewport(canvas.width, canvas.height);
    let ghost: Vec3 | null = null;
    if (ghostBase && session.lastState?.clutch) {
      ghost = [
        ghostBase.ee[0] + (device.pos[0] - ghostBase.dev[0]),
        ghostBase.ee[1] + (device.pos[1] - ghostBase.dev[1]),
        ghostBase.ee[2] + (device.pos[2] - ghostBase.dev[2]),
      ];
    }
    drawScene(ctx, vp, { state: session.lastState, ghost });
    requestAnimationFrame(render);
  };
  requestAnimationFrame(render);
}

main();
