/**
 * Server-state scene view: everything drawn here comes from `state`
 * frames (plus the client's own commanded ghost while clutched) — no
 * physics runs in the browser.
 *
 * Main panel is the operator's camera frame: the y-z board plane seen
 * along +x (right = +y, up = +z). A narrow depth gauge alongside shows
 * EE x against the board line, which is where contact happens. The
 * wiping workcell's nominal dimensions are baked in as a drawing frame
 * only; nothing here feeds back into control.
 */
import type { StateMsg, Vec3 } from "./protocol.js";

export const VIEW = {
  yMin: -0.35, yMax: 0.35, // m, horizontal extent of the front panel
  zMin: 0.0, zMax: 0.5, // m, vertical extent
  xMin: 0.1, xMax: 0.55, // m, depth gauge range
  boardX: 0.45, // nominal board plane for the gauge
};

export const CONTACT_FORCE_N = 1.0; // marker threshold

export type Viewport = { w: number; h: number; gaugeW: number };

export function makeViewport(w: number, h: number): Viewport {
  return { w, h, gaugeW: Math.max(40, Math.round(w * 0.12)) };
}

/** World (y, z) to front-panel pixels; y right, z up. */
export function projectFront(pos: Vec3, vp: Viewport): [number, number] {
  const frontW = vp.w - vp.gaugeW;
  const px = ((pos[1] - VIEW.yMin) / (VIEW.yMax - VIEW.yMin)) * frontW;
  const py = (1 - (pos[2] - VIEW.zMin) / (VIEW.zMax - VIEW.zMin)) * vp.h;
  return [px, py];
}

/** World x to a vertical position on the depth gauge (deep = low). */
export function projectDepth(x: number, vp: Viewport): number {
  const clamped = Math.min(VIEW.xMax, Math.max(VIEW.xMin, x));
  return (1 - (clamped - VIEW.xMin) / (VIEW.xMax - VIEW.xMin)) * vp.h;
}

export function forceMagnitude(state: StateMsg): number {
  const [fx, fy, fz] = state.wrench;
  return Math.hypot(fx, fy, fz);
}

export type SceneInputs = {
  state: StateMsg | null;
  ghost: Vec3 | null; // client's commanded target while clutched
};

const C = {
  bg: "#10141a",
  grid: "#1f2630",
  board: "#2d6cdf",
  ee: "#e8eaed",
  eeContact: "#ff6b57",
  ghost: "#9aa4b2",
  gauge: "#39414d",
  text: "#9aa4b2",
};

export function drawScene(ctx: CanvasRenderingContext2D, vp: Viewport,
                          inputs: SceneInputs): void {
  const { w, h, gaugeW } = vp;
  const frontW = w - gaugeW;
  ctx.fillStyle = C.bg;
  ctx.fillRect(0, 0, w, h);

  // board footprint in the front panel (its y-z face)
  const [bx0, by0] = projectFront([0, -0.25, 0.45], vp);
  const [bx1, by1] = projectFront([0, 0.25, 0.05], vp);
  ctx.strokeStyle = C.board;
  ctx.lineWidth = 1.5;
  ctx.strokeRect(bx0, by0, bx1 - bx0, by1 - by0);

  ctx.strokeStyle = C.grid;
  ctx.lineWidth = 1;
  for (let gy = -0.3; gy <= 0.31; gy += 0.1) {
    const [gx] = projectFront([0, gy, 0], vp);
    ctx.beginPath();
    ctx.moveTo(gx, 0);
    ctx.lineTo(gx, h);
    ctx.stroke();
  }

  // depth gauge with the board line
  ctx.fillStyle = C.gauge;
  ctx.fillRect(frontW, 0, 1, h);
  const boardPy = projectDepth(VIEW.boardX, vp);
  ctx.strokeStyle = C.board;
  ctx.beginPath();
  ctx.moveTo(frontW + 6, boardPy);
  ctx.lineTo(w - 6, boardPy);
  ctx.stroke();
  ctx.fillStyle = C.text;
  ctx.font = "10px system-ui, sans-serif";
  ctx.fillText("board", frontW + 6, boardPy - 4);

  const state = inputs.state;
  if (!state) return;

  if (inputs.ghost) {
    const [gx, gy] = projectFront(inputs.ghost, vp);
    ctx.strokeStyle = C.ghost;
    ctx.setLineDash([3, 3]);
    ctx.beginPath();
    ctx.arc(gx, gy, 7, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  const force = forceMagnitude(state);
  const inContact = force >= CONTACT_FORCE_N;
  const [ex, ey] = projectFront(state.ee_pos, vp);
  ctx.fillStyle = inContact ? C.eeContact : C.ee;
  ctx.beginPath();
  ctx.arc(ex, ey, 5 + 3 * (1 - state.gripper), 0, 2 * Math.PI);
  ctx.fill();
  if (inContact) {
    ctx.strokeStyle = C.eeContact;
    ctx.beginPath();
    ctx.arc(ex, ey, 9 + Math.min(12, force), 0, 2 * Math.PI);
    ctx.stroke();
  }

  // EE depth marker on the gauge
  const py = projectDepth(state.ee_pos[0], vp);
  ctx.fillStyle = inContact ? C.eeContact : C.ee;
  ctx.fillRect(frontW + 8, py - 2, gaugeW - 16, 4);
}
