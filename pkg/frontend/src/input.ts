/**
 * Desk-scale stand-in for a tracked 6-DOF controller.
 *
 * The workcell's board is the y-z plane seen along +x, so the screen maps
 * naturally: pointer drag moves the device in y (right = +y) and z
 * (up = +z) at 1 px = 1 mm, the wheel pushes in x (toward/away from the
 * board), and keys rotate about each axis. A gamepad, when present,
 * drives the same state through its sticks and trigger.
 *
 * Clutch and mode are one-frame button pulses: the server toggles on the
 * rising edge of the menu/grip levels, exactly like the VR controller
 * buttons it stands in for.
 */
import type { Buttons, Quat, Vec3 } from "./protocol.js";
import { IDENTITY_QUAT } from "./protocol.js";

export const PX_TO_M = 0.001; // 1 px = 1 mm
export const WHEEL_TO_M = 0.0002; // one wheel notch (~120 deltaY) = 24 mm
export const KEY_ROT_STEP = 0.05; // rad per key repeat

export type DeviceSample = {
  pos: Vec3;
  quat: Quat;
  trigger: number;
  buttons: Buttons;
};

export function quatMul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const h = angle / 2;
  const s = Math.sin(h);
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export class DeviceState {
  pos: Vec3 = [0, 0, 0];
  quat: Quat = [...IDENTITY_QUAT];
  trigger = 1.0; // open hand at rest
  private menuLevel = false;
  private gripLevel = false;
  private menuPulses = 0;
  private gripPulses = 0;

  /** Pointer drag in CSS pixels: +x right, +y down on screen. */
  dragBy(dxPx: number, dyPx: number): void {
    this.pos = [
      this.pos[0],
      this.pos[1] + dxPx * PX_TO_M,
      this.pos[2] - dyPx * PX_TO_M,
    ];
  }

  /** Wheel scroll: positive deltaY backs away from the board (-x). */
  wheelBy(deltaY: number): void {
    this.pos = [this.pos[0] - deltaY * WHEEL_TO_M, this.pos[1], this.pos[2]];
  }

  moveBy(d: Vec3): void {
    this.pos = [this.pos[0] + d[0], this.pos[1] + d[1], this.pos[2] + d[2]];
  }

  rotateBy(axis: Vec3, angle: number): void {
    this.quat = quatNormalize(
      quatMul(quatFromAxisAngle(axis, angle), this.quat));
  }

  setTrigger(v: number): void {
    this.trigger = Math.min(1, Math.max(0, v));
  }

  /** Queue a one-sample menu press (clutch toggle on the server). */
  pulseMenu(): void {
    this.menuPulses += 1;
  }

  /** Queue a one-sample grip press (stiffness-mode toggle). */
  pulseGrip(): void {
    this.gripPulses += 1;
  }

  /** Hold-style button levels (gamepad path) override queued pulses. */
  setLevels(menu: boolean, grip: boolean): void {
    this.menuLevel = menu;
    this.gripLevel = grip;
  }

  /**
   * Snapshot for one input frame. A queued pulse raises the level for
   * exactly this sample; the next sample returns low, giving the server
   * the falling edge it needs before the next rising one.
   */
  sample(): DeviceSample {
    let menu = this.menuLevel;
    let grip = this.gripLevel;
    if (!menu && this.menuPulses > 0) {
      this.menuPulses -= 1;
      menu = true;
    }
    if (!grip && this.gripPulses > 0) {
      this.gripPulses -= 1;
      grip = true;
    }
    return {
      pos: [...this.pos],
      quat: [...this.quat],
      trigger: this.trigger,
      buttons: { menu, grip },
    };
  }
}

/** Subset of the Gamepad API the mapping needs (test-fakeable). */
export type GamepadLike = {
  axes: ReadonlyArray<number>;
  buttons: ReadonlyArray<{ pressed: boolean; value: number }>;
};

export const STICK_DEADZONE = 0.15;
export const STICK_M_PER_S = 0.15; // full deflection speed

function deadzone(v: number): number {
  return Math.abs(v) < STICK_DEADZONE ? 0 : v;
}

/**
 * Standard-mapping gamepad: left stick = y/z, right stick vertical = x,
 * right trigger = gripper closure, A (0) = menu, B (1) = grip.
 * Stick deflections integrate as velocities over dt seconds.
 */
export function applyGamepad(dev: DeviceState, pad: GamepadLike,
                             dt: number): void {
  const lx = deadzone(pad.axes[0] ?? 0);
  const ly = deadzone(pad.axes[1] ?? 0);
  const ry = deadzone(pad.axes[3] ?? 0);
  dev.moveBy([
    -ry * STICK_M_PER_S * dt,
    lx * STICK_M_PER_S * dt,
    -ly * STICK_M_PER_S * dt,
  ]);
  const rt = pad.buttons[7];
  if (rt !== undefined) dev.setTrigger(1 - rt.value);
  dev.setLevels(pad.buttons[0]?.pressed ?? false,
                pad.buttons[1]?.pressed ?? false);
}
