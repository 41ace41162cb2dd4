/**
 * Haptic channel: the server streams an intensity in [0, 1] with every
 * state frame; it lands on the gamepad's rumble actuator when one is
 * present and is always mirrored by the on-screen force bar, so the
 * operator feels (or at least sees) contact either way.
 */

export type RumbleActuator = {
  playEffect(
    kind: string,
    params: { duration: number; strongMagnitude: number;
              weakMagnitude: number },
  ): Promise<unknown>;
};

export type GamepadWithRumble = {
  vibrationActuator?: RumbleActuator | null;
};

export const RUMBLE_PULSE_MS = 60; // refreshed every state frame (30 Hz)

export function clampIntensity(v: number): number {
  return Number.isFinite(v) ? Math.min(1, Math.max(0, v)) : 0;
}

/** Width of the force bar as a CSS percentage string. */
export function meterWidth(intensity: number): string {
  return `${(clampIntensity(intensity) * 100).toFixed(1)}%`;
}

/**
 * Push one intensity sample to the pad, if any; returns whether a rumble
 * was actually played (zero intensity idles the actuator instead).
 */
export function applyRumble(pad: GamepadWithRumble | null,
                            intensity: number): boolean {
  const level = clampIntensity(intensity);
  const actuator = pad?.vibrationActuator;
  if (!actuator || level === 0) return false;
  void actuator.playEffect("dual-rumble", {
    duration: RUMBLE_PULSE_MS,
    strongMagnitude: level,
    weakMagnitude: level * 0.5,
  }).catch(() => undefined); // browser policy may block; the bar remains
  return true;
}
