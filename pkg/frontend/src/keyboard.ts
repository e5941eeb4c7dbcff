/** Keyboard-first bindings: digits toggle tracklets, I marks the video
 * invalid, Enter submits the stitched selection, Escape clears. */

export type KeyAction =
  | { kind: "toggle"; index: number }
  | { kind: "mark-invalid" }
  | { kind: "submit" }
  | { kind: "clear" }
  | { kind: "none" };

export function actionForKey(key: string): KeyAction {
  if (/^[0-9]$/.test(key)) {
    return { kind: "toggle", index: Number(key) };
  }
  if (key === "i" || key === "I") {
    return { kind: "mark-invalid" };
  }
  if (key === "Enter") {
    return { kind: "submit" };
  }
  if (key === "Escape") {
    return { kind: "clear" };
  }
  return { kind: "none" };
}
