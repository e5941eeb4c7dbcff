/** Pure curation-state logic.
 *
 * Conflict highlighting mirrors the server's rule exactly: a selection is
 * stitchable only when the chosen tracklets' frame supports are pairwise
 * disjoint, and the conflicting frames are their pairwise intersections.
 * The server remains the authority (its 409 body replaces the local
 * computation on submit).
 */

import type { TrackSummary } from "./types.js";

export interface CurationState {
  selection: number[]; // selected track ids, sorted
  conflictFrames: number[]; // live local computation
  serverConflictFrames: number[]; // from the last 409, if any
  locked: boolean; // true once the video is marked invalid
  status: "pending" | "annotated" | "invalid";
  version: number;
  notice: string;
}

export function initialState(
  status: CurationState["status"],
  version: number,
): CurationState {
  return {
    selection: [],
    conflictFrames: [],
    serverConflictFrames: [],
    locked: status === "invalid",
    status,
    version,
    notice: "",
  };
}

export function localConflicts(
  tracks: TrackSummary[],
  selection: number[],
): number[] {
  const chosen = tracks.filter((t) => selection.includes(t.track_id));
  const conflicts = new Set<number>();
  for (let i = 0; i < chosen.length; i++) {
    const a = new Set(chosen[i].frames);
    for (let j = i + 1; j < chosen.length; j++) {
      for (const frame of chosen[j].frames) {
        if (a.has(frame)) {
          conflicts.add(frame);
        }
      }
    }
  }
  return [...conflicts].sort((x, y) => x - y);
}

export function toggleTrack(
  state: CurationState,
  trackId: number,
  tracks: TrackSummary[],
): CurationState {
  if (state.locked) {
    return { ...state, notice: "video is marked invalid; curation is locked" };
  }
  if (!tracks.some((t) => t.track_id === trackId)) {
    return state;
  }
  const selection = state.selection.includes(trackId)
    ? state.selection.filter((t) => t !== trackId)
    : [...state.selection, trackId].sort((a, b) => a - b);
  return {
    ...state,
    selection,
    conflictFrames: localConflicts(tracks, selection),
    serverConflictFrames: [],
    notice: "",
  };
}

export function canStitch(state: CurationState): boolean {
  return (
    !state.locked && state.selection.length > 0 && state.conflictFrames.length === 0
  );
}

export function applySubmitOk(
  state: CurationState,
  version: number,
  subjectId: number,
): CurationState {
  return {
    ...state,
    version,
    status: subjectId < 0 ? "invalid" : "annotated",
    locked: subjectId < 0,
    selection: [],
    conflictFrames: [],
    serverConflictFrames: [],
    notice:
      subjectId < 0
        ? "marked invalid"
        : `subject ${subjectId} assigned (${state.selection.length} tracklets)`,
  };
}

export function applyOverlap(
  state: CurationState,
  frames: number[],
): CurationState {
  return {
    ...state,
    serverConflictFrames: frames,
    notice: `selection overlaps on ${frames.length} frames`,
  };
}

export function applyStale(state: CurationState, version: number): CurationState {
  return {
    ...state,
    version,
    notice: "someone else annotated this video; state refreshed",
  };
}

/** Re-sync with what the server says; displayed state never drifts. */
export function refreshFromServer(
  state: CurationState,
  status: CurationState["status"],
  version: number,
): CurationState {
  return {
    ...state,
    status,
    version,
    locked: status === "invalid",
  };
}
