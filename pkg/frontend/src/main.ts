/** Browser entry: video list on the left, curation view on the right.
 * Operators watch the blurred tracklet overlay, toggle tracklets by
 * click or digit key, stitch or mark invalid, and submit with Enter. */

import { ApiClient } from "./api.js";
import { actionForKey } from "./keyboard.js";
import { decodePPRV, frameToRGBA, type RawVideo } from "./pprv.js";
import {
  applyOverlap,
  applyStale,
  applySubmitOk,
  canStitch,
  initialState,
  localConflicts,
  refreshFromServer,
  toggleTrack,
  type CurationState,
} from "./state.js";
import type { TrackletSummary, TrackSummary, VideoInfo } from "./types.js";

const TRACK_COLORS = [
  "#ffc400", "#00c878", "#5a8cff", "#ff5aa0",
  "#aadc3c", "#00dcdc", "#ff8c3c", "#c878ff",
];

// same-origin by default; ?api=http://host:port points elsewhere (the
// service sends permissive CORS headers)
const api = new ApiClient(
  new URLSearchParams(window.location.search).get("api") ?? "",
);

interface View {
  videos: VideoInfo[];
  current?: {
    video: VideoInfo;
    summary: TrackletSummary;
    tracks: TrackSummary[];
    trackingMethod: number;
    state: CurationState;
    player?: { raw: RawVideo; timer: number };
  };
}

const view: View = { videos: [] };

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

function trackColor(trackId: number): string {
  return TRACK_COLORS[trackId % TRACK_COLORS.length];
}

async function refreshVideos(): Promise<void> {
  view.videos = await api.listVideos();
  renderVideoList();
}

async function openVideo(video: VideoInfo): Promise<void> {
  stopPlayback();
  const summary = await api.tracklets(video.project, video.filename);
  const method = summary.tracking_methods[0];
  view.current = {
    video,
    summary,
    tracks: method ? method.tracks : [],
    trackingMethod: method ? method.tracking_method : 0,
    state: initialState(summary.status, summary.version),
  };
  renderCuration();
  void startPlayback(video);
}

function stopPlayback(): void {
  if (view.current?.player) {
    window.clearInterval(view.current.player.timer);
    view.current.player = undefined;
  }
}

async function startPlayback(video: VideoInfo): Promise<void> {
  const canvas = document.getElementById("player") as HTMLCanvasElement | null;
  if (!canvas || !view.current) {
    return;
  }
  try {
    const raw = decodePPRV(
      await api.overlayBytes(video.project, video.filename),
    );
    canvas.width = raw.width;
    canvas.height = raw.height;
    const context = canvas.getContext("2d");
    if (!context) {
      return;
    }
    const image = context.createImageData(raw.width, raw.height);
    let frame = 0;
    const timer = window.setInterval(() => {
      frameToRGBA(raw.frames[frame % raw.frameCount], image.data);
      context.putImageData(image, 0, 0);
      const marker = document.getElementById("frame-marker");
      if (marker) {
        marker.style.left = `${(100 * (frame % raw.frameCount)) / raw.frameCount}%`;
      }
      frame++;
    }, 1000 / raw.fps);
    view.current.player = { raw, timer };
  } catch (err) {
    setNotice(`overlay not available yet: ${String(err)}`);
  }
}

function setNotice(message: string): void {
  const node = document.getElementById("notice");
  if (node) {
    node.textContent = message;
  }
}

function renderVideoList(): void {
  const list = document.getElementById("video-list");
  if (!list) {
    return;
  }
  list.replaceChildren();
  for (const video of view.videos) {
    const item = el("li", { class: `video status-${video.status}` });
    item.append(
      el("span", { class: "name" }, `${video.project}/${video.filename}`),
      el("span", { class: "badge" },
         video.status === "invalid" ? "−1" : video.status),
    );
    item.addEventListener("click", () => void openVideo(video));
    list.append(item);
  }
}

function rangeBar(track: TrackSummary, frameCount: number): HTMLElement {
  const bar = el("div", { class: "range" });
  const fill = el("div", { class: "range-fill" });
  fill.style.left = `${(100 * track.first_frame) / frameCount}%`;
  fill.style.width = `${(100 * (track.last_frame - track.first_frame + 1)) / frameCount}%`;
  fill.style.background = trackColor(track.track_id);
  bar.append(fill);
  return bar;
}

function renderCuration(): void {
  const panel = document.getElementById("curation");
  if (!panel || !view.current) {
    return;
  }
  const { video, tracks, state } = view.current;
  panel.replaceChildren();
  panel.append(el("h2", {}, `${video.project}/${video.filename}`));
  panel.append(el("canvas", { id: "player" }));
  const timeline = el("div", { class: "timeline" });
  timeline.append(el("div", { id: "frame-marker" }));
  panel.append(timeline);

  const legend = el("ul", { class: "legend" });
  tracks.forEach((track, index) => {
    const selected = state.selection.includes(track.track_id);
    const item = el("li", {
      class: `track${selected ? " selected" : ""}${state.locked ? " locked" : ""}`,
    });
    const chip = el("span", { class: "chip" }, String(track.track_id));
    chip.style.background = trackColor(track.track_id);
    item.append(
      chip,
      el("span", {},
         `key ${index}  frames ${track.first_frame}–${track.last_frame}` +
         `  conf ${track.mean_confidence.toFixed(2)}`),
      rangeBar(track, video.frame_count),
    );
    item.addEventListener("click", () => {
      update(toggleTrack(state, track.track_id, tracks));
    });
    legend.append(item);
  });
  panel.append(legend);

  const conflicts = state.serverConflictFrames.length
    ? state.serverConflictFrames
    : state.conflictFrames;
  if (conflicts.length) {
    panel.append(
      el("div", { class: "conflict" },
         `selection overlaps on frames ${shortList(conflicts)}`),
    );
  }

  const buttons = el("div", { class: "buttons" });
  const assign = el("button", {}, "Assign subject 0 (Enter)");
  assign.disabled = !canStitch(state);
  assign.addEventListener("click", () => void submit(0));
  const invalid = el("button", {}, "Mark invalid −1 (I)");
  invalid.disabled = state.locked;
  invalid.addEventListener("click", () => void submit(-1));
  const stitch = el("button", {},
                    `Stitch selection (${state.selection.length})`);
  stitch.disabled = !canStitch(state) || state.selection.length < 2;
  stitch.addEventListener("click", () => void submit(0));
  buttons.append(assign, invalid, stitch);
  panel.append(buttons);
  panel.append(el("div", { id: "notice" }, state.notice));
  panel.append(
    el("div", { class: "meta" },
       `status ${state.status} · version ${state.version} · ` +
       `${tracks.length} tracklets`),
  );
}

function shortList(frames: number[]): string {
  if (frames.length <= 8) {
    return frames.join(", ");
  }
  return `${frames.slice(0, 8).join(", ")} … (${frames.length} total)`;
}

function update(state: CurationState): void {
  if (view.current) {
    view.current.state = state;
    renderCuration();
  }
}

async function submit(subjectId: number): Promise<void> {
  const current = view.current;
  if (!current || current.state.locked) {
    return;
  }
  if (subjectId >= 0 && !canStitch(current.state)) {
    return;
  }
  const outcome = await api.submitAnnotation(
    current.video.project,
    current.video.filename,
    {
      subject_id: subjectId,
      track_ids: subjectId < 0 ? [] : current.state.selection,
      tracking_method: current.trackingMethod,
      version: current.state.version,
      annotator: "ui",
    },
  );
  if (outcome.kind === "ok") {
    update(applySubmitOk(current.state, outcome.version, subjectId));
  } else if (outcome.kind === "overlap") {
    update(applyOverlap(current.state, outcome.frames));
  } else if (outcome.kind === "stale") {
    update(applyStale(current.state, outcome.version));
  } else {
    setNotice(`rejected (${outcome.status}): ${outcome.error}`);
  }
  // optimistic refresh: re-pull so the screen equals the server's truth
  const summary = await api.tracklets(
    current.video.project, current.video.filename,
  );
  current.summary = summary;
  update(refreshFromServer(current.state, summary.status, summary.version));
  await refreshVideos();
}

document.addEventListener("keydown", (event) => {
  const current = view.current;
  if (!current) {
    return;
  }
  const action = actionForKey(event.key);
  if (action.kind === "toggle") {
    const track = current.tracks[action.index];
    if (track) {
      update(toggleTrack(current.state, track.track_id, current.tracks));
    }
  } else if (action.kind === "mark-invalid") {
    void submit(-1);
  } else if (action.kind === "submit") {
    void submit(0);
  } else if (action.kind === "clear") {
    update({ ...current.state, selection: [], conflictFrames: [],
             serverConflictFrames: [], notice: "" });
  }
});

void refreshVideos();
export { localConflicts };
