/** Thin typed client over the pipeline HTTP API; every piece of state the
 * UI shows comes from these calls, never from local invention. */

import type {
  AnnotationBody,
  SubmitOutcome,
  TrackletSummary,
  VideoInfo,
} from "./types.js";

export class ApiClient {
  constructor(private readonly base: string) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  async listVideos(project?: string): Promise<VideoInfo[]> {
    const query = project ? `?project=${encodeURIComponent(project)}` : "";
    const response = await fetch(this.url(`/api/videos${query}`));
    if (!response.ok) {
      throw new Error(`video listing failed: ${response.status}`);
    }
    const body = (await response.json()) as { videos: VideoInfo[] };
    return body.videos;
  }

  async tracklets(project: string, filename: string): Promise<TrackletSummary> {
    const response = await fetch(
      this.url(
        `/api/videos/${encodeURIComponent(project)}/${encodeURIComponent(filename)}/tracklets`,
      ),
    );
    if (!response.ok) {
      throw new Error(`tracklet summary failed: ${response.status}`);
    }
    return (await response.json()) as TrackletSummary;
  }

  async overlayBytes(project: string, filename: string): Promise<ArrayBuffer> {
    const response = await fetch(
      this.url(
        `/api/videos/${encodeURIComponent(project)}/${encodeURIComponent(filename)}/overlay`,
      ),
    );
    if (!response.ok) {
      throw new Error(`overlay fetch failed: ${response.status}`);
    }
    return response.arrayBuffer();
  }

  async submitAnnotation(
    project: string,
    filename: string,
    body: AnnotationBody,
  ): Promise<SubmitOutcome> {
    const response = await fetch(
      this.url(
        `/api/videos/${encodeURIComponent(project)}/${encodeURIComponent(filename)}/annotation`,
      ),
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    const payload = (await response.json()) as Record<string, unknown>;
    if (response.ok) {
      return { kind: "ok", version: payload.version as number };
    }
    if (response.status === 409 && payload.error === "overlap") {
      return { kind: "overlap", frames: payload.frames as number[] };
    }
    if (response.status === 409 && payload.error === "stale_version") {
      return { kind: "stale", version: payload.version as number };
    }
    return {
      kind: "rejected",
      status: response.status,
      error: String(payload.error ?? "unknown"),
    };
  }
}
