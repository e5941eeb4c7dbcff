/** Shapes served by the pipeline HTTP API. */

export interface VideoInfo {
  project: string;
  filename: string;
  width: number;
  height: number;
  fps: number;
  frame_count: number;
  tracking: { tracking_method: number; num_tracks: number }[];
  annotations: { subject_id: number; tracking_method: number; annotator: string }[];
  status: "pending" | "annotated" | "invalid";
  version: number;
}

export interface TrackSummary {
  track_id: number;
  first_frame: number;
  last_frame: number;
  frame_count: number;
  frames: number[];
  mean_confidence: number;
}

export interface TrackingMethodSummary {
  tracking_method: number;
  num_tracks: number;
  tracks: TrackSummary[];
}

export interface TrackletSummary {
  project: string;
  filename: string;
  tracking_methods: TrackingMethodSummary[];
  status: VideoInfo["status"];
  version: number;
}

export interface AnnotationBody {
  subject_id: number;
  track_ids: number[];
  tracking_method?: number;
  version?: number;
  annotator?: string;
}

/** Outcome of POSTing an annotation, mirroring the server's 409 bodies. */
export type SubmitOutcome =
  | { kind: "ok"; version: number }
  | { kind: "overlap"; frames: number[] }
  | { kind: "stale"; version: number }
  | { kind: "rejected"; status: number; error: string };
