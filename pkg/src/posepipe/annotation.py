"""Subject-of-interest curation: automatic single-tracklet selection,
stitching validation, PersonBbox materialization, and the movement-
frequency summary used by experiment analyses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import (
    INVALID_SUBJECT,
    Keypoints2D,
    PersonBbox,
    SubjectAnnotation,
    TrackletSet,
    VideoKey,
)
from .errors import InsufficientData, InvalidSubject, UnknownTrackId
from .metastore import utc_now_iso

FREQ_WINDOW = 64


def auto_select(
    ts: TrackletSet, video: VideoKey, annotator: str = "auto"
) -> SubjectAnnotation | None:
    """Subject 0 can be selected without a human only when the whole video
    produced a single tracklet."""
    if ts.num_tracks != 1:
        return None
    (track_id,) = ts.track_ids()
    return SubjectAnnotation(
        video=video,
        subject_id=0,
        selected_track_ids=frozenset({track_id}),
        annotator=annotator,
        created_at=utc_now_iso(),
    )


@dataclass(frozen=True)
class SelectionReport:
    ok: bool
    conflicting_frames: tuple[int, ...] = ()


def validate_selection(ts: TrackletSet, selected_track_ids) -> SelectionReport:
    """Stitching is legal only when the selected tracklets never overlap in
    time; overlapping frames would make the subject ambiguous."""
    selected = set(selected_track_ids)
    known = ts.track_ids()
    for track_id in selected:
        if track_id not in known:
            raise UnknownTrackId(f"track {track_id} does not exist")
    supports = {tid: set(ts.frames_of(tid)) for tid in selected}
    conflicts: set[int] = set()
    ids = sorted(selected)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            conflicts |= supports[a] & supports[b]
    if conflicts:
        return SelectionReport(ok=False, conflicting_frames=tuple(sorted(conflicts)))
    return SelectionReport(ok=True)


def materialize_person_bbox(
    ts: TrackletSet, ann: SubjectAnnotation, frame_count: int
) -> PersonBbox:
    """Collapse the selected tracklets into one bbox per frame.

    Frames with no selected detection stay NaN; gaps are never
    interpolated.  If one track carries duplicate detections in a frame,
    the highest confidence wins, then the earlier list position.
    """
    if ann.subject_id == INVALID_SUBJECT:
        raise InvalidSubject("subject -1 marks the video invalid; nothing to build")
    report = validate_selection(ts, ann.selected_track_ids)
    if not report.ok:
        raise ValueError(
            f"selected tracklets overlap on frames {report.conflicting_frames}"
        )
    bboxes = np.full((frame_count, 4), np.nan)
    for f, dets in enumerate(ts.per_frame):
        if f >= frame_count:
            break
        best = None
        for det in dets:
            if det.track_id not in ann.selected_track_ids:
                continue
            if best is None or det.confidence > best.confidence:
                best = det
        if best is not None:
            bboxes[f] = best.bbox
    return PersonBbox(bboxes=bboxes)


@dataclass(frozen=True)
class FrequencySeries:
    timepoints: np.ndarray  # seconds, window centers
    frequency: np.ndarray  # Hz, dominant per window


def movement_frequency(
    kp: Keypoints2D, joint: int, fps: float, window: int = FREQ_WINDOW
) -> FrequencySeries:
    """Dominant oscillation frequency of one joint's x-coordinate over a
    sliding window.

    NaN frames are linearly interpolated, each window is mean-removed,
    and the magnitude-spectrum argmax excluding DC picks the frequency.
    A spectrum with no non-DC peak reports 0 Hz.
    """
    series = np.asarray(kp.data[:, joint, 0], dtype=np.float64)
    finite = np.isfinite(series)
    if int(finite.sum()) < window:
        raise InsufficientData(
            f"joint {joint} has {int(finite.sum())} valid frames, need {window}"
        )
    idx = np.arange(series.shape[0])
    filled = np.interp(idx, idx[finite], series[finite])
    starts = np.arange(0, series.shape[0] - window + 1)
    freqs = np.empty(starts.shape[0])
    for i, s in enumerate(starts):
        seg = filled[s : s + window]
        seg = seg - seg.mean()
        mag = np.abs(np.fft.rfft(seg))
        peak = int(np.argmax(mag[1:])) + 1
        scale = max(1.0, float(np.abs(filled[s : s + window]).max()))
        freqs[i] = 0.0 if mag[peak] < 1e-9 * scale else peak * fps / window
    centers = (starts + (window - 1) / 2.0) / fps
    return FrequencySeries(timepoints=centers, frequency=freqs)
