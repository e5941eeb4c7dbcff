#!/usr/bin/env python3
"""Report per-window dominant movement frequency of a joint for every
analyzed video in a store, the kind of summary an experiment schema
would keep per activity.

    POSEPIPE_DB=... POSEPIPE_STORE_ROOT=... \
        python scripts/movement_frequency_report.py --joint l_wrist
"""

import argparse

import numpy as np

from posepipe.annotation import movement_frequency
from posepipe.config import build_pipeline, load_config
from posepipe.datamodel import Keypoints2D, SkeletonId, skeleton
from posepipe.errors import InsufficientData


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config")
    parser.add_argument("--project")
    parser.add_argument("--joint", default="l_wrist")
    args = parser.parse_args()

    pipe = build_pipeline(load_config(args.config))
    restriction = {"project": args.project} if args.project else None
    rows = pipe.engine.rows("top_down_person", restriction)
    if not rows:
        print("no keypoint rows found; populate top_down_person first")
        return
    for row in rows:
        skel = skeleton(SkeletonId(row["skeleton"]))
        video = pipe.engine.rows(
            "video", {"project": row["project"], "filename": row["filename"]}
        )[0]
        kp = Keypoints2D(data=row["keypoints"], skeleton=skel.id)
        try:
            joint = skel.index_of(args.joint)
        except ValueError:
            print(f"{row['filename']}: skeleton {skel.id} has no {args.joint}")
            continue
        try:
            series = movement_frequency(kp, joint, float(video["fps"]))
        except InsufficientData as exc:
            print(f"{row['filename']}: {exc}")
            continue
        print(
            f"{row['project']}/{row['filename']} subject {row['subject_id']}:"
            f" median {np.median(series.frequency):.3f} Hz over"
            f" {series.frequency.shape[0]} windows"
            f" [{series.timepoints[0]:.2f}s..{series.timepoints[-1]:.2f}s]"
        )


if __name__ == "__main__":
    main()
