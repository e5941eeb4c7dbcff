#!/usr/bin/env python3
"""Write standalone synthetic PPRV clips (plus their ground truth as .npz)
for ad-hoc experiments.

    python scripts/make_synthetic_videos.py out/ --count 3 --actors 2
"""

import argparse
from pathlib import Path

import numpy as np

from posepipe import synthscene


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("outdir")
    parser.add_argument("--count", type=int, default=3)
    parser.add_argument("--actors", type=int, default=2)
    parser.add_argument("--frames", type=int, default=300)
    parser.add_argument("--fps", type=float, default=30.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--gait-hz", type=float, default=1.25)
    args = parser.parse_args()

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = synthscene.make_demo_scene(
            seed=args.seed + i,
            num_actors=args.actors,
            frame_count=args.frames,
            fps=args.fps,
            gait_frequency=args.gait_hz,
        )
        frames, truth = synthscene.generate(spec)
        clip = outdir / f"scene{args.seed + i:04d}.pprv"
        synthscene.write_rawvideo(frames, clip, fps=args.fps)
        np.savez(
            outdir / f"scene{args.seed + i:04d}.truth.npz",
            joints3d=truth.joints3d,
            joints2d=truth.joints2d,
            bboxes=truth.bboxes,
            visible=truth.visible,
        )
        print(f"wrote {clip} ({args.frames} frames, {args.actors} actors)")


if __name__ == "__main__":
    main()
