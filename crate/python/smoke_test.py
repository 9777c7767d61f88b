"""Smoke test for the pyvidattack extension.

Build and install first:

    pip install --no-build-isolation ./crates/python

then run ``python3 python/smoke_test.py``. Exits non-zero on failure.
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import pyvidattack as va


def check(cond, message):
    if not cond:
        print(f"FAIL {message}")
        sys.exit(1)
    print(f"ok   {message}")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        # VBT1 round trip
        shape = (2, 8, 8, 1)
        data = [float(i % 256) for i in range(2 * 8 * 8)]
        video = va.Video(shape, data)
        video.write(tmp / "v.vbt")
        back = va.Video.read(tmp / "v.vbt")
        check(back.shape == shape and back.tolist() == data, "VBT1 round trip")

        # a bright square on a flat frame is the salient region
        w = h = 32
        frame = [200.0 if 12 <= x < 20 and 12 <= y < 20 else 128.0 for x in range(w) for y in range(h)]
        sal, degenerate = va.saliency_map(frame, w, h, 1)
        peak = max(range(len(sal)), key=sal.__getitem__)
        check(not degenerate and math.isclose(max(sal), 1.0), "saliency map is normalized")
        check(8 <= peak // h < 24 and 8 <= peak % h < 24, "saliency peak near the square")
        _, flat = va.saliency_map([128.0] * (w * h), w, h, 1)
        check(flat, "constant frame is degenerate")

        mask = va.spatial_mask(va.Video((1, w, h, 1), frame), 0.25)
        check(sum(mask) == w * h // 4, "spatial mask keeps a quarter of the pixels")

        try:
            va.spatial_mask(video, 0.0)
            check(False, "phi = 0 rejected")
        except ValueError:
            check(True, "phi = 0 rejected")

        # end-to-end attack on a synthetic dataset
        ds = tmp / "ds"
        va.generate_dataset(str(ds), samples=4, classes=2, shape=(4, 8, 8, 1), active_frames=2)
        manifest = json.loads((ds / "manifest.json").read_text())
        sample = manifest["samples"][0]
        x = va.Video.read(ds / f"{sample['id']}.vbt")
        config = json.dumps(
            {"schema": 1, "attack": {"n_init_candidates": 2, "optimizer": {"max_iterations": 5}}}
        )
        report = json.loads(va.attack(x, sample["label"], config_json=config, dataset=str(ds), id=sample["id"]))
        row = report["rows"][0]
        check(row["success"] and row["queries"] > 0, "attack fools the victim")
        check(set(report["summary"]) >= {"fr", "mq", "map", "map_masked", "s"}, "report summary keys")

        try:
            va.attack(x, sample["label"], config_json='{"schema": 1, "atack": {}}', dataset=str(ds))
            check(False, "unknown config key rejected")
        except ValueError:
            check(True, "unknown config key rejected")

        bench = json.loads(
            va.run_bench(
                json.dumps(
                    {
                        "schema": 1,
                        "attack": {"n_init_candidates": 2, "optimizer": {"max_iterations": 2}},
                        "bench": {"max_videos": 2},
                    }
                ),
                dataset=str(ds),
            )
        )
        check(len(bench["variants"]) == 3 and len(bench["comparison"]) == 2, "bench compares three variants")

    print("all checks passed")


if __name__ == "__main__":
    main()
