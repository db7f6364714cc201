"""Detect blinks inside long untrimmed streams with a sliding window.

Trains a quick model, then scans 50-frame streams: a 10-frame window slides
with stride 1, every window is classified, confident windows become
proposals, and temporal NMS collapses the overlapping ones into events.
"""

from blinkwild import dataset, evaluation, mslstm, pipeline

from importlib import import_module
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
train_demo = import_module("03_train_and_verify")


def main():
    model = mslstm.init_model(seed=0)
    config = mslstm.TrainConfig(max_steps=300, seed=0)
    model, _ = mslstm.train(
        model, train_demo.featurize(train_demo.build(40, base=0)), config)

    print("one blink per stream, centered at a known frame:")
    events_pool, gt_pool = [], []
    for i, center in enumerate((18, 25, 33)):
        clip, gt = dataset.synth_stream(seed=800 + i, length=50,
                                        blink_center=center)
        events = pipeline.detect_stream(
            clip.frames, pipeline.annotation_locator(clip), model)
        print(f"  stream {i} (truth {gt}):")
        for ev in events:
            print(f"    {ev.eye:5s} eye -> frames [{ev.start}, {ev.end}] "
                  f"confidence {ev.confidence:.3f}")
        offset = 1000 * i
        gt_pool.append((gt[0] + offset, gt[1] + offset))
        events_pool += [pipeline.BlinkEvent(ev.start + offset,
                                            ev.end + offset,
                                            ev.confidence, ev.eye)
                        for ev in events if ev.eye == "left"]

    ap = evaluation.average_precision(events_pool, gt_pool)
    print(f"\nleft-eye average precision at temporal overlap 0.5: {ap:.3f}")

    quiet, _ = dataset.synth_stream(seed=900, length=50, blink_center=None)
    none = pipeline.detect_stream(
        quiet.frames, pipeline.annotation_locator(quiet), model)
    print(f"blink-free stream yields {len(none)} events")


if __name__ == "__main__":
    main()
