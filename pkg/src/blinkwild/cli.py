"""Command-line entry point.

Subcommands wire the library into reproducible runs: synth, polish, train,
verify, detect, eval and bench. All randomness flows from --seed; outputs
embed a config hash so runs can be traced back to their flags.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dataset, evaluation, features, mslstm, pipeline, tracker
from .errors import BlinkwildError

EYES = ("left", "right")


def _max_workers() -> int:
    cap = os.environ.get("BLINKWILD_THREADS")
    if cap:
        return max(1, int(cap))
    return min(8, os.cpu_count() or 1)


def _config_hash(args: argparse.Namespace) -> str:
    payload = json.dumps({k: v for k, v in sorted(vars(args).items())
                          if k != "func"}, default=str, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _annotated_regions(clip: dataset.Clip, eye: str):
    regions = []
    for rec in clip.annotations:
        center = rec.left_eye if eye == "left" else rec.right_eye
        if not center.visible:
            return None
        h, w = dataset.eye_region(rec.left_eye, rec.right_eye, rec.face_box)
        regions.append((center.x, center.y, float(h), float(w)))
    return regions


def _closed_frame_index(clip: dataset.Clip) -> int:
    """Fully-closed frame estimate: minimal mean intensity in the eye crops."""
    means = []
    for frame, rec in zip(clip.frames, clip.annotations):
        vals = []
        for center in (rec.left_eye, rec.right_eye):
            if center.visible:
                h, w = dataset.eye_region(rec.left_eye, rec.right_eye,
                                          rec.face_box)
                vals.append(float(dataset.crop_eye(frame, center,
                                                   (h, w)).mean()))
        means.append(np.mean(vals) if vals else np.inf)
    return int(np.argmin(means))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    entries = []
    specs = []
    counter = 0
    for split, n_blink, n_nonblink in (("train", args.train_blink,
                                        args.train_nonblink),
                                       ("test", args.test_blink,
                                        args.test_nonblink)):
        for label, count in ((dataset.LABEL_BLINK, n_blink),
                             (dataset.LABEL_NONBLINK, n_nonblink)):
            for i in range(count):
                specs.append((split, label, args.seed * 1_000_003 + counter))
                counter += 1

    def build(spec):
        split, label, seed = spec
        return split, label, seed, dataset.synth_clip(seed, label, args.length)

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        built = list(pool.map(build, specs))
    for split, label, seed, clip in built:
        name = f"{split}_{label}_{seed}"
        clip_dir = os.path.join(args.out, name)
        dataset.save_clip(clip_dir, clip)
        entries.append(dataset.ManifestEntry(clip_dir, label, split, name))
    manifest_path = os.path.join(args.out, "manifest.tsv")
    dataset.write_manifest(manifest_path, entries)
    print(f"wrote {len(entries)} clips and {manifest_path}")
    return 0


def cmd_polish(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    entries = []
    for entry in manifest.entries:
        clip = dataset.load_clip(entry.clip_dir, entry.label, entry.source_id)
        closed = (_closed_frame_index(clip)
                  if entry.label == dataset.LABEL_BLINK else None)
        polished = dataset.polish_clip(clip, args.target_len, closed)
        clip_dir = os.path.join(args.out, entry.source_id)
        dataset.save_clip(clip_dir, polished)
        entries.append(dataset.ManifestEntry(clip_dir, entry.label,
                                             entry.split, entry.source_id))
    manifest_path = os.path.join(args.out, "manifest.tsv")
    dataset.write_manifest(manifest_path, entries)
    print(f"polished {len(entries)} clips to {args.target_len} frames")
    return 0


def _load_split_features(manifest: dataset.Manifest, split: str,
                         patch_size):
    """(sequence, label, entry, eye) per eye with full annotated visibility."""
    samples = []

    def featurize(entry):
        clip = dataset.load_clip(entry.clip_dir, entry.label, entry.source_id)
        out = []
        for eye in EYES:
            regions = _annotated_regions(clip, eye)
            if regions is None:
                continue
            seq = features.featurize_clip(clip, regions, patch_size)
            label = (mslstm.CLASS_BLINK if entry.label == dataset.LABEL_BLINK
                     else mslstm.CLASS_NONBLINK)
            out.append((seq, label, entry, eye))
        return out

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        for chunk in pool.map(featurize, manifest.split(split)):
            samples.extend(chunk)
    return samples


def cmd_train(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    patch = (args.patch, args.patch)
    samples = _load_split_features(manifest, "train", patch)
    train_set = [(seq, label) for seq, label, _, _ in samples]
    model = mslstm.init_model(hidden=args.hidden, layers=args.layers,
                              scales=args.scales, margin=args.margin,
                              seed=args.seed)
    config = mslstm.TrainConfig(max_steps=args.steps,
                                batch_size=args.batch_size, seed=args.seed,
                                loss=args.loss)
    model, history = mslstm.train(model, train_set, config)
    mslstm.save_model(args.model, model)
    loss_csv = os.path.splitext(args.model)[0] + "_loss.csv"
    with open(loss_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(history, start=1):
            writer.writerow([i, repr(loss)])
    print(f"trained {args.steps} steps on {len(train_set)} samples; "
          f"model at {args.model}, losses at {loss_csv}")
    return 0


def _me_ok(box, center, rec) -> bool:
    if not (rec.left_eye.visible and rec.right_eye.visible):
        return True  # ME undefined without both gt centers; not counted
    err = evaluation.me((box[0], box[1]), center, rec.left_eye, rec.right_eye)
    return err <= evaluation.ME_THRESHOLD


def cmd_verify(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    model = mslstm.load_model(args.model)
    patch = (args.patch, args.patch)
    rows = []
    confusion = {eye: [0, 0, 0] for eye in EYES}  # tp, fp, fn
    tally = {eye: [0, 0, 0] for eye in EYES}      # miss, err, all
    scores = {eye: [] for eye in EYES}
    for entry in manifest.split("test"):
        clip = dataset.load_clip(entry.clip_dir, entry.label, entry.source_id)
        locator = pipeline.annotation_locator(clip)
        streams = pipeline.track_eyes(clip.frames, locator,
                                      track_thresh=args.track_thresh)
        verdicts = pipeline.verify_clip(clip, locator, model, patch,
                                        track_thresh=args.track_thresh)
        is_blink = entry.label == dataset.LABEL_BLINK
        for eye in EYES:
            v = verdicts[eye]
            rows.append([entry.source_id, eye, v.label,
                         repr(v.confidence), int(v.lost)])
            stream = streams[eye]
            if is_blink:
                tally[eye][2] += 1
                if stream.lost_from is not None:
                    tally[eye][0] += 1
                else:
                    good = all(_me_ok(stream.boxes[t],
                                      (rec.left_eye if eye == "left"
                                       else rec.right_eye), rec)
                               for t, rec in enumerate(clip.annotations)
                               if (rec.left_eye if eye == "left"
                                   else rec.right_eye).visible)
                    if not good:
                        tally[eye][1] += 1
            scores[eye].append((v.confidence, is_blink))
            predicted_blink = v.label == dataset.LABEL_BLINK and not v.lost
            if is_blink and predicted_blink:
                confusion[eye][0] += 1
            elif is_blink:
                confusion[eye][2] += 1
            elif predicted_blink:
                confusion[eye][1] += 1

    os.makedirs(args.out, exist_ok=True)
    pred_path = os.path.join(args.out, "predictions.csv")
    with open(pred_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["clip", "eye", "label", "confidence", "lost"])
        writer.writerows(rows)
    per_eye = {}
    for eye in EYES:
        tp, fp, fn = confusion[eye]
        recall, precision, f1 = evaluation.prf(
            evaluation.ConfusionCounts(tp, fp, fn))
        miss, errn, alln = tally[eye]
        fr_val = (evaluation.fr(evaluation.LocalizationTally(miss, errn, alln))
                  if alln else 0.0)
        per_eye[eye] = {"recall": recall, "precision": precision,
                        "f1": f1, "fr": fr_val}
    report = evaluation.EvalReport(per_eye=per_eye, seed=args.seed,
                                   config_hash=_config_hash(args),
                                   scores=scores["left"] + scores["right"])
    evaluation.emit_report(report, os.path.join(args.out, "report"))
    for eye in EYES:
        print(f"{eye}: " + " ".join(f"{k}={v:.4f}"
                                    for k, v in per_eye[eye].items()))
    return 0


def cmd_detect(args) -> int:
    clip = dataset.load_clip(args.frames, dataset.LABEL_NONBLINK, "stream")
    model = mslstm.load_model(args.model)
    events = pipeline.detect_stream(
        clip.frames, pipeline.annotation_locator(clip), model,
        window=args.window, stride=args.stride,
        conf_thresh=args.conf_thresh, iou_thresh=args.iou_thresh,
        track_thresh=args.track_thresh)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["eye", "start", "end", "confidence"])
        for ev in events:
            writer.writerow([ev.eye, ev.start, ev.end, repr(ev.confidence)])
    print(f"{len(events)} events -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    truth = {}
    manifest = dataset.load_manifest(args.manifest)
    for entry in manifest.entries:
        truth[entry.source_id] = entry.label == dataset.LABEL_BLINK
    confusion = {eye: [0, 0, 0] for eye in EYES}
    scores = []
    with open(args.predictions, newline="") as f:
        for row in csv.DictReader(f):
            eye = row["eye"]
            is_blink = truth[row["clip"]]
            predicted = row["label"] == dataset.LABEL_BLINK
            scores.append((float(row["confidence"]), is_blink))
            if is_blink and predicted:
                confusion[eye][0] += 1
            elif is_blink:
                confusion[eye][2] += 1
            elif predicted:
                confusion[eye][1] += 1
    per_eye = {}
    for eye in EYES:
        tp, fp, fn = confusion[eye]
        recall, precision, f1 = evaluation.prf(
            evaluation.ConfusionCounts(tp, fp, fn))
        per_eye[eye] = {"recall": recall, "precision": precision,
                        "f1": f1, "fr": 0.0}
    report = evaluation.EvalReport(per_eye=per_eye, seed=args.seed,
                                   config_hash=_config_hash(args),
                                   scores=scores)
    evaluation.emit_report(report, args.out)
    for eye in EYES:
        print(f"{eye}: " + " ".join(f"{k}={v:.4f}"
                                    for k, v in per_eye[eye].items()))
    return 0


def cmd_bench(args) -> int:
    model = mslstm.load_model(args.model) if args.model else mslstm.init_model(
        hidden=args.hidden, layers=args.layers, scales=args.scales,
        margin=args.margin, seed=args.seed)
    if args.manifest:
        manifest = dataset.load_manifest(args.manifest)
        clips = [dataset.load_clip(e.clip_dir, e.label, e.source_id)
                 for e in manifest.entries[:8]]
    else:
        clips = [dataset.synth_clip(args.seed + i, dataset.LABEL_NONBLINK, 10)
                 for i in range(8)]
    patch = (args.patch, args.patch)
    warmup = 50
    track_ms, feat_ms, infer_ms = [], [], []
    prev_hist = None
    window_steps = []
    frames_done = 0
    while frames_done < args.frames + warmup:
        for clip in clips:
            locator = pipeline.annotation_locator(clip)
            located = locator(clip.frames[0], 0)
            region = pipeline._region_for("left", located)
            state = tracker.kcf_init(clip.frames[0], region)
            for t in range(1, len(clip.frames)):
                t0 = time.perf_counter()
                state, result = tracker.kcf_update(state, clip.frames[t])
                t1 = time.perf_counter()
                box = result.region
                eye_patch = dataset.crop_eye(
                    clip.frames[t], dataset.EyeCenter(box[0], box[1]),
                    (int(round(box[2])), int(round(box[3]))))
                eye_patch = features.resize_patch(eye_patch, patch)
                hist = features.uniform_lbp(eye_patch)
                t2 = time.perf_counter()
                if prev_hist is not None:
                    step = np.concatenate([hist, hist - prev_hist])
                    window_steps.append(step)
                    if len(window_steps) > 9:
                        window_steps.pop(0)
                prev_hist = hist
                t3 = time.perf_counter()
                if len(window_steps) == 9:
                    mslstm.predict(model, np.stack(window_steps))
                t4 = time.perf_counter()
                frames_done += 1
                if frames_done > warmup:
                    track_ms.append((t1 - t0) * 1e3)
                    feat_ms.append((t2 - t1 + t3 - t2) * 1e3)
                    infer_ms.append((t4 - t3) * 1e3)
            if frames_done >= args.frames + warmup:
                break

    def stats(xs):
        xs = sorted(xs)
        return {"mean": statistics.fmean(xs), "median": xs[len(xs) // 2],
                "p95": xs[int(0.95 * (len(xs) - 1))]}

    table = {"tracking": stats(track_ms), "features": stats(feat_ms),
             "inference": stats(infer_ms)}
    total_median = sum(v["median"] for v in table.values())
    for stage, v in table.items():
        print(f"{stage:10s} mean={v['mean']:.3f}ms median={v['median']:.3f}ms "
              f"p95={v['p95']:.3f}ms")
    print(f"per-frame median total: {total_median:.3f}ms")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"stages": table, "median_total_ms": total_median,
                       "frames": len(track_ms),
                       "config_hash": _config_hash(args)}, f, indent=2)
            f.write("\n")
    return 0


# ---------------------------------------------------------------------------


def _add_model_flags(p):
    p.add_argument("--layers", type=int, default=2,
                   help="stacked LSTM layer count (default 2)")
    p.add_argument("--scales", type=int, default=2,
                   help="trailing hidden states fed to the head (default 2)")
    p.add_argument("--margin", type=int, default=4,
                   help="angular margin m (default 4)")
    p.add_argument("--hidden", type=int, default=64,
                   help="hidden units per layer (default 64)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blinkwild",
        description="Eyeblink detection: synth, polish, train, verify, "
                    "detect, eval, bench")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for all randomness (default 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--train-blink", type=int, default=100)
    p.add_argument("--train-nonblink", type=int, default=100)
    p.add_argument("--test-blink", type=int, default=40)
    p.add_argument("--test-nonblink", type=int, default=40)
    p.add_argument("--length", type=int, default=10,
                   help="frames per clip (default 10)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("polish", help="fix every clip to a target length")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-len", type=int, default=10,
                   help="output clip length (default 10; 13 supported)")
    p.set_defaults(func=cmd_polish)

    p = sub.add_parser("train", help="train the classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--loss", choices=["softmax", "asoftmax"],
                   default="asoftmax")
    p.add_argument("--patch", type=int, default=24,
                   help="LBP patch side (default 24)")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="per-clip verification on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--patch", type=int, default=24)
    p.add_argument("--track-thresh", type=float, default=0.25,
                   help="re-localization trigger score (default 0.25)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("detect", help="sliding-window detection on a stream")
    p.add_argument("--frames", required=True,
                   help="clip directory with frames and annotations")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output event CSV")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--conf-thresh", type=float, default=0.5)
    p.add_argument("--iou-thresh", type=float, default=0.33)
    p.add_argument("--track-thresh", type=float, default=0.25)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a predictions CSV against labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report path prefix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-stage latency")
    p.add_argument("--manifest", help="clips to replay (default: synthetic)")
    p.add_argument("--model", help="model file (default: fresh init)")
    p.add_argument("--frames", type=int, default=500,
                   help="timed frames after 50-frame warmup (default 500)")
    p.add_argument("--patch", type=int, default=24)
    p.add_argument("--out", help="optional JSON output")
    _add_model_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BlinkwildError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
