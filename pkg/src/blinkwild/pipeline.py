"""End-to-end detection: locate, track, featurize, verify, slide, suppress.

An EyeLocator supplies per-frame eye centers and a face box (in production
that would be a face-parsing engine; here an annotation-backed locator
stands in). KCF propagates each eye region frame to frame; when the
tracking score drops below a threshold the locator is re-invoked. Fixed
windows slide over untrimmed streams and the classifier's blink confidence
per window feeds greedy temporal non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import features, mslstm, tracker
from .dataset import AnnotationRecord, Clip, EyeCenter, eye_region
from .errors import NoVisibleEyeError

EYES = ("left", "right")
TRACK_THRESH = 0.25  # re-localization trigger on the KCF score

# locator contract: (frame, frame_index) -> (left, right, face_box) or None
EyeLocator = Callable[[np.ndarray, int],
                      Optional[tuple[EyeCenter, EyeCenter, tuple]]]


@dataclass
class TrackedStream:
    """Per-eye track over a frame sequence."""
    boxes: list  # (cx, cy, h, w) per frame, None once lost
    scores: list
    reloc_indices: list = field(default_factory=list)
    lost_from: int | None = None

    def box_at(self, t: int):
        return self.boxes[t]


@dataclass(frozen=True)
class BlinkEvent:
    start: int
    end: int  # inclusive
    confidence: float
    eye: str  # left | right


def annotation_locator(clip: Clip) -> EyeLocator:
    """Locator backed by the clip's own annotations.

    Eyes labelled (-1, -1) come back as invisible; frames beyond the
    annotated range report absence.
    """
    records: dict[int, AnnotationRecord] = {
        i: rec for i, rec in enumerate(clip.annotations)}

    def locate(frame: np.ndarray, index: int):
        rec = records.get(index)
        if rec is None:
            return None
        return rec.left_eye, rec.right_eye, rec.face_box

    return locate


def _region_for(eye_name: str, located) -> tuple | None:
    left, right, face_box = located
    center = left if eye_name == "left" else right
    if not center.visible:
        return None
    try:
        h, w = eye_region(left, right, face_box)
    except NoVisibleEyeError:
        return None
    return (center.x, center.y, float(h), float(w))


def _track_one_eye(frames, locator: EyeLocator, eye_name: str,
                   params: tracker.KcfParams,
                   track_thresh: float) -> TrackedStream:
    located = locator(frames[0], 0)
    region = _region_for(eye_name, located) if located else None
    if region is None:
        n = len(frames)
        return TrackedStream(boxes=[None] * n, scores=[0.0] * n, lost_from=0)

    stream = TrackedStream(boxes=[region], scores=[1.0])
    state = tracker.kcf_init(frames[0], region, params)
    for t in range(1, len(frames)):
        state, result = tracker.kcf_update(state, frames[t])
        score = result.score
        if score < track_thresh:
            stream.reloc_indices.append(t)
            located = locator(frames[t], t)
            fresh = _region_for(eye_name, located) if located else None
            if fresh is not None:
                state = tracker.kcf_init(frames[t], fresh, params)
                stream.boxes.append(fresh)
                stream.scores.append(score)
                continue
            # locator failed: keep the tracker's best guess
        stream.boxes.append(result.region)
        stream.scores.append(score)
    return stream


def track_eyes(frames, locator: EyeLocator,
               params: tracker.KcfParams | None = None,
               track_thresh: float = TRACK_THRESH
               ) -> dict[str, TrackedStream]:
    """Track both eyes independently over the frame list."""
    if not frames:
        raise ValueError("need at least one frame")
    params = params or tracker.KcfParams()
    return {eye: _track_one_eye(frames, locator, eye, params, track_thresh)
            for eye in EYES}


@dataclass(frozen=True)
class EyeVerdict:
    label: str  # blink | nonblink
    confidence: float
    lost: bool


def verify_clip(clip: Clip, locator: EyeLocator, model: mslstm.MsLstmModel,
                patch_size=features.DEFAULT_PATCH_SIZE,
                params: tracker.KcfParams | None = None,
                track_thresh: float = TRACK_THRESH) -> dict[str, EyeVerdict]:
    """Per-eye blink verdict for a fixed-length clip.

    A lost track yields (nonblink, 0.0, lost) so it can be counted as a
    false negative for blink-labelled clips.
    """
    streams = track_eyes(clip.frames, locator, params, track_thresh)
    out = {}
    for eye, stream in streams.items():
        if stream.lost_from is not None:
            out[eye] = EyeVerdict("nonblink", 0.0, True)
            continue
        seq = features.featurize_frames(clip.frames, stream.boxes, patch_size)
        label, conf = mslstm.predict(model, seq)
        name = "blink" if label == mslstm.CLASS_BLINK else "nonblink"
        out[eye] = EyeVerdict(name, conf, False)
    return out


def temporal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """IoU over inclusive frame intervals."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def temporal_nms(proposals: list[BlinkEvent],
                 iou_thresh: float = 0.33) -> list[BlinkEvent]:
    """Greedy suppression: take the most confident proposal, drop everything
    whose IoU with it strictly exceeds the threshold, repeat. Ties break to
    the earlier start, then left before right."""
    for p in proposals:
        if p.start > p.end:
            raise ValueError(f"malformed interval ({p.start}, {p.end})")
    pending = sorted(proposals,
                     key=lambda p: (-p.confidence, p.start, EYES.index(p.eye)))
    kept: list[BlinkEvent] = []
    while pending:
        best = pending.pop(0)
        kept.append(best)
        pending = [p for p in pending
                   if temporal_iou((best.start, best.end),
                                   (p.start, p.end)) <= iou_thresh]
    return kept


def detect_stream(frames, locator: EyeLocator, model: mslstm.MsLstmModel,
                  window: int = 10, stride: int = 1,
                  conf_thresh: float = 0.5, iou_thresh: float = 0.33,
                  patch_size=features.DEFAULT_PATCH_SIZE,
                  params: tracker.KcfParams | None = None,
                  track_thresh: float = TRACK_THRESH) -> list[BlinkEvent]:
    """Sliding-window blink detection over an untrimmed stream.

    One tracked stream per eye spans the whole video; each window position
    is featurized from the already-tracked boxes and classified. Windows at
    or above the confidence threshold become proposals, pruned per eye by
    temporal NMS. Events come back sorted by start frame.
    """
    n = len(frames)
    if n < window:
        raise ValueError(f"stream of {n} frames shorter than window {window}")
    streams = track_eyes(frames, locator, params, track_thresh)
    events: list[BlinkEvent] = []
    for eye, stream in streams.items():
        if stream.lost_from is not None:
            continue
        # per-frame histograms once; windows reuse them
        hists = []
        for frame, (cx, cy, h, w) in zip(frames, stream.boxes):
            patch = features.crop_eye(frame, EyeCenter(cx, cy),
                                      (int(round(h)), int(round(w))))
            patch = features.resize_patch(patch, patch_size)
            hists.append(features.uniform_lbp(patch))
        proposals = []
        for s in range(0, n - window + 1, stride):
            steps = np.empty((window - 1, features.FEATURE_DIM))
            for t in range(1, window):
                steps[t - 1, :features.N_BINS] = hists[s + t]
                steps[t - 1, features.N_BINS:] = hists[s + t] - hists[s + t - 1]
            _, conf = mslstm.predict(model, steps)
            if conf >= conf_thresh:
                proposals.append(BlinkEvent(s, s + window - 1, conf, eye))
        events.extend(temporal_nms(proposals, iou_thresh))
    return sorted(events, key=lambda e: (e.start, EYES.index(e.eye)))
