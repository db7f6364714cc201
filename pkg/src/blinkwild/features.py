"""Uniform-LBP appearance and LBP-difference motion features.

Per frame, a 59-bin uniform local binary pattern histogram describes the
local eye patch; the element-wise difference between consecutive histograms
encodes motion. A clip of N frames yields N-1 steps of 118 values each
(appearance in columns 0..58, motion in columns 59..117).
"""

from __future__ import annotations

import struct

import numpy as np

from .dataset import Clip, EyeCenter, crop_eye
from .errors import UndefinedCorrelationError

N_BINS = 59  # 58 uniform 8-bit patterns + 1 catch-all
FEATURE_DIM = 2 * N_BINS
DEFAULT_PATCH_SIZE = (24, 24)

# circular neighbour order; consecutive entries are adjacent on the ring
_NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, 1),
                     (1, 1), (1, 0), (1, -1), (0, -1)]
_DIAG = 1.0 / np.sqrt(2.0)
# same ring sampled on the radius-1 circle (diagonals interpolated)
_CIRCLE_OFFSETS = [(-_DIAG, -_DIAG), (-1.0, 0.0), (-_DIAG, _DIAG), (0.0, 1.0),
                   (_DIAG, _DIAG), (1.0, 0.0), (_DIAG, -_DIAG), (0.0, -1.0)]


def _transitions(code: int) -> int:
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


def _build_lut() -> np.ndarray:
    lut = np.full(256, N_BINS - 1, dtype=np.int64)
    nxt = 0
    for code in range(256):
        if _transitions(code) <= 2:
            lut[code] = nxt
            nxt += 1
    assert nxt == N_BINS - 1
    return lut


UNIFORM_LUT = _build_lut()


def uniform_count() -> int:
    """Number of 8-bit codes with at most 2 circular transitions."""
    return int(np.sum(UNIFORM_LUT != N_BINS - 1))


def _sample_ring(patch: np.ndarray, sampling: str) -> np.ndarray:
    """Neighbour values per interior pixel, shape (8, H-2, W-2)."""
    inner = (slice(1, -1), slice(1, -1))
    if sampling == "nearest":
        return np.stack([patch[1 + dy:patch.shape[0] - 1 + dy,
                               1 + dx:patch.shape[1] - 1 + dx]
                         for dy, dx in _NEIGHBOR_OFFSETS])
    if sampling == "bilinear":
        planes = []
        for dy, dx in _CIRCLE_OFFSETS:
            iy, ix = int(np.floor(dy)), int(np.floor(dx))
            wy, wx = dy - iy, dx - ix

            def shifted(oy, ox):
                return patch[1 + oy:patch.shape[0] - 1 + oy,
                             1 + ox:patch.shape[1] - 1 + ox]

            plane = np.zeros((patch.shape[0] - 2, patch.shape[1] - 2))
            for oy, ky in ((iy, 1 - wy), (iy + 1, wy)):
                for ox, kx in ((ix, 1 - wx), (ix + 1, wx)):
                    if ky * kx > 0.0:
                        plane += ky * kx * shifted(oy, ox)
            planes.append(plane)
        return np.stack(planes)
    raise ValueError(f"unknown sampling {sampling!r}")


def uniform_lbp(patch: np.ndarray, sampling: str = "nearest") -> np.ndarray:
    """L1-normalized 59-bin uniform LBP histogram of a grayscale patch.

    Each pixel with a full 8-neighbourhood produces one code (bit set when
    the neighbour value is >= the center). ``nearest`` samples the 3x3 ring
    directly, which makes the histogram exactly invariant under any strictly
    monotone intensity remapping; ``bilinear`` samples the radius-1 circle
    with interpolated diagonals (invariance then holds only approximately).
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2 or patch.shape[0] < 3 or patch.shape[1] < 3:
        raise ValueError("patch must be at least 3x3")
    center = patch[1:-1, 1:-1]
    ring = _sample_ring(patch, sampling)
    weights = (1 << np.arange(8, dtype=np.int64)).reshape(8, 1, 1)
    codes = np.sum((ring >= center).astype(np.int64) * weights, axis=0)
    bins = UNIFORM_LUT[codes]
    hist = np.bincount(bins.ravel(), minlength=N_BINS).astype(np.float64)
    return hist / hist.sum()


def motion_feature(curr: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """Element-wise difference of two consecutive appearance histograms."""
    curr = np.asarray(curr, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    if curr.shape != prev.shape:
        raise ValueError("histogram shapes differ")
    return curr - prev


def resize_patch(patch: np.ndarray, out: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with corner-aligned sample grids."""
    h_out, w_out = int(out[0]), int(out[1])
    if h_out < 1 or w_out < 1:
        raise ValueError("output size must be positive")
    patch = np.asarray(patch, dtype=np.float64)
    if patch.size == 0:
        raise ValueError("empty patch")
    h_in, w_in = patch.shape
    ys = (np.linspace(0.0, h_in - 1.0, h_out) if h_out > 1
          else np.zeros(1))
    xs = (np.linspace(0.0, w_in - 1.0, w_out) if w_out > 1
          else np.zeros(1))
    y0 = np.clip(np.floor(ys).astype(int), 0, h_in - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w_in - 1)
    y1 = np.minimum(y0 + 1, h_in - 1)
    x1 = np.minimum(x0 + 1, w_in - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = patch[np.ix_(y0, x0)] * (1 - wx) + patch[np.ix_(y0, x1)] * wx
    bot = patch[np.ix_(y1, x0)] * (1 - wx) + patch[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def featurize_frames(frames: list[np.ndarray],
                     regions: list[tuple[float, float, float, float]],
                     patch_size: tuple[int, int] = DEFAULT_PATCH_SIZE,
                     sampling: str = "nearest") -> np.ndarray:
    """Feature sequence from per-frame eye regions (cx, cy, h, w).

    Returns an array of shape (len(frames) - 1, 118): step t carries the
    appearance histogram of frame t+1 and the histogram difference between
    frames t+1 and t.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    if len(regions) != len(frames):
        raise ValueError("one region per frame required")
    hists = []
    for frame, (cx, cy, h, w) in zip(frames, regions):
        patch = crop_eye(frame, EyeCenter(cx, cy), (int(round(h)), int(round(w))))
        patch = resize_patch(patch, patch_size)
        hists.append(uniform_lbp(patch, sampling=sampling))
    steps = np.empty((len(frames) - 1, FEATURE_DIM))
    for t in range(1, len(frames)):
        steps[t - 1, :N_BINS] = hists[t]
        steps[t - 1, N_BINS:] = motion_feature(hists[t], hists[t - 1])
    return steps


def featurize_clip(clip: Clip, regions, patch_size=DEFAULT_PATCH_SIZE,
                   sampling: str = "nearest") -> np.ndarray:
    return featurize_frames(clip.frames, regions, patch_size, sampling)


def feature_correlation(fc: np.ndarray, fn: np.ndarray) -> float:
    """Uncentered correlation coefficient between two feature vectors."""
    fc = np.asarray(fc, dtype=np.float64).ravel()
    fn = np.asarray(fn, dtype=np.float64).ravel()
    if fc.shape != fn.shape:
        raise ValueError("vectors must have equal length")
    nc, nn = np.linalg.norm(fc), np.linalg.norm(fn)
    if nc == 0.0 or nn == 0.0:
        raise UndefinedCorrelationError("correlation of zero vector")
    return float(np.dot(fc, fn) / (nc * nn))


# ---------------------------------------------------------------------------
# binary feature dump: u32 step_count, u32 dim, then row-major float32


def write_features(path: str, steps: np.ndarray) -> None:
    steps = np.ascontiguousarray(steps, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(struct.pack("<II", steps.shape[0], steps.shape[1]))
        f.write(steps.astype("<f4").tobytes())


def read_features(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        count, dim = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * count * dim), dtype="<f4")
    return data.reshape(count, dim).astype(np.float64)
