"""Kernelized correlation filter tracking over grayscale patches.

Single-channel KCF with a Gaussian kernel: ridge regression over all cyclic
shifts of the target patch, solved in the Fourier domain. The region size is
fixed for the lifetime of a track; the peak of the real response map is
exposed as the tracking score so callers can trigger re-localization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import EyeCenter, crop_eye
from .errors import TrackLostError


@dataclass(frozen=True)
class KcfParams:
    lam: float = 1e-4              # ridge regularizer
    sigma_k: float = 0.2           # Gaussian kernel bandwidth
    padding: float = 2.5           # context around the target
    interp: float = 0.02           # template/alpha learning rate
    output_sigma_factor: float = 0.125


@dataclass
class KcfState:
    template: np.ndarray           # windowed, zero-mean training patch
    alpha_hat: np.ndarray          # dual coefficients, frequency domain
    region: tuple[float, float, float, float]  # cx, cy, h, w
    window: np.ndarray = field(repr=False)     # Hann window
    y_hat: np.ndarray = field(repr=False)      # DFT of target response
    params: KcfParams = field(default_factory=KcfParams)


@dataclass(frozen=True)
class TrackResult:
    region: tuple[float, float, float, float]
    score: float


def gaussian_correlation(x: np.ndarray, z: np.ndarray,
                         sigma_k: float) -> np.ndarray:
    """Gaussian kernel evaluated at every circular lag between x and z.

    k(tau) = exp(-(||x||^2 + ||z||^2 - 2 corr_xz(tau)) / (sigma^2 N)) with the
    inner expression clamped at zero; corr realized with one DFT/IDFT pair.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError("patch shapes differ")
    cross = np.fft.ifft2(np.fft.fft2(x) * np.conj(np.fft.fft2(z))).real
    d = (np.sum(x * x) + np.sum(z * z) - 2.0 * cross) / x.size
    return np.exp(-np.maximum(d, 0.0) / (sigma_k ** 2))


def _padded_size(region, padding) -> tuple[int, int]:
    _, _, h, w = region
    return max(4, int(round(h * padding))), max(4, int(round(w * padding)))


def _extract(frame: np.ndarray, region, size) -> np.ndarray:
    cx, cy = region[0], region[1]
    if (cx < 0 or cy < 0 or cx >= frame.shape[1] or cy >= frame.shape[0]):
        raise TrackLostError(f"region center {(cx, cy)} left the frame")
    patch = crop_eye(frame, EyeCenter(cx, cy), size).astype(np.float64)
    return patch / 255.0


def _preprocess(patch: np.ndarray, window: np.ndarray) -> np.ndarray:
    # unit variance keeps the kernel spectrum well above lambda, so the
    # self-response reproduces the target map almost exactly
    centered = patch - patch.mean()
    return centered / (centered.std() + 1e-12) * window


def _target_response(size: tuple[int, int], params: KcfParams) -> np.ndarray:
    """Gaussian response with peak wrapped to (0, 0)."""
    ph, pw = size
    sigma = np.sqrt(ph * pw) / params.padding * params.output_sigma_factor
    ys = (np.arange(ph) + ph // 2) % ph - ph // 2
    xs = (np.arange(pw) + pw // 2) % pw - pw // 2
    return np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma ** 2))


def _train(patch: np.ndarray, y_hat: np.ndarray,
           params: KcfParams) -> np.ndarray:
    k_xx = gaussian_correlation(patch, patch, params.sigma_k)
    return y_hat / (np.fft.fft2(k_xx) + params.lam)


def kcf_init(frame: np.ndarray, region: tuple[float, float, float, float],
             params: KcfParams | None = None) -> KcfState:
    """Learn the correlation filter for the padded patch around ``region``."""
    params = params or KcfParams()
    raw_h = int(round(region[2] * params.padding))
    raw_w = int(round(region[3] * params.padding))
    if raw_h * raw_w < 16:
        raise ValueError("padded region area below 16 px")
    size = _padded_size(region, params.padding)
    window = np.outer(np.hanning(size[0]), np.hanning(size[1]))
    y = _target_response(size, params)
    y_hat = np.fft.fft2(y)
    template = _preprocess(_extract(frame, region, size), window)
    alpha_hat = _train(template, y_hat, params)
    return KcfState(template=template, alpha_hat=alpha_hat,
                    region=tuple(float(v) for v in region),
                    window=window, y_hat=y_hat, params=params)


def _unwrap(idx: int, n: int) -> int:
    return idx - n if idx >= (n + 1) // 2 else idx


def kcf_update(state: KcfState,
               frame: np.ndarray) -> tuple[KcfState, TrackResult]:
    """Locate the target in ``frame`` and adapt the filter.

    The response map is evaluated at the previous region; the argmax
    displacement (circular shifts unwrapped to [-N/2, N/2)) moves the region,
    after which the filter is retrained there and blended with rate
    ``interp`` (interp=0 keeps the initial model unchanged).
    """
    p = state.params
    size = state.template.shape
    probe = _preprocess(_extract(frame, state.region, size), state.window)
    k_zx = gaussian_correlation(probe, state.template, p.sigma_k)
    response = np.fft.ifft2(np.fft.fft2(k_zx) * state.alpha_hat).real
    peak = np.unravel_index(int(np.argmax(response)), response.shape)
    dy = _unwrap(peak[0], size[0])
    dx = _unwrap(peak[1], size[1])
    score = float(response[peak])

    cx, cy, h, w = state.region
    new_region = (cx + dx, cy + dy, h, w)
    new_state = replace(state, region=new_region)
    if p.interp > 0.0:
        fresh = _preprocess(_extract(frame, new_region, size), state.window)
        template = (1 - p.interp) * state.template + p.interp * fresh
        alpha_hat = ((1 - p.interp) * state.alpha_hat
                     + p.interp * _train(fresh, state.y_hat, p))
        new_state = replace(new_state, template=template, alpha_hat=alpha_hat)
    return new_state, TrackResult(region=new_region, score=score)
