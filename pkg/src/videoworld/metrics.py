"""Evaluation harness: PSNR, SSIM, delta-PSNR, and Fréchet distance over a
pluggable video-feature extractor."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .data import VideoClip


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical inputs return +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    xs = np.arange(size) - half
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _local_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode convolution of a 2-D image."""
    size = kernel.size
    h, w = img.shape
    rows = np.empty((h, w - size + 1))
    for i, kv in enumerate(kernel):
        sl = img[:, i : w - size + 1 + i]
        rows = rows + kv * sl if i else kv * sl
    out = np.empty((h - size + 1, rows.shape[1]))
    for i, kv in enumerate(kernel):
        sl = rows[i : h - size + 1 + i]
        out = out + kv * sl if i else kv * sl
    return out


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    peak: float = 1.0,
    sigma: float = 1.5,
) -> float:
    """Mean local SSIM with a Gaussian window, averaged over channels and frames."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        planes_a, planes_b = a[None], b[None]
    elif a.ndim == 3:  # (H, W, C)
        planes_a = np.moveaxis(a, -1, 0)
        planes_b = np.moveaxis(b, -1, 0)
    elif a.ndim == 4:  # (T, H, W, C)
        planes_a = np.moveaxis(a, -1, 1).reshape(-1, a.shape[1], a.shape[2])
        planes_b = np.moveaxis(b, -1, 1).reshape(-1, b.shape[1], b.shape[2])
    else:
        raise ValueError(f"unsupported input rank {a.ndim}")
    if planes_a.shape[1] < window or planes_a.shape[2] < window:
        raise ValueError(f"images smaller than the {window}x{window} window")

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    kernel = _gaussian_kernel(window, sigma)
    values = []
    for pa, pb in zip(planes_a, planes_b):
        mu_a = _local_mean(pa, kernel)
        mu_b = _local_mean(pb, kernel)
        var_a = _local_mean(pa * pa, kernel) - mu_a * mu_a
        var_b = _local_mean(pb * pb, kernel) - mu_b * mu_b
        cov = _local_mean(pa * pb, kernel) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def delta_psnr_from_means(psnr_with_reference_actions: float, psnr_with_random_actions: float) -> float:
    """Controllability gap: mean PSNR under reference-trajectory actions minus random ones."""
    return psnr_with_reference_actions - psnr_with_random_actions


def delta_psnr(
    generated_ref_actions: list[np.ndarray],
    generated_random_actions: list[np.ndarray],
    references: list[np.ndarray],
) -> float:
    """Mean PSNR gap over aligned clip sets of generated frames."""
    if not (len(generated_ref_actions) == len(generated_random_actions) == len(references)):
        raise ValueError("clip sets must be aligned")
    gt = float(np.mean([psnr(g, r) for g, r in zip(generated_ref_actions, references)]))
    rand = float(np.mean([psnr(g, r) for g, r in zip(generated_random_actions, references)]))
    return delta_psnr_from_means(gt, rand)


def frechet_distance(
    stats1: tuple[np.ndarray, np.ndarray], stats2: tuple[np.ndarray, np.ndarray]
) -> float:
    """||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)) between two Gaussians.

    The trace of the matrix square root is evaluated through the eigenvalues of
    S1 @ S2; tiny negative or imaginary parts from roundoff are clipped.
    """
    mu1, cov1 = np.asarray(stats1[0], dtype=np.float64), np.asarray(stats1[1], dtype=np.float64)
    mu2, cov2 = np.asarray(stats2[0], dtype=np.float64), np.asarray(stats2[1], dtype=np.float64)
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise ValueError("dimension mismatch between the two statistics")
    if cov1.shape != (mu1.size, mu1.size):
        raise ValueError("covariance shape inconsistent with the mean")
    for cov in (cov1, cov2):
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise ValueError("covariance matrices must be symmetric")
    eig = np.linalg.eigvals(cov1 @ cov2)
    sqrt_eig = np.sqrt(np.clip(eig.real, 0.0, None))
    value = (
        float(np.sum((mu1 - mu2) ** 2))
        + float(np.trace(cov1) + np.trace(cov2))
        - 2.0 * float(np.sum(sqrt_eig))
    )
    return max(0.0, value)


def gaussian_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("need at least two feature vectors to fit a Gaussian")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    return mean, np.atleast_2d(cov)


class DownsampleFlattenExtractor:
    """Deterministic default feature extractor: per-frame grayscale block means.

    Not comparable to any published Fréchet video scores; it only supports
    relative comparisons made with this same extractor.
    """

    def __init__(self, grid: tuple[int, int] = (4, 6)):
        self.grid = grid
        self.name = f"downsample-flatten-{grid[0]}x{grid[1]}"

    def __call__(self, clip: VideoClip) -> np.ndarray:
        frames = clip.frames.mean(axis=-1)  # grayscale
        t, h, w = frames.shape
        gh, gw = self.grid
        if h % gh or w % gw:
            raise ValueError(f"frame size {h}x{w} not divisible by grid {gh}x{gw}")
        blocks = frames.reshape(t, gh, h // gh, gw, w // gw).mean(axis=(2, 4))
        return blocks.reshape(-1).astype(np.float64)


def fvd_eval(real_clips: list[VideoClip], generated_clips: list[VideoClip], extractor) -> float:
    """Fréchet distance between Gaussian fits of 10-frame clip features."""
    for name, clips in (("real", real_clips), ("generated", generated_clips)):
        if len(clips) < 2:
            raise ValueError(f"need at least two {name} clips (covariance undefined)")
        for clip in clips:
            if clip.num_frames != 10:
                raise ValueError(
                    f"{name} clip has {clip.num_frames} frames; the protocol fixes 10"
                )
    real = np.stack([extractor(c) for c in real_clips])
    gen = np.stack([extractor(c) for c in generated_clips])
    return frechet_distance(gaussian_stats(real), gaussian_stats(gen))


@dataclass(frozen=True)
class ProtocolResult:
    """Table row pair for one prompt-frame protocol; horizons index generated frames only."""

    prompt_frames: int
    psnr_by_horizon: dict[int, float]
    ssim_by_horizon: dict[int, float]
    psnr_random_by_horizon: dict[int, float]
    ssim_random_by_horizon: dict[int, float]
    delta_psnr_by_horizon: dict[int, float]
    fvd: float
    fvd_random: float


@dataclass(frozen=True)
class EvalReport:
    protocols: tuple[ProtocolResult, ...]
    horizons: tuple[int, ...]
    total_frames: int
    num_clips: int
    seed: int
    extractor: str
    prompt_frames_excluded_from_psnr: bool = True

    def to_json(self) -> str:
        payload = asdict(self)
        payload["protocols"] = [
            {
                **p,
                "psnr_by_horizon": {str(k): v for k, v in p["psnr_by_horizon"].items()},
                "ssim_by_horizon": {str(k): v for k, v in p["ssim_by_horizon"].items()},
                "psnr_random_by_horizon": {
                    str(k): v for k, v in p["psnr_random_by_horizon"].items()
                },
                "ssim_random_by_horizon": {
                    str(k): v for k, v in p["ssim_random_by_horizon"].items()
                },
                "delta_psnr_by_horizon": {
                    str(k): v for k, v in p["delta_psnr_by_horizon"].items()
                },
            }
            for p in payload["protocols"]
        ]
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"total_frames={self.total_frames}",
            f"num_clips={self.num_clips}",
            f"seed={self.seed}",
            f"extractor={self.extractor}",
            f"horizons={','.join(str(h) for h in self.horizons)}",
            f"prompt_frames_excluded_from_psnr={str(self.prompt_frames_excluded_from_psnr).lower()}",
        ]
        for p in self.protocols:
            tag = f"p{p.prompt_frames}"
            for h in self.horizons:
                lines.append(f"{tag}.psnr.h{h}={p.psnr_by_horizon[h]!r}")
                lines.append(f"{tag}.psnr_random.h{h}={p.psnr_random_by_horizon[h]!r}")
                lines.append(f"{tag}.ssim.h{h}={p.ssim_by_horizon[h]!r}")
                lines.append(f"{tag}.ssim_random.h{h}={p.ssim_random_by_horizon[h]!r}")
                lines.append(f"{tag}.delta_psnr.h{h}={p.delta_psnr_by_horizon[h]!r}")
            lines.append(f"{tag}.fvd={p.fvd!r}")
            lines.append(f"{tag}.fvd_random={p.fvd_random!r}")
        return "\n".join(lines) + "\n"

    def to_grid(self) -> str:
        """Human-readable grid shaped like the standard results table."""
        h_cols = "  ".join(f"{h}f" for h in self.horizons)
        out = [f"{'':>16}  PSNR({h_cols})  SSIM({h_cols})  FVD10"]
        for p in self.protocols:
            out.append(f"Prompt frames: {p.prompt_frames}")
            for label, ps, ss, fv in (
                ("ref action", p.psnr_by_horizon, p.ssim_by_horizon, p.fvd),
                ("random action", p.psnr_random_by_horizon, p.ssim_random_by_horizon, p.fvd_random),
            ):
                psnr_s = " ".join(f"{ps[h]:6.2f}" for h in self.horizons)
                ssim_s = " ".join(f"{ss[h]:5.3f}" for h in self.horizons)
                out.append(f"{label:>16}  {psnr_s}  {ssim_s}  {fv:10.2f}")
            delta = " ".join(f"{p.delta_psnr_by_horizon[h]:6.2f}" for h in self.horizons)
            out.append(f"{'delta PSNR':>16}  {delta}")
        return "\n".join(out)
