"""Synthetic action-labeled video generation, real-clip ingestion, and preprocessing.

Synthetic scenes are moving high-contrast sprites over a low-frequency textured
background whose brightness pulses sinusoidally. Every inter-frame transition is
driven by exactly one named motion primitive; the label sequence is written next
to the frames but is only ever read by evaluation code.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .seeding import derive_seed

# name -> (dy, dx) unit step, scaled by sprite_speed
MOTION_PRIMITIVES = {
    "up": (-1, 0),
    "down": (1, 0),
    "left": (0, -1),
    "right": (0, 1),
    "stay": (0, 0),
}

_SPRITE_SHAPES = ("square", "disc", "diamond")

# fixed vivid palette so sprites look like a small consistent tool set
_SPRITE_COLORS = (
    (0.95, 0.20, 0.15),
    (0.20, 0.90, 0.25),
    (0.95, 0.85, 0.10),
    (0.15, 0.40, 0.95),
    (0.90, 0.15, 0.85),
)


@dataclass(frozen=True)
class VideoClip:
    """A length-T sequence of HxWx3 frames, values in [0, 1]."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        frames = np.ascontiguousarray(np.asarray(self.frames, dtype=np.float32))
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"frames must have shape (T, H, W, 3), got {frames.shape}")
        if frames.shape[0] < 1:
            raise ValueError("a clip needs at least one frame")
        if not np.isfinite(frames).all():
            raise ValueError("frames contain non-finite values")
        lo, hi = float(frames.min()), float(frames.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"frame values must lie in [0, 1], got [{lo}, {hi}]")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class SyntheticSceneConfig:
    frame_height: int = 32
    frame_width: int = 48
    num_frames: int = 8
    num_sprites: int = 2
    action_set: tuple[str, ...] = ("up", "down", "left", "right", "stay")
    sprite_speed: int = 4
    background_pulse_amplitude: float = 0.15
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "action_set", tuple(self.action_set))
        if self.num_sprites < 1:
            raise ValueError("num_sprites must be >= 1")
        if self.sprite_speed < 1:
            raise ValueError("sprite_speed must be >= 1")
        if not self.action_set:
            raise ValueError("action_set must be non-empty")
        unknown = [a for a in self.action_set if a not in MOTION_PRIMITIVES]
        if unknown:
            raise ValueError(f"unknown motion primitives: {unknown}")
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if not 0.0 <= self.background_pulse_amplitude <= 1.0:
            raise ValueError("background_pulse_amplitude must lie in [0, 1]")
        if self.frame_height < 16 or self.frame_width < 16:
            raise ValueError("frames must be at least 16x16 pixels")


@dataclass(frozen=True)
class _Sprite:
    shape: str
    radius: int
    color: np.ndarray  # (3,)
    start: tuple[int, int]  # (y, x)


def _scene_state(cfg: SyntheticSceneConfig):
    """Draw all scene randomness in a fixed order; shared by render and replay."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    h, w = cfg.frame_height, cfg.frame_width

    freq = rng.integers(1, 3, size=2)
    phase = rng.uniform(0.0, 1.0, size=2)
    chan_offset = rng.uniform(-0.05, 0.05, size=3)
    pulse_phase = rng.uniform(0.0, 2.0 * np.pi)

    ys = np.arange(h)[:, None] / h
    xs = np.arange(w)[None, :] / w
    base = 0.35 + 0.12 * np.sin(2 * np.pi * (freq[1] * xs + phase[0])) * np.cos(
        2 * np.pi * (freq[0] * ys + phase[1])
    )
    base = base[:, :, None] + chan_offset[None, None, :]  # (H, W, 3) in ~[0.18, 0.52]

    r_lo = max(3, min(h, w) // 10)
    r_hi = max(r_lo + 1, min(h, w) // 8)
    sprites = []
    for _ in range(cfg.num_sprites):
        shape = _SPRITE_SHAPES[int(rng.integers(0, len(_SPRITE_SHAPES)))]
        radius = int(rng.integers(r_lo, r_hi + 1))
        color = np.array(_SPRITE_COLORS[int(rng.integers(0, len(_SPRITE_COLORS)))])
        margin = radius + cfg.sprite_speed
        y0 = int(rng.integers(margin, max(margin + 1, h - margin)))
        x0 = int(rng.integers(margin, max(margin + 1, w - margin)))
        sprites.append(_Sprite(shape, radius, color.astype(np.float32), (y0, x0)))

    return {
        "base": base.astype(np.float32),
        "pulse_phase": float(pulse_phase),
        "sprites": sprites,
    }, rng


def _sprite_mask(shape: str, radius: int) -> np.ndarray:
    d = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    if shape == "square":
        return np.ones_like(dy, dtype=bool)
    if shape == "disc":
        return dy * dy + dx * dx <= radius * radius
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= radius
    raise ValueError(f"unknown sprite shape {shape!r}")


def _paint(frame: np.ndarray, sprite: _Sprite, pos: tuple[int, int]) -> None:
    mask = _sprite_mask(sprite.shape, sprite.radius)
    y, x = pos
    r = sprite.radius
    frame[y - r : y + r + 1, x - r : x + r + 1][mask] = sprite.color


def _pulse_factor(cfg: SyntheticSceneConfig, phase: float, t: int) -> float:
    return 1.0 + cfg.background_pulse_amplitude * np.sin(
        2.0 * np.pi * t / cfg.num_frames + phase
    )


def _step_position(
    pos: tuple[int, int], action: str, speed: int, radius: int, h: int, w: int
) -> tuple[int, int]:
    dy, dx = MOTION_PRIMITIVES[action]
    y = int(np.clip(pos[0] + dy * speed, radius, h - 1 - radius))
    x = int(np.clip(pos[1] + dx * speed, radius, w - 1 - radius))
    return (y, x)


def simulate_sprite_tracks(cfg: SyntheticSceneConfig, labels: np.ndarray) -> np.ndarray:
    """Replay sprite centers under a label sequence. Returns (num_sprites, T, 2) as (y, x).

    Border clamping matches the renderer, so this is the round-trip oracle for
    label-decoding tests.
    """
    labels = np.asarray(labels, dtype=np.int64)
    state, _ = _scene_state(cfg)
    tracks = np.zeros((cfg.num_sprites, len(labels) + 1, 2), dtype=np.float64)
    for k, sprite in enumerate(state["sprites"]):
        pos = sprite.start
        tracks[k, 0] = pos
        for i, lab in enumerate(labels):
            pos = _step_position(
                pos,
                cfg.action_set[int(lab)],
                cfg.sprite_speed,
                sprite.radius,
                cfg.frame_height,
                cfg.frame_width,
            )
            tracks[k, i + 1] = pos
    return tracks


def render_background(cfg: SyntheticSceneConfig) -> np.ndarray:
    """Background-only frames (T, H, W, 3); useful as a sprite-extraction oracle."""
    state, _ = _scene_state(cfg)
    frames = np.empty(
        (cfg.num_frames, cfg.frame_height, cfg.frame_width, 3), dtype=np.float32
    )
    for t in range(cfg.num_frames):
        frames[t] = np.clip(state["base"] * _pulse_factor(cfg, state["pulse_phase"], t), 0.0, 1.0)
    return frames


def generate_synthetic_clip(cfg: SyntheticSceneConfig) -> tuple[VideoClip, np.ndarray]:
    """Deterministically render a clip and its per-transition action labels.

    Labels have length T-1; label i drives the transition from frame i to
    frame i+1. Sprites whose move would leave the frame are clamped at the
    border but the transition keeps the attempted label.
    """
    state, rng = _scene_state(cfg)
    labels = rng.integers(0, len(cfg.action_set), size=cfg.num_frames - 1).astype(np.int64)

    positions = [s.start for s in state["sprites"]]
    frames = np.empty(
        (cfg.num_frames, cfg.frame_height, cfg.frame_width, 3), dtype=np.float32
    )
    for t in range(cfg.num_frames):
        frame = np.clip(
            state["base"] * _pulse_factor(cfg, state["pulse_phase"], t), 0.0, 1.0
        ).copy()
        for sprite, pos in zip(state["sprites"], positions):
            _paint(frame, sprite, pos)
        frames[t] = frame
        if t < cfg.num_frames - 1:
            action = cfg.action_set[int(labels[t])]
            positions = [
                _step_position(
                    pos, action, cfg.sprite_speed, s.radius, cfg.frame_height, cfg.frame_width
                )
                for s, pos in zip(state["sprites"], positions)
            ]
    return VideoClip(frames, fps=1.0), labels


def preprocess_clip(
    raw: VideoClip,
    target_h: int,
    target_w: int,
    sample_fps: float,
    num_frames: int,
    crop_hw: tuple[int, int] | None = None,
) -> VideoClip:
    """Subsample to sample_fps, optionally center-crop, bilinearly resize.

    Subsampling keeps every floor(raw.fps / sample_fps)-th frame starting at
    index 0; the crop window for a (crop_h, crop_w) crop is anchored at
    ((H - crop_h) // 2, (W - crop_w) // 2). 1280x720 sources use crop_hw of
    (600, 900) to strip borders and overlays.
    """
    if raw.fps < sample_fps:
        raise ValueError(f"source fps {raw.fps} below sampling rate {sample_fps}")
    stride = int(raw.fps // sample_fps)
    frames = raw.frames[::stride]
    if frames.shape[0] < num_frames:
        raise ValueError(
            f"clip too short: {frames.shape[0]} frames after subsampling, "
            f"need {num_frames}"
        )
    frames = frames[:num_frames]

    if crop_hw is not None:
        crop_h, crop_w = crop_hw
        h, w = frames.shape[1], frames.shape[2]
        if h < crop_h or w < crop_w:
            raise ValueError(f"source {h}x{w} smaller than crop {crop_h}x{crop_w}")
        y0 = (h - crop_h) // 2
        x0 = (w - crop_w) // 2
        frames = frames[:, y0 : y0 + crop_h, x0 : x0 + crop_w]

    if frames.shape[1] != target_h or frames.shape[2] != target_w:
        t = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2)
        t = torch.nn.functional.interpolate(
            t, size=(target_h, target_w), mode="bilinear", align_corners=False, antialias=True
        )
        frames = t.permute(0, 2, 3, 1).numpy()
    return VideoClip(np.clip(frames, 0.0, 1.0), fps=sample_fps)


def crop_window(src_h: int, src_w: int, crop_h: int, crop_w: int) -> tuple[int, int]:
    """Top-left (y, x) of the centered crop used by preprocess_clip."""
    return (src_h - crop_h) // 2, (src_w - crop_w) // 2


# --- dataset directory layout ---------------------------------------------
# root/
#   clip_00000/
#     frame_00000.png ...
#     meta            ("fps=<int>")
#     labels.txt      (synthetic only; never read by training code)


def save_clip_dir(path: Path, clip: VideoClip, labels: np.ndarray | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    pixels = np.round(clip.frames * 255.0).astype(np.uint8)
    for t in range(clip.num_frames):
        Image.fromarray(pixels[t]).save(path / f"frame_{t:05d}.png")
    (path / "meta").write_text(f"fps={int(round(clip.fps))}\n")
    if labels is not None:
        (path / "labels.txt").write_text(" ".join(str(int(v)) for v in labels) + "\n")


def load_clip_dir(path: Path) -> VideoClip:
    path = Path(path)
    frame_paths = sorted(path.glob("frame_*.png"))
    if not frame_paths:
        raise ValueError(f"no frames found in {path}")
    frames = np.stack(
        [np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0 for p in frame_paths]
    )
    meta = (path / "meta").read_text().strip()
    if not meta.startswith("fps="):
        raise ValueError(f"malformed meta file in {path}: {meta!r}")
    return VideoClip(frames, fps=float(int(meta[len("fps=") :])))


def load_labels(path: Path) -> np.ndarray:
    text = (Path(path) / "labels.txt").read_text().split()
    return np.array([int(v) for v in text], dtype=np.int64)


def list_clip_dirs(root: Path) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if p.is_dir() and (p / "meta").exists())


def write_synthetic_dataset(
    root: Path, base_cfg: SyntheticSceneConfig, num_clips: int, seed: int
) -> list[Path]:
    """Materialize num_clips scene variations (one sub-seed per clip) under root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_scene_config(root / "scene.cfg", base_cfg)
    paths = []
    for i in range(num_clips):
        cfg = replace(base_cfg, seed=derive_seed(seed, f"clip-{i}"))
        clip, labels = generate_synthetic_clip(cfg)
        clip_dir = root / f"clip_{i:05d}"
        save_clip_dir(clip_dir, clip, labels)
        paths.append(clip_dir)
    return paths


def save_scene_config(path: Path, cfg: SyntheticSceneConfig) -> None:
    lines = [
        f"frame_height={cfg.frame_height}",
        f"frame_width={cfg.frame_width}",
        f"num_frames={cfg.num_frames}",
        f"num_sprites={cfg.num_sprites}",
        f"action_set={','.join(cfg.action_set)}",
        f"sprite_speed={cfg.sprite_speed}",
        f"background_pulse_amplitude={cfg.background_pulse_amplitude}",
        f"seed={cfg.seed}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene_config(path: Path) -> SyntheticSceneConfig:
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    known = {
        "frame_height": int,
        "frame_width": int,
        "num_frames": int,
        "num_sprites": int,
        "sprite_speed": int,
        "background_pulse_amplitude": float,
        "seed": int,
    }
    unknown = set(fields) - set(known) - {"action_set"}
    if unknown:
        raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
    kwargs = {k: cast(fields[k]) for k, cast in known.items() if k in fields}
    if "action_set" in fields:
        kwargs["action_set"] = tuple(v for v in fields["action_set"].split(",") if v)
    return SyntheticSceneConfig(**kwargs)
