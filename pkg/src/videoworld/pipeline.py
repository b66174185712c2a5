"""Two-stage training orchestration, checkpointing, and the evaluation driver.

Stage 1 trains the tokenizer and the latent action model as independent jobs;
stage 2 freezes both and trains the dynamics model on (token, inferred action)
pairs. Every stochastic choice flows from the run seed, so a (seed, config,
dataset) triple fully determines all checkpoints and reports.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.metrics import adjusted_mutual_info_score

from . import checkpoint as ckpt
from .config import DatasetSpec, RunConfig
from .data import (
    VideoClip,
    list_clip_dirs,
    load_clip_dir,
    load_labels,
    preprocess_clip,
    write_synthetic_dataset,
)
from .dynamics import DynamicsConfig, DynamicsModel, dynamics_train_loss, rollout_batch
from .lam import LamConfig, LatentActionModel
from .metrics import (
    DownsampleFlattenExtractor,
    EvalReport,
    ProtocolResult,
    delta_psnr_from_means,
    fvd_eval,
    psnr,
    ssim,
)
from .seeding import derive_seed, make_rng, rng_from_jsonable, rng_state_to_jsonable, seed_torch
from .st_transformer import STBlockConfig
from .tokenizer import TokenizerConfig, VideoTokenizer


@dataclass
class TrainResult:
    checkpoint_path: Path
    losses: list[float]
    final_diagnostics: dict
    flops_estimate: float


def training_flops(model: torch.nn.Module, tokens_per_batch: int, steps: int) -> float:
    """Standard 6 * params * tokens transformer estimate, logged per run."""
    params = sum(p.numel() for p in model.parameters())
    return 6.0 * params * tokens_per_batch * steps


# --- dataset materialization -------------------------------------------------


def generate_dataset(run_cfg: RunConfig, out_dir: Path) -> tuple[Path, Path]:
    """Write train/eval synthetic splits under out_dir; eval clips are longer
    so rollouts can be scored over the full 10-frame protocol."""
    spec = run_cfg.dataset
    if spec.kind != "synthetic":
        raise ValueError("generate_dataset only applies to synthetic dataset specs")
    out_dir = Path(out_dir)
    train_dir = out_dir / "train"
    eval_dir = out_dir / "eval"
    write_synthetic_dataset(
        train_dir,
        spec.scene_config(num_frames=spec.num_frames),
        spec.num_clips,
        derive_seed(run_cfg.seed, "dataset-train"),
    )
    write_synthetic_dataset(
        eval_dir,
        spec.scene_config(num_frames=spec.eval_num_frames),
        spec.eval_clips,
        derive_seed(run_cfg.seed, "dataset-eval"),
    )
    return train_dir, eval_dir


def resolve_data_dirs(run_cfg: RunConfig, data_dir: Path | None) -> tuple[Path, Path]:
    if run_cfg.dataset.kind == "dir":
        root = Path(run_cfg.dataset.path)
    else:
        if data_dir is None:
            raise ValueError("data_dir required for synthetic datasets (run gen-data first)")
        root = Path(data_dir)
    return root / "train", root / "eval"


def load_training_frames(train_dir: Path, spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Tokenizer-resolution and LAM-resolution frame arrays (N, T, H, W, 3).

    Only frames and fps are read here; synthetic label files are invisible to
    every training code path.
    """
    clips = [load_clip_dir(p) for p in list_clip_dirs(train_dir)]
    if not clips:
        raise ValueError(f"no clips found under {train_dir}")
    tok, lam = [], []
    for clip in clips:
        tok_clip = preprocess_clip(
            clip, spec.frame_height, spec.frame_width, clip.fps, spec.num_frames
        )
        tok.append(tok_clip.frames)
        lam.append(
            preprocess_clip(
                clip, spec.lam_frame_height, spec.lam_frame_width, clip.fps, spec.num_frames
            ).frames
        )
    return np.stack(tok), np.stack(lam)


# --- stage 1 ------------------------------------------------------------------


def _save_vq_model(path: Path, model, kind: str, step: int, optimizer, rng, cfg) -> None:
    arrays = ckpt.model_arrays(model)
    arrays.update(ckpt.optimizer_arrays(optimizer))
    manifest = {
        "kind": kind,
        "step": step,
        "rng": rng_state_to_jsonable(rng),
        "config": dataclasses.asdict(cfg),
    }
    ckpt.save_archive(path, arrays, manifest)


def _restore_vq_model(path: Path, model, optimizer):
    arrays, manifest = ckpt.load_archive(path)
    ckpt.load_model_arrays(model, arrays)
    if optimizer is not None:
        ckpt.load_optimizer_arrays(optimizer, arrays)
    rng = rng_from_jsonable(manifest["rng"])
    return manifest["step"], rng, manifest


def _check_finite_loss(loss: torch.Tensor, kind: str, step: int) -> None:
    if not torch.isfinite(loss):
        raise RuntimeError(f"{kind} training diverged: non-finite loss at step {step}")


def _seed_codebook(model, data: torch.Tensor, rng: np.random.Generator, encode, kmeans_iters: int):
    """Seed the quantizer from a sample of clips large enough to cover the codebook."""
    per_clip = encode(data[:1]).reshape(-1, model.quantizer.code_dim).shape[0]
    need = max(1, -(-2 * model.quantizer.num_codes // per_clip))  # 2 vectors per code
    count = min(data.shape[0], max(8, need))
    pick = rng.choice(data.shape[0], size=count, replace=False)
    chunks = []
    with torch.no_grad():
        for start in range(0, count, 4):
            part = data[torch.from_numpy(np.ascontiguousarray(pick[start : start + 4]))]
            chunks.append(encode(part).reshape(-1, model.quantizer.code_dim))
    model.quantizer.init_from_batch(torch.cat(chunks), rng, kmeans_iters=kmeans_iters)


def train_tokenizer(
    run_cfg: RunConfig,
    frames: np.ndarray,
    out_path: Path,
    steps: int | None = None,
    resume_from: Path | None = None,
) -> TrainResult:
    cfg = run_cfg.tokenizer
    steps = run_cfg.train.tokenizer_steps if steps is None else steps
    batch = run_cfg.train.batch_size
    seed_torch(run_cfg.seed, "tokenizer-init")
    model = VideoTokenizer(cfg)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2)
    )
    start = 0
    rng = make_rng(run_cfg.seed, "tokenizer-train")
    if resume_from is not None:
        start, rng, _ = _restore_vq_model(resume_from, model, optimizer)

    data = torch.from_numpy(frames)
    losses: list[float] = []
    diag: dict = {}
    for step in range(start, steps):
        idx = rng.integers(0, data.shape[0], size=batch)
        clips = data[torch.from_numpy(idx)]
        if step < cfg.warmup_steps:
            recon = model.decode_latents(model.encode_features(clips))
            loss = ((clips - recon) ** 2).mean()
            diag = {"reconstruction": float(loss.detach()), "commitment": 0.0, "perplexity": 0.0}
            _check_finite_loss(loss, "tokenizer", step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            continue
        if not bool(model.quantizer.initialized):
            _seed_codebook(
                model, data, rng, model.encode_features, cfg.codebook_kmeans_iters
            )
        loss, diag, h, q = model.compute_loss(clips)
        _check_finite_loss(loss, "tokenizer", step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        model.quantizer.ema_update(h.detach(), q.indices, rng)
        losses.append(float(loss.detach()))

    _save_vq_model(out_path, model, "tokenizer", steps, optimizer, rng, cfg)
    tokens_per_batch = batch * frames.shape[1] * cfg.tokens_per_frame
    return TrainResult(Path(out_path), losses, diag, training_flops(model, tokens_per_batch, steps))


def train_lam(
    run_cfg: RunConfig,
    frames: np.ndarray,
    out_path: Path,
    steps: int | None = None,
    resume_from: Path | None = None,
) -> TrainResult:
    cfg = run_cfg.lam
    steps = run_cfg.train.lam_steps if steps is None else steps
    batch = run_cfg.train.batch_size
    seed_torch(run_cfg.seed, "lam-init")
    model = LatentActionModel(cfg)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2)
    )
    start = 0
    rng = make_rng(run_cfg.seed, "lam-train")
    if resume_from is not None:
        start, rng, _ = _restore_vq_model(resume_from, model, optimizer)

    data = torch.from_numpy(frames)
    losses: list[float] = []
    diag: dict = {}
    for step in range(start, steps):
        idx = rng.integers(0, data.shape[0], size=batch)
        clips = data[torch.from_numpy(idx)]
        if not bool(model.quantizer.initialized):
            _seed_codebook(
                model, data, rng,
                lambda x: model.encode_transitions(x)[0], cfg.codebook_kmeans_iters,
            )
        loss, diag, h, q = model.compute_loss(clips)
        _check_finite_loss(loss, "lam", step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        model.quantizer.ema_update(h.detach(), q.indices, rng)
        losses.append(float(loss.detach()))

    _save_vq_model(out_path, model, "lam", steps, optimizer, rng, cfg)
    tokens_per_batch = batch * frames.shape[1] * cfg.tokens_per_frame
    return TrainResult(Path(out_path), losses, diag, training_flops(model, tokens_per_batch, steps))


def train_stage1(run_cfg: RunConfig, data_dir: Path | None, out_dir: Path) -> dict[str, TrainResult]:
    train_dir, _ = resolve_data_dirs(run_cfg, data_dir)
    tok_frames, lam_frames = load_training_frames(train_dir, run_cfg.dataset)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {
        "tokenizer": train_tokenizer(run_cfg, tok_frames, out_dir / "tokenizer.ckpt"),
        "lam": train_lam(run_cfg, lam_frames, out_dir / "lam.ckpt"),
    }
    lam_model, _ = load_lam(out_dir / "lam.ckpt")
    np.save(out_dir / "action_codebook.npy", lam_model.action_codebook())
    return results


# --- stage 2 ------------------------------------------------------------------


def load_tokenizer(path: Path) -> tuple[VideoTokenizer, dict]:
    arrays, manifest = ckpt.load_archive(path)
    cfg = _tokenizer_config_from_dict(manifest["config"])
    model = VideoTokenizer(cfg)
    ckpt.load_model_arrays(model, arrays)
    model.eval()
    return model, manifest


def load_lam(path: Path) -> tuple[LatentActionModel, dict]:
    arrays, manifest = ckpt.load_archive(path)
    cfg = _lam_config_from_dict(manifest["config"])
    model = LatentActionModel(cfg)
    ckpt.load_model_arrays(model, arrays)
    model.eval()
    return model, manifest


def load_dynamics(path: Path) -> tuple[DynamicsModel, dict]:
    arrays, manifest = ckpt.load_archive(path)
    cfg = _dynamics_config_from_dict(manifest["config"])
    model = DynamicsModel(cfg)
    ckpt.load_model_arrays(model, arrays)
    model.eval()
    return model, manifest


def _st_config_from_dict(d: dict) -> STBlockConfig:
    return STBlockConfig(**d)


def _tokenizer_config_from_dict(d: dict) -> TokenizerConfig:
    d = dict(d)
    d["encoder"] = _st_config_from_dict(d["encoder"])
    d["decoder"] = _st_config_from_dict(d["decoder"])
    return TokenizerConfig(**d)


def _lam_config_from_dict(d: dict) -> LamConfig:
    d = dict(d)
    d["encoder"] = _st_config_from_dict(d["encoder"])
    d["decoder"] = _st_config_from_dict(d["decoder"])
    return LamConfig(**d)


def _dynamics_config_from_dict(d: dict) -> DynamicsConfig:
    d = dict(d)
    d["stack"] = _st_config_from_dict(d["stack"])
    return DynamicsConfig(**d)


def prepare_dynamics_data(
    tokenizer: VideoTokenizer,
    lam: LatentActionModel,
    tok_frames: np.ndarray,
    lam_frames: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Precompute (token grids, inferred actions) for every training clip."""
    tokens, actions = [], []
    for i in range(tok_frames.shape[0]):
        clip = VideoClip(tok_frames[i], fps=1.0)
        grid = tokenizer.encode_clip(clip)
        tokens.append(grid.reshape(grid.shape[0], -1))
        actions.append(lam.infer_actions(VideoClip(lam_frames[i], fps=1.0)))
    return np.stack(tokens).astype(np.int64), np.stack(actions).astype(np.int64)


def train_stage2(
    run_cfg: RunConfig,
    data_dir: Path | None,
    ckpt_dir: Path,
    steps: int | None = None,
    resume_from: Path | None = None,
) -> TrainResult:
    ckpt_dir = Path(ckpt_dir)
    tokenizer, _ = load_tokenizer(ckpt_dir / "tokenizer.ckpt")
    lam, _ = load_lam(ckpt_dir / "lam.ckpt")
    train_dir, _ = resolve_data_dirs(run_cfg, data_dir)
    tok_frames, lam_frames = load_training_frames(train_dir, run_cfg.dataset)
    with torch.no_grad():
        tokens_all, actions_all = prepare_dynamics_data(tokenizer, lam, tok_frames, lam_frames)

    cfg = run_cfg.dynamics
    steps = run_cfg.train.dynamics_steps if steps is None else steps
    batch = run_cfg.train.batch_size
    seed_torch(run_cfg.seed, "dynamics-init")
    model = DynamicsModel(cfg)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2)
    )
    start = 0
    rng = make_rng(run_cfg.seed, "dynamics-train")
    out_path = ckpt_dir / "dynamics.ckpt"
    if resume_from is not None:
        arrays, manifest = ckpt.load_archive(resume_from)
        ckpt.load_model_arrays(model, arrays)
        ckpt.load_optimizer_arrays(optimizer, arrays)
        start = manifest["step"]
        rng = rng_from_jsonable(manifest["rng"])

    tokens_t = torch.from_numpy(tokens_all)
    actions_t = torch.from_numpy(actions_all)
    losses: list[float] = []
    diag: dict = {}
    for step in range(start, steps):
        idx = torch.from_numpy(rng.integers(0, tokens_t.shape[0], size=batch))
        loss, diag = dynamics_train_loss(model, tokens_t[idx], actions_t[idx], rng)
        _check_finite_loss(loss, "dynamics", step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))

    arrays = ckpt.model_arrays(model)
    arrays.update(ckpt.optimizer_arrays(optimizer))
    manifest = {
        "kind": "dynamics",
        "step": steps,
        "rng": rng_state_to_jsonable(rng),
        "config": dataclasses.asdict(cfg),
    }
    ckpt.save_archive(out_path, arrays, manifest)
    tokens_per_batch = batch * tokens_all.shape[1] * cfg.tokens_per_frame
    return TrainResult(out_path, losses, diag, training_flops(model, tokens_per_batch, steps))


# --- evaluation ----------------------------------------------------------------


@dataclass
class ModelBundle:
    tokenizer: VideoTokenizer
    lam: LatentActionModel
    dynamics: DynamicsModel


def load_bundle(ckpt_dir: Path) -> ModelBundle:
    ckpt_dir = Path(ckpt_dir)
    for name in ("tokenizer.ckpt", "lam.ckpt", "dynamics.ckpt"):
        if not (ckpt_dir / name).exists():
            raise FileNotFoundError(f"missing checkpoint {ckpt_dir / name}")
    tokenizer, _ = load_tokenizer(ckpt_dir / "tokenizer.ckpt")
    lam, _ = load_lam(ckpt_dir / "lam.ckpt")
    dynamics, _ = load_dynamics(ckpt_dir / "dynamics.ckpt")
    return ModelBundle(tokenizer, lam, dynamics)


def load_eval_clips(eval_dir: Path, spec: DatasetSpec) -> tuple[list[VideoClip], list[VideoClip]]:
    clips = [load_clip_dir(p) for p in list_clip_dirs(eval_dir)]
    tok_clips = [
        preprocess_clip(c, spec.frame_height, spec.frame_width, c.fps, spec.eval_num_frames)
        for c in clips
    ]
    lam_clips = [
        preprocess_clip(
            c, spec.lam_frame_height, spec.lam_frame_width, c.fps, spec.eval_num_frames
        )
        for c in clips
    ]
    return tok_clips, lam_clips


def evaluate(run_cfg: RunConfig, data_dir: Path | None, ckpt_dir: Path) -> EvalReport:
    """Full protocol: reference-action vs random-action rollouts at every
    prompt protocol, PSNR/SSIM per horizon over generated frames only, and
    Fréchet scores over the 10-frame clips."""
    bundle = load_bundle(ckpt_dir)
    _, eval_dir = resolve_data_dirs(run_cfg, data_dir)
    spec = run_cfg.dataset
    total = run_cfg.eval.total_frames
    if spec.eval_num_frames != total:
        raise ValueError(
            f"eval clips have {spec.eval_num_frames} frames but the protocol needs {total}"
        )
    horizons = run_cfg.eval.horizons
    if max(horizons) + max(run_cfg.eval.prompt_protocols) > total:
        raise ValueError("largest horizon does not fit inside the clip protocol")

    tok_clips, lam_clips = load_eval_clips(eval_dir, spec)
    num_clips = len(tok_clips)
    if num_clips < 2:
        raise ValueError("need at least two eval clips")
    inferred = np.stack([bundle.lam.infer_actions(c) for c in lam_clips])  # (N, total-1)

    extractor = DownsampleFlattenExtractor()
    protocols = []
    for p in run_cfg.eval.prompt_protocols:
        gen = total - p
        prompts = [VideoClip(c.frames[:p], fps=c.fps) for c in tok_clips]
        prompt_actions = inferred[:, : p - 1] if p >= 2 else None
        ref_actions = inferred[:, p - 1 : total - 1]
        rand_rng = make_rng(run_cfg.seed, f"eval-random-actions-p{p}")
        rand_actions = rand_rng.integers(
            0, run_cfg.dynamics.num_actions, size=(num_clips, gen)
        ).astype(np.int64)

        ref_rolled = rollout_batch(
            prompts, ref_actions, bundle.tokenizer, bundle.dynamics, run_cfg.dynamics,
            make_rng(run_cfg.seed, f"eval-decode-ref-p{p}"), prompt_actions,
        )
        rand_rolled = rollout_batch(
            prompts, rand_actions, bundle.tokenizer, bundle.dynamics, run_cfg.dynamics,
            make_rng(run_cfg.seed, f"eval-decode-rand-p{p}"), prompt_actions,
        )

        psnr_h, ssim_h, psnr_rand_h, ssim_rand_h, delta_h = {}, {}, {}, {}, {}
        for h in horizons:
            ref_mean = float(np.mean([
                psnr(r.frames[p : p + h], c.frames[p : p + h])
                for r, c in zip(ref_rolled, tok_clips)
            ]))
            rand_mean = float(np.mean([
                psnr(r.frames[p : p + h], c.frames[p : p + h])
                for r, c in zip(rand_rolled, tok_clips)
            ]))
            psnr_h[h] = ref_mean
            psnr_rand_h[h] = rand_mean
            delta_h[h] = delta_psnr_from_means(ref_mean, rand_mean)
            ssim_h[h] = float(np.mean([
                ssim(r.frames[p : p + h], c.frames[p : p + h])
                for r, c in zip(ref_rolled, tok_clips)
            ]))
            ssim_rand_h[h] = float(np.mean([
                ssim(r.frames[p : p + h], c.frames[p : p + h])
                for r, c in zip(rand_rolled, tok_clips)
            ]))

        protocols.append(
            ProtocolResult(
                prompt_frames=p,
                psnr_by_horizon=psnr_h,
                ssim_by_horizon=ssim_h,
                psnr_random_by_horizon=psnr_rand_h,
                ssim_random_by_horizon=ssim_rand_h,
                delta_psnr_by_horizon=delta_h,
                fvd=fvd_eval(tok_clips, ref_rolled, extractor),
                fvd_random=fvd_eval(tok_clips, rand_rolled, extractor),
            )
        )

    return EvalReport(
        protocols=tuple(protocols),
        horizons=tuple(horizons),
        total_frames=total,
        num_clips=num_clips,
        seed=run_cfg.seed,
        extractor=extractor.name,
    )


def evaluate_action_discovery(
    lam: LatentActionModel, eval_dir: Path, spec: DatasetSpec
) -> float:
    """Adjusted mutual information between inferred latent actions and the
    held-out ground-truth labels. The only code path that reads label files."""
    inferred, labels = [], []
    for clip_dir in list_clip_dirs(eval_dir):
        clip = load_clip_dir(clip_dir)
        lam_clip = preprocess_clip(
            clip, spec.lam_frame_height, spec.lam_frame_width, clip.fps, clip.num_frames
        )
        inferred.append(lam.infer_actions(lam_clip))
        labels.append(load_labels(clip_dir))
    inferred_flat = np.concatenate(inferred)
    labels_flat = np.concatenate(labels)
    if inferred_flat.shape != labels_flat.shape:
        raise ValueError("label/action length mismatch")
    return float(adjusted_mutual_info_score(labels_flat, inferred_flat))


def write_report(report: EvalReport, out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / "report.txt"
    json_path = out_dir / "report.json"
    text_path.write_text(report.to_text())
    json_path.write_text(report.to_json() + "\n")
    return text_path, json_path
