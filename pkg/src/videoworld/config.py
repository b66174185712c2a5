"""Plaintext run configuration: flat `key = value` lines, explicit schema,
unknown keys rejected. One file drives data generation, both training stages,
evaluation, and the rollout server."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSceneConfig
from .dynamics import DynamicsConfig
from .lam import LamConfig
from .st_transformer import STBlockConfig
from .tokenizer import TokenizerConfig


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"  # "synthetic" | "dir"
    path: str = ""  # for kind == "dir"
    num_clips: int = 200
    eval_clips: int = 24
    num_frames: int = 8
    eval_num_frames: int = 10
    frame_height: int = 32  # tokenizer resolution
    frame_width: int = 48
    lam_frame_height: int = 16
    lam_frame_width: int = 24
    num_sprites: int = 2
    sprite_speed: int = 4
    action_set: tuple[str, ...] = ("up", "down", "left", "right", "stay")
    background_pulse_amplitude: float = 0.15

    def scene_config(self, num_frames: int | None = None, seed: int = 0) -> SyntheticSceneConfig:
        return SyntheticSceneConfig(
            frame_height=self.frame_height,
            frame_width=self.frame_width,
            num_frames=self.num_frames if num_frames is None else num_frames,
            num_sprites=self.num_sprites,
            action_set=self.action_set,
            sprite_speed=self.sprite_speed,
            background_pulse_amplitude=self.background_pulse_amplitude,
            seed=seed,
        )


@dataclass(frozen=True)
class TrainSpec:
    batch_size: int = 8
    tokenizer_steps: int = 3000
    lam_steps: int = 3000
    dynamics_steps: int = 3000
    log_every: int = 200


@dataclass(frozen=True)
class EvalSpec:
    prompt_protocols: tuple[int, ...] = (1, 4)
    horizons: tuple[int, ...] = (2, 4, 6)
    total_frames: int = 10


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    lam: LamConfig = field(default_factory=LamConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    train: TrainSpec = field(default_factory=TrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_str_tuple(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (section, field, caster); "" section = top level
_SCHEMA: dict[str, tuple[str, str, type | object]] = {
    "seed": ("", "seed", int),
    "checkpoint_dir": ("", "checkpoint_dir", str),
    "dataset.kind": ("dataset", "kind", str),
    "dataset.path": ("dataset", "path", str),
    "dataset.num_clips": ("dataset", "num_clips", int),
    "dataset.eval_clips": ("dataset", "eval_clips", int),
    "dataset.num_frames": ("dataset", "num_frames", int),
    "dataset.eval_num_frames": ("dataset", "eval_num_frames", int),
    "dataset.frame_height": ("dataset", "frame_height", int),
    "dataset.frame_width": ("dataset", "frame_width", int),
    "dataset.lam_frame_height": ("dataset", "lam_frame_height", int),
    "dataset.lam_frame_width": ("dataset", "lam_frame_width", int),
    "dataset.num_sprites": ("dataset", "num_sprites", int),
    "dataset.sprite_speed": ("dataset", "sprite_speed", int),
    "dataset.action_set": ("dataset", "action_set", _parse_str_tuple),
    "dataset.background_pulse_amplitude": ("dataset", "background_pulse_amplitude", float),
    "tokenizer.encoder_layers": ("tokenizer", "encoder_layers", int),
    "tokenizer.decoder_layers": ("tokenizer", "decoder_layers", int),
    "tokenizer.d_model": ("tokenizer", "d_model", int),
    "tokenizer.num_heads": ("tokenizer", "num_heads", int),
    "tokenizer.patch_size": ("tokenizer", "patch_size", int),
    "tokenizer.num_codes": ("tokenizer", "num_codes", int),
    "tokenizer.latent_dim": ("tokenizer", "latent_dim", int),
    "tokenizer.beta": ("tokenizer", "beta", float),
    "tokenizer.learning_rate": ("tokenizer", "learning_rate", float),
    "tokenizer.adam_beta1": ("tokenizer", "adam_beta1", float),
    "tokenizer.adam_beta2": ("tokenizer", "adam_beta2", float),
    "tokenizer.warmup_steps": ("tokenizer", "warmup_steps", int),
    "tokenizer.codebook_kmeans_iters": ("tokenizer", "codebook_kmeans_iters", int),
    "lam.codebook_kmeans_iters": ("lam", "codebook_kmeans_iters", int),
    "lam.encoder_layers": ("lam", "encoder_layers", int),
    "lam.decoder_layers": ("lam", "decoder_layers", int),
    "lam.d_model": ("lam", "d_model", int),
    "lam.num_heads": ("lam", "num_heads", int),
    "lam.patch_size": ("lam", "patch_size", int),
    "lam.num_actions": ("lam", "num_actions", int),
    "lam.latent_dim": ("lam", "latent_dim", int),
    "lam.beta": ("lam", "beta", float),
    "lam.learning_rate": ("lam", "learning_rate", float),
    "lam.adam_beta1": ("lam", "adam_beta1", float),
    "lam.adam_beta2": ("lam", "adam_beta2", float),
    "dynamics.num_layers": ("dynamics", "num_layers", int),
    "dynamics.d_model": ("dynamics", "d_model", int),
    "dynamics.num_heads": ("dynamics", "num_heads", int),
    "dynamics.decode_steps": ("dynamics", "decode_steps", int),
    "dynamics.temperature": ("dynamics", "temperature", float),
    "dynamics.learning_rate": ("dynamics", "learning_rate", float),
    "dynamics.adam_beta1": ("dynamics", "adam_beta1", float),
    "dynamics.adam_beta2": ("dynamics", "adam_beta2", float),
    "vq.decay": ("vq", "decay", float),
    "vq.epsilon": ("vq", "epsilon", float),
    "vq.reseed_interval": ("vq", "reseed_interval", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.tokenizer_steps": ("train", "tokenizer_steps", int),
    "train.lam_steps": ("train", "lam_steps", int),
    "train.dynamics_steps": ("train", "dynamics_steps", int),
    "train.log_every": ("train", "log_every", int),
    "eval.prompt_protocols": ("eval", "prompt_protocols", _parse_int_tuple),
    "eval.horizons": ("eval", "horizons", _parse_int_tuple),
    "eval.total_frames": ("eval", "total_frames", int),
}

_MODEL_DEFAULTS = {
    "tokenizer": dict(
        encoder_layers=2, decoder_layers=2, d_model=64, num_heads=4, patch_size=4,
        num_codes=64, latent_dim=8, beta=0.25, learning_rate=1e-4,
        adam_beta1=0.9, adam_beta2=0.9999, warmup_steps=0, codebook_kmeans_iters=0,
    ),
    "lam": dict(
        encoder_layers=2, decoder_layers=2, d_model=64, num_heads=4, patch_size=4,
        num_actions=12, latent_dim=8, beta=0.25, learning_rate=1e-5,
        adam_beta1=0.9, adam_beta2=0.9999, codebook_kmeans_iters=0,
    ),
    "dynamics": dict(
        num_layers=4, d_model=128, num_heads=4, decode_steps=25, temperature=1.0,
        learning_rate=1e-3, adam_beta1=0.9, adam_beta2=0.9999,
    ),
    "vq": dict(decay=0.99, epsilon=1e-5, reseed_interval=256),
}


def parse_kv_lines(text: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in fields:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = value.strip()
    return fields


def load_run_config(path: Path) -> RunConfig:
    return run_config_from_text(Path(path).read_text())


def run_config_from_text(text: str) -> RunConfig:
    raw = parse_kv_lines(text)
    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")

    sections: dict[str, dict] = {"": {}, "dataset": {}, "train": {}, "eval": {},
                                 "tokenizer": {}, "lam": {}, "dynamics": {}, "vq": {}}
    for key, value in raw.items():
        section, name, caster = _SCHEMA[key]
        try:
            sections[section][name] = caster(value)
        except ValueError as exc:
            raise ValueError(f"bad value for {key!r}: {exc}") from exc

    dataset = DatasetSpec(**sections["dataset"])
    train = TrainSpec(**sections["train"])
    eval_spec = EvalSpec(**sections["eval"])

    vq = dict(_MODEL_DEFAULTS["vq"], **sections["vq"])
    tok = dict(_MODEL_DEFAULTS["tokenizer"], **sections["tokenizer"])
    lam = dict(_MODEL_DEFAULTS["lam"], **sections["lam"])
    dyn = dict(_MODEL_DEFAULTS["dynamics"], **sections["dynamics"])

    max_t = max(dataset.num_frames, 2)
    tokenizer = TokenizerConfig(
        frame_height=dataset.frame_height,
        frame_width=dataset.frame_width,
        patch_size=tok["patch_size"],
        encoder=STBlockConfig(tok["encoder_layers"], tok["d_model"], tok["num_heads"]),
        decoder=STBlockConfig(tok["decoder_layers"], tok["d_model"], tok["num_heads"]),
        num_codes=tok["num_codes"],
        latent_dim=tok["latent_dim"],
        beta=tok["beta"],
        learning_rate=tok["learning_rate"],
        adam_beta1=tok["adam_beta1"],
        adam_beta2=tok["adam_beta2"],
        max_timesteps=max_t,
        ema_decay=vq["decay"],
        ema_epsilon=vq["epsilon"],
        reseed_interval=vq["reseed_interval"],
        warmup_steps=tok["warmup_steps"],
        codebook_kmeans_iters=tok["codebook_kmeans_iters"],
    )
    lam_cfg = LamConfig(
        frame_height=dataset.lam_frame_height,
        frame_width=dataset.lam_frame_width,
        patch_size=lam["patch_size"],
        encoder=STBlockConfig(lam["encoder_layers"], lam["d_model"], lam["num_heads"]),
        decoder=STBlockConfig(lam["decoder_layers"], lam["d_model"], lam["num_heads"]),
        num_actions=lam["num_actions"],
        latent_dim=lam["latent_dim"],
        beta=lam["beta"],
        learning_rate=lam["learning_rate"],
        adam_beta1=lam["adam_beta1"],
        adam_beta2=lam["adam_beta2"],
        max_timesteps=max_t,
        ema_decay=vq["decay"],
        ema_epsilon=vq["epsilon"],
        reseed_interval=vq["reseed_interval"],
        codebook_kmeans_iters=lam["codebook_kmeans_iters"],
    )
    dynamics = DynamicsConfig(
        stack=STBlockConfig(dyn["num_layers"], dyn["d_model"], dyn["num_heads"]),
        tokens_height=tokenizer.tokens_height,
        tokens_width=tokenizer.tokens_width,
        num_codes=tok["num_codes"],
        num_actions=lam["num_actions"],
        decode_steps=dyn["decode_steps"],
        temperature=dyn["temperature"],
        max_timesteps=max_t,
        learning_rate=dyn["learning_rate"],
        adam_beta1=dyn["adam_beta1"],
        adam_beta2=dyn["adam_beta2"],
    )
    return RunConfig(
        seed=sections[""].get("seed", 0),
        checkpoint_dir=sections[""].get("checkpoint_dir", "checkpoints"),
        dataset=dataset,
        tokenizer=tokenizer,
        lam=lam_cfg,
        dynamics=dynamics,
        train=train,
        eval=eval_spec,
    )
