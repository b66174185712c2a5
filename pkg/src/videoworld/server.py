"""Interactive rollout service: sessions hold a token/frame history and advance
one latent action at a time. Steps within a session are serialized; sessions
are independent. Frames travel as base64 PNG at the tokenizer resolution."""

from __future__ import annotations

import base64
import io
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel

from .data import VideoClip, preprocess_clip
from .dynamics import iterative_decode
from .pipeline import ModelBundle


def encode_frame_png(frame: np.ndarray) -> str:
    img = Image.fromarray(np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def decode_frame_png(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


class CreateSessionRequest(BaseModel):
    prompt_frames: list[str]
    seed: int = 0


class StepRequest(BaseModel):
    action_id: int


@dataclass
class Session:
    session_id: str
    seed: int
    prompt_frames: int
    rng: np.random.Generator
    tokens: np.ndarray  # (t, S)
    frames: list[np.ndarray]
    cond_actions: list[int]  # transitions inside the prompt + chosen steps
    actions: list[int] = field(default_factory=list)  # chosen steps only
    lock: threading.Lock = field(default_factory=threading.Lock)


def create_app(bundle: ModelBundle) -> FastAPI:
    app = FastAPI(title="videoworld rollout service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    counter = {"next": 1}

    tok_cfg = bundle.tokenizer.cfg
    dyn_cfg = bundle.dynamics.cfg
    lam_cfg = bundle.lam.cfg

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session

    @app.get("/actions")
    def list_actions():
        return {
            "num_actions": dyn_cfg.num_actions,
            "actions": list(range(dyn_cfg.num_actions)),
        }

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest):
        if not request.prompt_frames:
            raise HTTPException(status_code=400, detail="at least one prompt frame required")
        frames = []
        for i, payload in enumerate(request.prompt_frames):
            try:
                frame = decode_frame_png(payload)
            except Exception as exc:
                raise HTTPException(status_code=400, detail=f"prompt frame {i}: {exc}") from exc
            if frame.shape[:2] != (tok_cfg.frame_height, tok_cfg.frame_width):
                raise HTTPException(
                    status_code=400,
                    detail=(
                        f"prompt frame {i} is {frame.shape[0]}x{frame.shape[1]}, expected "
                        f"{tok_cfg.frame_height}x{tok_cfg.frame_width}"
                    ),
                )
            frames.append(frame)

        prompt = VideoClip(np.stack(frames), fps=1.0)
        tokens = bundle.tokenizer.encode_clip(prompt).reshape(prompt.num_frames, -1)
        cond_actions: list[int] = []
        if prompt.num_frames >= 2:
            lam_clip = preprocess_clip(
                prompt, lam_cfg.frame_height, lam_cfg.frame_width, prompt.fps, prompt.num_frames
            )
            cond_actions = [int(a) for a in bundle.lam.infer_actions(lam_clip)]

        with registry_lock:
            session_id = f"s{counter['next']:06d}"
            counter["next"] += 1
            sessions[session_id] = Session(
                session_id=session_id,
                seed=request.seed,
                prompt_frames=prompt.num_frames,
                rng=np.random.Generator(np.random.PCG64(request.seed)),
                tokens=tokens,
                frames=list(prompt.frames),
                cond_actions=cond_actions,
            )
        return {"session_id": session_id, "num_frames": prompt.num_frames}

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str, request: StepRequest):
        session = get_session(session_id)
        if not 0 <= request.action_id < dyn_cfg.num_actions:
            raise HTTPException(
                status_code=400,
                detail=f"action_id must lie in [0, {dyn_cfg.num_actions}), got {request.action_id}",
            )
        with session.lock:
            cond = np.array(session.cond_actions + [request.action_id], dtype=np.int64)
            next_tokens = iterative_decode(
                bundle.dynamics, session.tokens, cond, dyn_cfg, session.rng
            )
            session.tokens = np.concatenate([session.tokens, next_tokens[None]], axis=0)
            session.cond_actions.append(request.action_id)
            session.actions.append(request.action_id)
            grid = session.tokens.reshape(-1, dyn_cfg.tokens_height, dyn_cfg.tokens_width)
            decoded = bundle.tokenizer.decode_clip(grid)
            frame = decoded.frames[-1]
            session.frames.append(frame)
            index = len(session.frames) - 1
        return {"frame_index": index, "frame": encode_frame_png(frame)}

    @app.get("/sessions/{session_id}")
    def get_history(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {
                "session_id": session.session_id,
                "seed": session.seed,
                "prompt_frames": session.prompt_frames,
                "num_frames": len(session.frames),
                "frames": [encode_frame_png(f) for f in session.frames],
                "actions": list(session.actions),
            }

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        get_session(session_id)
        with registry_lock:
            sessions.pop(session_id, None)
        return {"deleted": True}

    return app


def serve(bundle: ModelBundle, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(bundle), host=host, port=port, log_level="info")
