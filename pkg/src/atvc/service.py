"""HTTP inference service behind the chat UI.

Sessions are in-memory and lost on restart; model weights are shared
read-only across requests, and each session serializes its own chats with
a lock. A "can" answer advances the session's working image to the
re-creation (multi-turn); --single-turn keeps the original image for
every turn. The only image wire format is PNG, base64-inlined in JSON.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from .pipeline import ModelPredictor, OraclePredictor, PredictorError, dataset_arrays
from .rules import ANSWER_CAN
from .scenes import Scene
from .seqmodel import load_stage2
from .textcodec import OOVError, Vocabulary
from .vqae import load_stage1

MAX_UPLOAD_BYTES = 1 << 20  # 1 MiB of base64 payload
GALLERY_LIMIT = 24


def png_to_base64(img: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def base64_to_image(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data)
        with Image.open(io.BytesIO(raw)) as im:
            if im.format != "PNG":
                raise ValueError(f"only PNG uploads are accepted, got {im.format}")
            return np.asarray(im.convert("RGB"))
    except ValueError:
        raise
    except Exception as e:
        raise ValueError(f"not a decodable PNG image: {e}") from e


@dataclass
class Turn:
    instruction: str
    answer_text: str
    answer_type: str
    image_b64: str | None
    latency_ms: float


@dataclass
class ChatSession:
    session_id: str
    current_image: np.ndarray
    original_image: np.ndarray
    scene: Scene | None = None  # symbolic state when started from a dataset scene
    turns: list[Turn] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class ServiceState:
    predictor: object
    vocab: Vocabulary
    gallery: list[tuple[str, np.ndarray]]
    scenes_by_id: dict[str, Scene]
    images_by_id: dict[str, np.ndarray]
    single_turn: bool = False
    sessions: dict[str, ChatSession] = field(default_factory=dict)


def build_state(
    data_dir,
    stage1_dir=None,
    stage2_dir=None,
    predictor_kind: str = "model",
    single_turn: bool = False,
) -> ServiceState:
    scenes, _, images, _ = dataset_arrays(data_dir)
    gallery = [(s.scene_id, images[s.scene_id]) for s in scenes[:GALLERY_LIMIT]]
    if predictor_kind == "oracle":
        vocab = Vocabulary.default()
        predictor = OraclePredictor(vocab)
    else:
        vq = load_stage1(stage1_dir)
        seq = load_stage2(stage2_dir)
        vocab_path = Path(stage2_dir) / "vocab.txt"
        vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else Vocabulary.default()
        predictor = ModelPredictor(vq, seq, vocab)
    return ServiceState(
        predictor=predictor,
        vocab=vocab,
        gallery=gallery,
        scenes_by_id={s.scene_id: s for s in scenes},
        images_by_id=images,
        single_turn=single_turn,
    )


class SessionRequest(BaseModel):
    scene_id: str | None = None
    image_png_base64: str | None = None


class ChatRequest(BaseModel):
    instruction: str


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="scene re-creation chat service")
    api = "/api/v1"

    @app.get(f"{api}/scenes")
    def list_scenes():
        return {
            "scenes": [
                {"scene_id": sid, "thumbnail_png_base64": png_to_base64(img)}
                for sid, img in state.gallery
            ]
        }

    @app.post(f"{api}/session")
    def new_session(req: SessionRequest):
        if req.scene_id is not None:
            if req.scene_id not in state.images_by_id:
                raise HTTPException(status_code=404, detail=f"unknown scene {req.scene_id}")
            image = state.images_by_id[req.scene_id]
            scene = state.scenes_by_id.get(req.scene_id)
        elif req.image_png_base64 is not None:
            if len(req.image_png_base64) > MAX_UPLOAD_BYTES:
                raise HTTPException(status_code=413, detail="upload too large")
            try:
                image = base64_to_image(req.image_png_base64)
            except ValueError as e:
                raise HTTPException(status_code=422, detail=str(e))
            size = state.gallery[0][1].shape[0] if state.gallery else 64
            if image.shape[:2] != (size, size):
                resized = Image.fromarray(image).resize((size, size), Image.LANCZOS)
                image = np.asarray(resized)
            scene = None
        else:
            raise HTTPException(
                status_code=422, detail="provide scene_id or image_png_base64"
            )
        session = ChatSession(
            session_id=uuid.uuid4().hex,
            current_image=image.copy(),
            original_image=image.copy(),
            scene=scene.copy() if scene is not None else None,
        )
        state.sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "image_png_base64": png_to_base64(session.current_image),
        }

    def _get_session(session_id: str) -> ChatSession:
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    @app.post(f"{api}/session/{{session_id}}/chat")
    def chat(session_id: str, req: ChatRequest):
        session = _get_session(session_id)
        with session.lock:
            started = time.monotonic()
            try:
                state.vocab.encode(req.instruction, max_len=64)
            except OOVError as e:
                return JSONResponse(
                    status_code=422,
                    content={"detail": "word not in vocabulary", "word": e.word},
                )
            except ValueError as e:
                raise HTTPException(status_code=422, detail=str(e))
            try:
                if isinstance(state.predictor, OraclePredictor):
                    if session.scene is None:
                        raise HTTPException(
                            status_code=422,
                            detail="oracle predictor needs a dataset scene session",
                        )
                    pred, new_scene = state.predictor.predict_scene(
                        session.scene, req.instruction
                    )
                    if new_scene is not None and not state.single_turn:
                        session.scene = new_scene
                else:
                    pred = state.predictor.predict(session.current_image, req.instruction)
            except PredictorError as e:
                raise HTTPException(status_code=422, detail=str(e))
            except HTTPException:
                raise
            except RuntimeError as e:
                raise HTTPException(status_code=409, detail=str(e))
            latency_ms = (time.monotonic() - started) * 1000.0
            image_b64 = None
            if pred.answer_type == ANSWER_CAN and pred.image is not None:
                image_b64 = png_to_base64(pred.image)
                if not state.single_turn:
                    session.current_image = pred.image.copy()
            turn = Turn(req.instruction, pred.answer_text, pred.answer_type,
                        image_b64, latency_ms)
            session.turns.append(turn)
            return {
                "answer_text": pred.answer_text,
                "answer_type": pred.answer_type,
                "image_png_base64": image_b64,
                "latency_ms": latency_ms,
            }

    @app.get(f"{api}/session/{{session_id}}/history")
    def history(session_id: str):
        session = _get_session(session_id)
        return {
            "session_id": session.session_id,
            "current_image_png_base64": png_to_base64(session.current_image),
            "original_image_png_base64": png_to_base64(session.original_image),
            "turns": [
                {
                    "instruction": t.instruction,
                    "answer_text": t.answer_text,
                    "answer_type": t.answer_type,
                    "image_png_base64": t.image_b64,
                    "latency_ms": t.latency_ms,
                }
                for t in session.turns
            ],
        }

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
