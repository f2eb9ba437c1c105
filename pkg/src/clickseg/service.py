"""Session-oriented HTTP API exposing the model to annotation clients.

Sessions live in memory. Every mutating request is serialized per session;
distinct sessions proceed concurrently over a shared read-only model.
"""
from __future__ import annotations

import io
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from . import rle
from .clicks import Click
from .model import Proposals, SegmentationModel, select_mask


class ClickBody(BaseModel):
    x: int
    y: int
    polarity: int


class SelectBody(BaseModel):
    proposal_index: int


@dataclass
class Session:
    session_id: str
    image: np.ndarray  # (3, H, W) float32
    clicks: list = field(default_factory=list)
    prev_mask: np.ndarray | None = None
    proposals: Proposals | None = None
    selected_index: int | None = None
    revision: int = 0
    repicks: int = 0
    events: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


def _decode_image(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise HTTPException(status_code=415, detail=f"cannot decode image: {exc}")
    return arr.transpose(2, 0, 1)


def create_app(
    model: SegmentationModel,
    max_image_bytes: int = 8 * 1024 * 1024,
    max_side: int = 1024,
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="clickseg annotation service")
    sessions: dict = {}
    sessions_lock = threading.Lock()

    def get_session(session_id: str) -> Session:
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    def proposal_payload(session: Session) -> list:
        proposals = session.proposals
        product = (proposals.conf * proposals.iou_pred).cpu().numpy()
        conf = proposals.conf.cpu().numpy()
        iou_pred = proposals.iou_pred.cpu().numpy()
        binary = proposals.binary_masks()
        order = sorted(range(len(product)), key=lambda i: (-float(product[i]), i))
        return [
            {
                "index": i,
                "conf": float(conf[i]),
                "iou_pred": float(iou_pred[i]),
                "product": float(product[i]),
                "selected": i == session.selected_index,
                "mask": {
                    "rle": rle.encode(binary[i]),
                    "width": session.width,
                    "height": session.height,
                },
            }
            for i in order
        ]

    def state_payload(session: Session, include_proposals: bool = True) -> dict:
        doc = {
            "session_id": session.session_id,
            "width": session.width,
            "height": session.height,
            "revision": session.revision,
            "repicks": session.repicks,
            "selected_index": session.selected_index,
            "clicks": [
                {"x": c.x, "y": c.y, "polarity": c.polarity, "order": c.order}
                for c in session.clicks
            ],
        }
        if include_proposals and session.proposals is not None:
            doc["proposals"] = proposal_payload(session)
        else:
            doc["proposals"] = []
        return doc

    def apply_click(session: Session, x: int, y: int, polarity: int) -> None:
        click = Click(x=x, y=y, polarity=polarity, order=len(session.clicks))
        session.clicks.append(click)
        proposals = model.predict(session.image, session.clicks, session.prev_mask)
        session.proposals = proposals
        session.selected_index, _ = select_mask(proposals)
        session.prev_mask = (
            proposals.probabilities()[session.selected_index].cpu().numpy()[None]
        )

    def apply_select(session: Session, index: int) -> None:
        session.selected_index = index
        session.prev_mask = (
            session.proposals.probabilities()[index].cpu().numpy()[None]
        )
        session.repicks += 1

    def replay(session: Session, events: list) -> None:
        session.clicks = []
        session.prev_mask = None
        session.proposals = None
        session.selected_index = None
        session.repicks = 0
        session.events = []
        for event in events:
            if event[0] == "click":
                apply_click(session, event[1], event[2], event[3])
            else:
                apply_select(session, event[1])
            session.events.append(event)

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "num_queries": model.config.num_queries,
            "disk_radius": model.config.disk_radius,
        }

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        data = await request.body()
        if len(data) > max_image_bytes:
            raise HTTPException(status_code=413, detail="image payload too large")
        image = _decode_image(data)
        if image.shape[1] > max_side or image.shape[2] > max_side:
            raise HTTPException(
                status_code=413, detail=f"image exceeds the {max_side}px side limit"
            )
        session = Session(session_id=uuid.uuid4().hex, image=image)
        with sessions_lock:
            sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "width": session.width,
            "height": session.height,
        }

    @app.post("/sessions/{session_id}/clicks")
    def add_click(session_id: str, body: ClickBody):
        session = get_session(session_id)
        with session.lock:
            if not (0 <= body.x < session.width and 0 <= body.y < session.height):
                raise HTTPException(status_code=422, detail="click out of bounds")
            if body.polarity not in (0, 1):
                raise HTTPException(status_code=422, detail="polarity must be 0 or 1")
            apply_click(session, body.x, body.y, body.polarity)
            session.events.append(("click", body.x, body.y, body.polarity))
            session.revision += 1
            return state_payload(session)

    @app.post("/sessions/{session_id}/select")
    def select_proposal(session_id: str, body: SelectBody):
        session = get_session(session_id)
        with session.lock:
            if session.proposals is None:
                raise HTTPException(status_code=409, detail="no proposals yet")
            if not 0 <= body.proposal_index < session.proposals.num_proposals:
                raise HTTPException(status_code=422, detail="proposal index out of range")
            apply_select(session, body.proposal_index)
            session.events.append(("select", body.proposal_index))
            session.revision += 1
            return state_payload(session)

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        session = get_session(session_id)
        with session.lock:
            click_positions = [i for i, e in enumerate(session.events) if e[0] == "click"]
            if not click_positions:
                raise HTTPException(status_code=409, detail="no clicks to undo")
            revision = session.revision
            replay(session, session.events[: click_positions[-1]])
            session.revision = revision + 1
            return state_payload(session)

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return state_payload(session)

    @app.get("/sessions/{session_id}/log")
    def get_log(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return {"session_id": session.session_id, "events": [list(e) for e in session.events]}

    @app.get("/sessions/{session_id}/mask.png")
    def get_mask(session_id: str):
        session = get_session(session_id)
        with session.lock:
            if session.proposals is None or session.selected_index is None:
                raise HTTPException(status_code=409, detail="no mask selected yet")
            binary = session.proposals.binary_masks()[session.selected_index]
        img = Image.fromarray((binary > 0)).convert("1")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
