"""HTTP JSON service exposing the triage review queue.

Serves the pending queue, per-item ROI images, label submission, and the
base-vs-ensemble report to the companion browser UI and to scripted
clients. In blind mode (the default) responses never carry the model's
scores or prediction: the physician labels without seeing them.
"""

from __future__ import annotations

import mimetypes
from dataclasses import dataclass
from pathlib import Path

from fastapi import Depends, FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .taxonomy import class_display
from .triage import (
    AlreadyLabeledError,
    InvalidLabelError,
    ReviewItem,
    ReviewStore,
    RevisionConflictError,
    UnknownItemError,
)


@dataclass
class ServiceConfig:
    store_path: Path | str
    host: str = "127.0.0.1"
    port: int = 8077
    blind_mode: bool = True
    auth_token: str | None = None
    frontend_dir: Path | str | None = None


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


class LabelRequest(BaseModel):
    label: str
    reviewer: str = ""
    revision: int


def _item_summary(item: ReviewItem, blind: bool) -> dict:
    summary = {
        "item_id": item.item_id,
        "image_url": f"/api/items/{item.item_id}/image",
        "flag_reason": item.flag_reason,
        "status": item.status,
        "revision": item.revision,
    }
    if not blind:
        summary["ai_scores"] = list(item.ai_scores)
        summary["ai_prediction"] = item.ai_prediction
    return summary


def create_app(config: ServiceConfig) -> FastAPI:
    store = ReviewStore(config.store_path)
    app = FastAPI(title="tonguescreen review service")
    app.state.store = store
    app.state.config = config

    def require_auth(request: Request) -> None:
        if config.auth_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.auth_token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message},
        )

    @app.get("/api/queue")
    def get_queue(_auth: None = Depends(require_auth)) -> dict:
        task = store.task
        classes = []
        if task is not None:
            for cls in task.classes:
                name, features = class_display(task, cls)
                classes.append({
                    "code": cls,
                    "display_name": name,
                    "clinical_features": features,
                })
        return {
            "task": task.kind.value if task else None,
            "blind": config.blind_mode,
            "classes": classes,
            "pending": len(store.pending_items()),
            "items": [
                _item_summary(item, config.blind_mode)
                for item in store.pending_items()
            ],
        }

    @app.get("/api/items/{item_id}/image")
    def get_item_image(item_id: str, _auth: None = Depends(require_auth)):
        try:
            item = store.get(item_id)
        except UnknownItemError as exc:
            raise ApiError(404, "unknown_item", str(exc)) from None
        path = Path(item.image_ref)
        if not path.is_file():
            raise ApiError(500, "image_missing", f"stored image {path} is gone")
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media_type)

    @app.post("/api/items/{item_id}/label")
    def post_label(
        item_id: str, body: LabelRequest, _auth: None = Depends(require_auth)
    ) -> dict:
        try:
            decision = store.submit_label(
                item_id=item_id,
                label=body.label,
                reviewer=body.reviewer,
                expected_revision=body.revision,
                blind=config.blind_mode,
            )
        except UnknownItemError as exc:
            raise ApiError(404, "unknown_item", str(exc)) from None
        except InvalidLabelError as exc:
            raise ApiError(422, "invalid_label", str(exc)) from None
        except AlreadyLabeledError as exc:
            raise ApiError(409, "already_labeled", str(exc)) from None
        except RevisionConflictError as exc:
            raise ApiError(409, "revision_conflict", str(exc)) from None
        return decision.to_dict()

    @app.get("/api/report")
    def get_report(_auth: None = Depends(require_auth)) -> dict:
        report = store.report()
        if report is None:
            return {"status": "empty"}
        return {"status": "ok", **report.to_dict()}

    if config.frontend_dir is not None:
        app.mount(
            "/", StaticFiles(directory=config.frontend_dir, html=True), name="ui"
        )

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
