"""HTTP layer over the annotation engine.

Thin by design: every handler parses the request, calls one LabelApp
method, and serializes the result. Domain exceptions map to status codes
through one table, and error bodies are always
{"error": <ExceptionName>, "detail": <message>} so clients can branch on
the error name instead of scraping messages.

Inference responses are multipart/form-data built by hand: a "params"
JSON part ({latency_ms, label_voxel_count}) and a "label" part carrying
the mask as gzipped NIfTI with the source image's spacing and affine.
"""

from __future__ import annotations

import json
import os
import secrets
import time

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .app import AppManifest, LabelApp, default_manifest, load_manifest
from .errors import (
    BadImage,
    BadMagic,
    BadParams,
    BadProbability,
    ClickOutOfBounds,
    CorruptIndex,
    DimMismatch,
    EmptyDatastore,
    EmptyPool,
    InsufficientBudget,
    JobAlreadyRunning,
    LabelForgeError,
    MissingClass,
    MissingClicks,
    MissingScribbles,
    ModelUntrained,
    NoActiveJob,
    NoLabeledData,
    TruncatedFile,
    UnknownImage,
    UnknownModel,
    UnknownSession,
    UnknownStrategy,
    UnsupportedDatatype,
)
from .nifti import nifti_read, nifti_write
from .volume import ClickSet, ScribbleMask, Volume

DEFAULT_PORT = 8123
DEFAULT_MAX_BODY = 512 * 1024 * 1024

_STATUS = {
    UnknownModel: 404,
    UnknownImage: 404,
    UnknownSession: 404,
    UnknownStrategy: 404,
    EmptyPool: 404,
    NoActiveJob: 404,
    MissingScribbles: 400,
    MissingClicks: 400,
    BadParams: 400,
    NoLabeledData: 400,
    BadImage: 400,
    BadMagic: 400,
    UnsupportedDatatype: 400,
    TruncatedFile: 400,
    DimMismatch: 400,
    MissingClass: 400,
    ClickOutOfBounds: 400,
    BadProbability: 400,
    EmptyDatastore: 400,
    InsufficientBudget: 400,
    CorruptIndex: 500,
    JobAlreadyRunning: 409,
    ModelUntrained: 409,
}


def _multipart_response(parts) -> Response:
    """Assemble multipart/form-data from (name, content_type, payload, filename)."""
    boundary = "lf" + secrets.token_hex(12)
    chunks = []
    for name, ctype, payload, filename in parts:
        disp = f'form-data; name="{name}"'
        if filename:
            disp += f'; filename="{filename}"'
        chunks.append(
            f"--{boundary}\r\nContent-Disposition: {disp}\r\n"
            f"Content-Type: {ctype}\r\n\r\n".encode() + payload + b"\r\n"
        )
    chunks.append(f"--{boundary}--\r\n".encode())
    return Response(
        content=b"".join(chunks),
        media_type=f"multipart/form-data; boundary={boundary}",
    )


async def _part_bytes(value) -> bytes:
    if value is None:
        return b""
    if isinstance(value, str):
        return value.encode()
    return await value.read()


def _parse_params(raw: bytes) -> dict:
    if not raw:
        return {}
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as e:
        raise BadParams(f"params part is not valid JSON: {e}") from e
    if not isinstance(d, dict):
        raise BadParams("params must be a JSON object")
    return d


def _parse_clicks(params: dict) -> ClickSet | None:
    d = params.get("clicks")
    if d is None:
        return None
    if not isinstance(d, dict):
        raise BadParams("clicks must be an object with foreground/background lists")
    try:
        cs = ClickSet.from_json_dict(d)
    except (TypeError, ValueError) as e:
        raise BadParams(f"bad click coordinates: {e}") from e
    return cs


def _parse_scribbles(raw: bytes, dims) -> ScribbleMask:
    v = nifti_read(raw)
    if v.dims != dims:
        raise DimMismatch(f"scribble dims {v.dims} vs image {dims}")
    vals = np.rint(v.data)
    try:
        return ScribbleMask(vals.astype(np.uint8))
    except ValueError as e:
        raise BadParams(f"scribble values must be 0, 2, or 3: {e}") from e


def create_server(engine: LabelApp, max_body: int = DEFAULT_MAX_BODY) -> FastAPI:
    api = FastAPI(title=engine.manifest.name, version=engine.info()["version"])
    api.state.engine = engine

    api.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @api.exception_handler(LabelForgeError)
    async def _domain_error(request: Request, exc: LabelForgeError):
        return JSONResponse(
            {"error": type(exc).__name__, "detail": str(exc)},
            status_code=_STATUS.get(type(exc), 500),
        )

    @api.middleware("http")
    async def _cap_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length is not None and length.isdigit() and int(length) > max_body:
            return JSONResponse(
                {"error": "BodyTooLarge", "detail": f"body exceeds {max_body} bytes"},
                status_code=413,
            )
        return await call_next(request)

    # -- info -----------------------------------------------------------------

    @api.get("/info")
    def info():
        return engine.info()

    # -- inference ---------------------------------------------------------------

    @api.post("/infer/{model_name}")
    async def infer(model_name: str, request: Request,
                    image: str | None = None, session: str | None = None):
        form = {}
        ctype = request.headers.get("content-type", "")
        if ctype.startswith("multipart/form-data"):
            form = await request.form()
        v = engine.resolve_volume(image, session)
        params = _parse_params(await _part_bytes(form.get("params")))
        clicks = _parse_clicks(params)
        scrib_raw = await _part_bytes(form.get("scribbles"))
        scribbles = _parse_scribbles(scrib_raw, v.dims) if scrib_raw else None
        mask, latency_ms = engine.infer(model_name, v, clicks, scribbles, params)
        label_nii = nifti_write(
            Volume(mask.data.astype(np.float32), v.spacing, v.affine), gz=True
        )
        meta = {
            "latency_ms": latency_ms,
            "label_voxel_count": int(mask.data.sum()),
        }
        return _multipart_response(
            [
                ("params", "application/json", json.dumps(meta).encode(), None),
                ("label", "application/octet-stream", label_nii, "label.nii.gz"),
            ]
        )

    # -- training -------------------------------------------------------------------

    @api.post("/train/{model_name}")
    async def start_train(model_name: str, request: Request):
        raw = await request.body()
        overrides = _parse_params(raw)
        job = engine.start_training(model_name, overrides)
        return {"job_id": job.job_id}

    @api.get("/train")
    def train_status():
        job = engine.train_status()
        if job is None:
            return {"job_id": None, "state": "idle"}
        return job.to_json_dict()

    @api.delete("/train")
    def cancel_train():
        return engine.cancel_training().to_json_dict()

    # -- active learning ---------------------------------------------------------------

    @api.post("/activelearning/{strategy}")
    def next_sample(strategy: str, seed: int = 0):
        return engine.next_sample(strategy, seed).to_json_dict()

    # -- datastore -----------------------------------------------------------------------

    @api.get("/datastore")
    def datastore_listing():
        ds = engine.datastore
        entries = [
            {
                "image_id": i,
                "labeled": ds.has_label(i, "final"),
                "labels": [t for t in ("final", "original") if ds.has_label(i, t)],
            }
            for i in ds.list_images()
        ]
        labeled, unlabeled = ds.partition()
        return {"entries": entries, "labeled": labeled, "unlabeled": unlabeled}

    @api.get("/datastore/image")
    def fetch_image(image: str):
        # exact stored bytes, so client-side decoding can be oracled
        raw = engine.datastore.image_path(image).read_bytes()
        return Response(raw, media_type="application/octet-stream")

    @api.get("/datastore/label")
    def fetch_label(image: str, tag: str = "final"):
        engine.datastore.image_path(image)  # unknown id gets its own 404
        if not engine.datastore.has_label(image, tag):
            raise UnknownImage(f"image {image!r} has no {tag!r} label")
        raw = engine.datastore.label_path(image, tag).read_bytes()
        return Response(raw, media_type="application/octet-stream")

    @api.post("/datastore")
    async def upload_image(request: Request, image_id: str | None = None):
        form = await request.form()
        part = form.get("image")
        if part is None:
            raise BadParams('multipart field "image" is required')
        raw = await _part_bytes(part)
        name = image_id or form.get("image_id")
        if not name and getattr(part, "filename", None):
            name = part.filename
            for suf in (".nii.gz", ".nii"):
                if name.endswith(suf):
                    name = name[: -len(suf)]
        if not name:
            raise BadParams("an image id or filename is required")
        assigned = engine.datastore.add_image(str(name), raw)
        return {"image_id": assigned}

    @api.put("/datastore/label")
    async def put_label(request: Request, image: str, tag: str = "final"):
        raw = await request.body()
        try:
            engine.datastore.save_label(image, tag, raw)
        except ValueError as e:
            raise BadParams(str(e)) from e
        return {"image_id": image, "tag": tag}

    # -- sessions ---------------------------------------------------------------------------

    @api.post("/session")
    async def create_session(request: Request, ttl: float = 3600.0):
        raw = await request.body()
        try:
            v = nifti_read(raw)
        except LabelForgeError as e:
            raise BadImage(f"session body is not a readable NIfTI volume: {e}") from e
        s = engine.create_session(v, ttl)
        return {"session_id": s.session_id, "expiry": s.expires_at}

    ui_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(
        os.path.abspath(__file__)))), "frontend", "dist")
    if os.path.isdir(ui_dir):
        api.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return api


def serve(
    root=None,
    port: int | None = None,
    manifest_path=None,
    budget_bytes: int | None = None,
    host: str = "127.0.0.1",
):
    """Start the annotation server (blocking). Env vars beat built-in defaults,
    explicit arguments beat both: LABEL_SERVER_ROOT, LABEL_SERVER_PORT."""
    import uvicorn

    root = root or os.environ.get("LABEL_SERVER_ROOT") or "."
    if port is None:
        port = int(os.environ.get("LABEL_SERVER_PORT", DEFAULT_PORT))
    manifest = load_manifest(manifest_path) if manifest_path else default_manifest()
    if budget_bytes is not None:
        manifest.planner["budget_bytes"] = int(budget_bytes)
    engine = LabelApp(root, manifest)
    uvicorn.run(create_server(engine), host=host, port=port, log_level="warning")
