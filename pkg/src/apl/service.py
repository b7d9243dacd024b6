"""Session-oriented HTTP API driving the annotation workflow.

Persistence is one directory per session holding plain JSON documents
(plan, one annotation document per slice, final report) plus a shared
content-addressed volume store; every write goes through write-then-rename
so a crash never leaves a half-written document. Reports are returned as
the stored bytes, so re-fetches are byte-identical across restarts.

Slice timing is captured server-side: the first image fetch for a slice
starts its clock, each annotation write stamps the end, and the span from
session creation to the first fetch counts as setup.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from . import scoring
from .annotation import CATEGORY_CODES, SliceAnnotation, from_wire, merge_category_masks, to_wire
from .errors import (
    AplError,
    ConflictError,
    GeometryError,
    NotFoundError,
    ParameterError,
)
from .lungmask import LungMask, fallback_segment, ingest_mask
from .nifti import LabelVolume, extract_axial_slice, read_image, read_labels, write_volume
from .sampling import DEFAULT_SLICE_COUNT, SliceSamplePlan, plan_for_mask

STATUS_ORDER = ("created", "segmenting", "annotating", "finalized")

_HTTP_STATUS = {
    "not_found": 404,
    "conflict": 409,
    "format_error": 400,
    "unsupported": 400,
    "corrupt_file": 400,
}


def _status_for(err: AplError) -> int:
    return _HTTP_STATUS.get(err.code, 422)


def _dump(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def _write_atomic(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".part")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def window_to_uint8(plane: np.ndarray, centre: float, width: float) -> np.ndarray:
    """Linear windowing to 8-bit: clamp((v - (c - w/2)) / w) * 255, half-up."""
    if width <= 0:
        raise ParameterError(f"window width must be positive, got {width}")
    lo = centre - width / 2.0
    scaled = np.clip((plane.astype(np.float64) - lo) / width, 0.0, 1.0)
    return np.floor(scaled * 255.0 + 0.5).astype(np.uint8)


class SessionStore:
    """Directory-backed store: volumes by content hash, sessions by id."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "volumes").mkdir(parents=True, exist_ok=True)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        self._volume_cache: dict[tuple[str, bool], object] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- volumes -----------------------------------------------------------

    def put_volume(self, data: bytes) -> str:
        ref = hashlib.sha256(data).hexdigest()
        path = self.root / "volumes" / f"{ref}.nii"
        if not path.exists():
            _write_atomic(path, data)
        return ref

    def import_volume(self, path) -> str:
        return self.put_volume(Path(path).read_bytes())

    def volume_path(self, ref: str) -> Path:
        path = self.root / "volumes" / f"{ref}.nii"
        if not path.exists():
            raise NotFoundError(f"volume {ref} not stored")
        return path

    def load_image(self, ref: str):
        key = (ref, False)
        if key not in self._volume_cache:
            self._volume_cache[key] = read_image(self.volume_path(ref))
        return self._volume_cache[key]

    def load_labels(self, ref: str) -> LabelVolume:
        key = (ref, True)
        if key not in self._volume_cache:
            self._volume_cache[key] = read_labels(self.volume_path(ref))
        return self._volume_cache[key]

    # -- sessions ----------------------------------------------------------

    def lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def session_dir(self, session_id: str, must_exist: bool = True) -> Path:
        d = self.root / "sessions" / session_id
        if must_exist and not d.is_dir():
            raise NotFoundError(f"session {session_id} does not exist")
        return d

    def list_sessions(self) -> list[str]:
        return sorted(p.name for p in (self.root / "sessions").iterdir() if p.is_dir())

    def read_session(self, session_id: str) -> dict:
        path = self.session_dir(session_id) / "session.json"
        return json.loads(path.read_bytes())

    def write_session(self, doc: dict) -> None:
        d = self.session_dir(doc["id"], must_exist=False)
        d.mkdir(parents=True, exist_ok=True)
        _write_atomic(d / "session.json", _dump(doc))

    def annotation_path(self, session_id: str, z: int) -> Path:
        return self.session_dir(session_id) / f"annotation_z{z:04d}.json"

    def read_annotation(self, session_id: str, z: int) -> dict | None:
        path = self.annotation_path(session_id, z)
        if not path.exists():
            return None
        return json.loads(path.read_bytes())

    def write_annotation(self, session_id: str, z: int, doc: dict) -> None:
        _write_atomic(self.annotation_path(session_id, z), _dump(doc))

    def report_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "report.json"


@dataclass
class _SessionCtx:
    doc: dict
    store: SessionStore

    @property
    def plan(self) -> SliceSamplePlan:
        return SliceSamplePlan.from_dict(self.doc["plan"])

    @property
    def in_plane_dims(self) -> tuple[int, int]:
        nx, ny, _ = self.doc["dims"]
        return (int(nx), int(ny))

    def mask(self) -> LungMask:
        vol = self.store.load_labels(self.doc["mask_ref"])
        return LungMask(vol, self.doc["mask_source"], vol.counts())

    def annotations(self) -> list[SliceAnnotation]:
        out = []
        for z in self.plan.slices:
            doc = self.store.read_annotation(self.doc["id"], z)
            if doc is None:
                continue
            per_cat = {m.category: m for m in (from_wire(w) for w in doc["rles"])}
            grid = merge_category_masks(per_cat, dims=self.in_plane_dims)
            out.append(SliceAnnotation(z, grid))
        return out

    def slice_summaries(self) -> list[dict]:
        rows = []
        for z in self.plan.slices:
            doc = self.store.read_annotation(self.doc["id"], z)
            rows.append({
                "z": z,
                "annotated": doc is not None,
                "pixel_counts": doc["pixel_counts"] if doc else {str(c): 0 for c in CATEGORY_CODES},
            })
        return rows

    def public_doc(self) -> dict:
        doc = dict(self.doc)
        doc["slices"] = self.slice_summaries()
        done = sum(1 for s in doc["slices"] if s["annotated"])
        doc["completion"] = {"done": done, "total": len(self.plan.slices)}
        return doc


def _advance(doc: dict, new_status: str) -> None:
    cur, new = STATUS_ORDER.index(doc["status"]), STATUS_ORDER.index(new_status)
    if new < cur:
        raise ConflictError(f"cannot move session from {doc['status']} to {new_status}")
    doc["status"] = new_status


def create_session(store: SessionStore, image_ref: str, mask_ref: str | None,
                   k: int = DEFAULT_SLICE_COUNT, flip_lr: bool = False) -> dict:
    """Build a session: segment if needed, plan slices, persist as annotating."""
    image = store.load_image(image_ref)
    doc = {
        "id": uuid.uuid4().hex,
        "created_at": time.time(),
        "status": "created",
        "image_ref": image_ref,
        "k": int(k),
        "flip_lr": bool(flip_lr),
        "dims": list(image.geometry.dims),
        "spacing": list(image.geometry.spacing),
        "value_range": list(image.value_range),
    }
    if mask_ref is None:
        _advance(doc, "segmenting")
        mask = fallback_segment(image, flip_lr=flip_lr)
    else:
        raw = store.load_labels(mask_ref)
        if raw.geometry.dims != image.geometry.dims:
            raise GeometryError(
                f"mask dims {raw.geometry.dims} do not match image {image.geometry.dims}")
        mask = ingest_mask(raw, flip_lr=flip_lr)
    # persist the normalized {0,1,2} mask so every consumer sees one volume
    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir) / "mask.nii"
        write_volume(mask.volume, tmp)
        norm_ref = store.put_volume(tmp.read_bytes())
    doc["mask_ref"] = norm_ref
    doc["mask_source"] = mask.source

    plan = plan_for_mask(mask, k=k)
    doc["plan"] = plan.to_dict()
    doc["timings"] = {
        "setup": {"start": doc["created_at"], "end": None},
        "slices": {str(z): {"start": None, "end": None} for z in plan.slices},
    }
    _advance(doc, "annotating")
    store.write_session(doc)
    return doc


def put_annotation(store: SessionStore, session_id: str, z: int,
                   wire_rles: list[str]) -> dict:
    """Decode, merge and atomically store one slice's annotation."""
    with store.lock(session_id):
        doc = store.read_session(session_id)
        ctx = _SessionCtx(doc, store)
        if doc["status"] != "annotating":
            raise ConflictError(f"session is {doc['status']}, not annotating")
        plan = ctx.plan
        if z not in plan.slices:
            raise NotFoundError(f"slice {z} is not in the sample plan {list(plan.slices)}")
        masks = [from_wire(w) for w in wire_rles]
        per_cat: dict[int, object] = {}
        for m in masks:
            if m.category not in CATEGORY_CODES:
                raise ParameterError(f"unknown category {m.category}")
            if (m.width, m.height) != ctx.in_plane_dims:
                raise GeometryError(
                    f"mask dims {(m.width, m.height)} do not match slice {ctx.in_plane_dims}")
            if m.category in per_cat:
                raise ParameterError(f"duplicate mask for category {m.category}")
            per_cat[m.category] = m
        grid = merge_category_masks(per_cat, dims=ctx.in_plane_dims)
        ann = SliceAnnotation(z, grid)
        canonical = [to_wire(m) for m in ann.to_rles()]
        new_doc = {
            "z": z,
            "rles": canonical,
            "pixel_counts": {str(c): n for c, n in ann.category_counts().items()},
        }
        existing = store.read_annotation(session_id, z)
        if existing is not None and {k: existing[k] for k in ("z", "rles", "pixel_counts")} == new_doc:
            return existing  # idempotent resubmit: state untouched
        new_doc["received_at"] = time.time()
        store.write_annotation(session_id, z, new_doc)
        doc["timings"]["slices"][str(z)]["end"] = new_doc["received_at"]
        store.write_session(doc)
        return new_doc


def finalize_session(store: SessionStore, session_id: str,
                     cell_edge: int | None = None, tau: float | None = None) -> bytes:
    """Run both scorers on a snapshot; persist the report; flip to finalized."""
    with store.lock(session_id):
        doc = store.read_session(session_id)
        if doc["status"] != "annotating":
            raise ConflictError(f"session is {doc['status']}, not annotating")
        ctx = _SessionCtx(doc, store)
        mask = ctx.mask()
        plan = ctx.plan
        annotations = ctx.annotations()
        pixel = scoring.pixel_score(mask, annotations, plan)
        edge = cell_edge if cell_edge is not None else scoring.default_cell_edge(mask, plan)
        grid = scoring.grid_score(mask, annotations, plan, cell_edge=edge,
                                  tau=tau if tau is not None else scoring.DEFAULT_TAU)

        timings = doc["timings"]
        setup = (timings["setup"]["end"] - timings["setup"]["start"]
                 if timings["setup"]["end"] else 0.0)
        per_slice = {}
        for z_str, span in timings["slices"].items():
            if span["start"] is not None and span["end"] is not None:
                per_slice[z_str] = max(0.0, span["end"] - span["start"])
        summary = {
            "setup_seconds": setup,
            "per_slice_seconds": per_slice,
            "total_seconds": setup + sum(per_slice.values()),
        }
        report = {
            "session_id": session_id,
            "pixel": pixel.to_dict(),
            "grid": grid.to_dict(),
            "timing": summary,
        }
        blob = _dump(report)
        _write_atomic(store.report_path(session_id), blob)
        _advance(doc, "finalized")
        store.write_session(doc)
        return blob


def create_app(store_root, ui_dir=None) -> FastAPI:
    store = SessionStore(store_root)
    app = FastAPI(title="lung scoring service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.store = store

    @app.exception_handler(AplError)
    async def _apl_error(_req: Request, err: AplError):
        return JSONResponse({"code": err.code, "message": err.message},
                            status_code=_status_for(err))

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/volumes")
    async def upload_volume(request: Request):
        data = await request.body()
        if not data:
            raise ParameterError("empty volume upload")
        return {"ref": store.put_volume(data), "bytes": len(data)}

    @app.get("/sessions")
    def list_sessions():
        out = []
        for sid in store.list_sessions():
            doc = store.read_session(sid)
            out.append({"id": sid, "status": doc["status"],
                        "created_at": doc["created_at"]})
        return {"sessions": out}

    @app.post("/sessions", status_code=201)
    async def post_session(request: Request):
        body = await request.json()
        image_ref = body.get("image_ref")
        if image_ref is None and body.get("image_path"):
            image_ref = store.import_volume(body["image_path"])
        if image_ref is None:
            raise ParameterError("need image_ref or image_path")
        mask_ref = body.get("mask_ref")
        if mask_ref is None and body.get("mask_path"):
            mask_ref = store.import_volume(body["mask_path"])
        doc = create_session(store, image_ref, mask_ref,
                             k=int(body.get("k", DEFAULT_SLICE_COUNT)),
                             flip_lr=bool(body.get("flip_lr", False)))
        return Response(_dump(_SessionCtx(doc, store).public_doc()),
                        media_type="application/json", status_code=201)

    def _ctx(session_id: str) -> _SessionCtx:
        return _SessionCtx(store.read_session(session_id), store)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return Response(_dump(_ctx(session_id).public_doc()),
                        media_type="application/json")

    @app.get("/sessions/{session_id}/slices")
    def get_slices(session_id: str):
        ctx = _ctx(session_id)
        rows = ctx.slice_summaries()
        done = sum(1 for r in rows if r["annotated"])
        return Response(_dump({"slices": rows,
                               "completion": {"done": done, "total": len(rows)}}),
                        media_type="application/json")

    @app.get("/sessions/{session_id}/slices/{z}/image")
    def get_slice_image(session_id: str, z: int,
                        wc: float | None = Query(default=None),
                        ww: float | None = Query(default=None)):
        from PIL import Image

        with store.lock(session_id):
            ctx = _ctx(session_id)
            if z not in ctx.plan.slices:
                raise NotFoundError(f"slice {z} is not in the sample plan")
            image = store.load_image(ctx.doc["image_ref"])
            span = ctx.doc["timings"]["slices"][str(z)]
            if span["start"] is None:  # first fetch starts this slice's clock
                now = time.time()
                span["start"] = now
                if ctx.doc["timings"]["setup"]["end"] is None:
                    ctx.doc["timings"]["setup"]["end"] = now
                store.write_session(ctx.doc)
        lo, hi = image.value_range
        centre = wc if wc is not None else (lo + hi) / 2.0
        width = ww if ww is not None else (hi - lo) or 1.0
        plane = extract_axial_slice(image, z)
        raster = window_to_uint8(plane, centre, width)
        png = io.BytesIO()
        Image.fromarray(raster.T, mode="L").save(png, format="PNG")
        return Response(png.getvalue(), media_type="image/png")

    @app.get("/sessions/{session_id}/slices/{z}/lungmask")
    def get_slice_lungmask(session_id: str, z: int):
        from .annotation import encode_rle

        ctx = _ctx(session_id)
        if z not in ctx.plan.slices:
            raise NotFoundError(f"slice {z} is not in the sample plan")
        mask_vol = store.load_labels(ctx.doc["mask_ref"])
        plane = extract_axial_slice(mask_vol, z)
        rles = [to_wire(encode_rle(plane == lab, lab))
                for lab in (1, 2) if bool((plane == lab).any())]
        nx, ny = ctx.in_plane_dims
        return Response(_dump({"z": z, "width": nx, "height": ny, "rles": rles}),
                        media_type="application/json")

    @app.get("/sessions/{session_id}/slices/{z}/annotation")
    def get_slice_annotation(session_id: str, z: int):
        ctx = _ctx(session_id)
        if z not in ctx.plan.slices:
            raise NotFoundError(f"slice {z} is not in the sample plan")
        doc = store.read_annotation(session_id, z)
        if doc is None:
            doc = {"z": z, "rles": [],
                   "pixel_counts": {str(c): 0 for c in CATEGORY_CODES}}
        return Response(_dump(doc), media_type="application/json")

    @app.put("/sessions/{session_id}/slices/{z}/annotation")
    async def put_slice_annotation(session_id: str, z: int, request: Request):
        body = await request.json()
        rles = body.get("rles")
        if not isinstance(rles, list):
            raise ParameterError("body must be {\"rles\": [wire strings]}")
        doc = put_annotation(store, session_id, z, rles)
        return Response(_dump(doc), media_type="application/json")

    @app.post("/sessions/{session_id}/finalize")
    async def post_finalize(session_id: str, request: Request):
        body = {}
        raw = await request.body()
        if raw:
            body = json.loads(raw)
        blob = finalize_session(
            store, session_id,
            cell_edge=body.get("cell_edge"),
            tau=body.get("tau"))
        return Response(blob, media_type="application/json")

    @app.get("/sessions/{session_id}/report")
    def get_report(session_id: str):
        path = store.report_path(session_id)
        if not path.exists():
            store.session_dir(session_id)  # 404 if the session itself is missing
            raise NotFoundError(f"session {session_id} has no report (not finalized)")
        return Response(path.read_bytes(), media_type="application/json")

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
