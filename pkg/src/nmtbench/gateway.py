"""HTTP gateway: translation with deployed models (single or ensemble),
run state and green reports, a live training-event stream, and remote run
launch. The console SPA is served statically when a frontend build exists.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import orchestrator as orch
from .decoding import DecodeSettings, VocabMismatch, translate_corpus
from .models import build
from .subword import load_model as load_subword
from .training import load_checkpoint

EVENT_POLL_INTERVAL_S = 0.2


@dataclass
class ModelRegistryEntry:
    name: str
    bundle_path: Path
    status: str = "available"  # "available" | "loaded" | "error"
    decode_defaults: dict | None = None
    model: object | None = None
    error: str = ""


class ModelRegistry:
    """Deployed bundles under the service root; loaded lazily, cached, and
    guarded by a lock (reads are cheap, loads exclusive)."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._entries: dict[str, ModelRegistryEntry] = {}
        self.rescan()

    def rescan(self) -> None:
        with self._lock:
            seen = set()
            for bundle_json in sorted(self.root.glob("**/bundle.json")):
                try:
                    info = json.loads(bundle_json.read_text(encoding="utf-8"))
                    name = info["name"]
                except (json.JSONDecodeError, KeyError):
                    continue
                if name in seen:
                    continue  # names must be unique; first bundle wins
                seen.add(name)
                if name not in self._entries:
                    self._entries[name] = ModelRegistryEntry(
                        name=name,
                        bundle_path=bundle_json.parent,
                        decode_defaults=info.get("decode"),
                    )

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._entries)

    def entries(self) -> list[ModelRegistryEntry]:
        with self._lock:
            return [self._entries[k] for k in sorted(self._entries)]

    def load(self, name: str):
        with self._lock:
            entry = self._entries.get(name)
            if entry is None:
                raise KeyError(name)
            if entry.model is None:
                ckpt = load_checkpoint(entry.bundle_path / "model.ckpt")
                model = build(ckpt.config, seed=ckpt.hp.seed)
                model.load_arrays(ckpt.params)
                model.source_subword = load_subword(entry.bundle_path / "source.model")
                model.target_subword = load_subword(entry.bundle_path / "target.model")
                entry.model = model
                entry.status = "loaded"
            return entry.model


class TranslateRequest(BaseModel):
    models: list[str] = Field(min_length=1)
    text: list[str]
    beam: int = 5
    alpha: float = 0.6
    max_len: int = 64


class RunLauncher:
    """One in-process pipeline at a time."""

    def __init__(self, root: Path):
        self.root = root
        self._lock = threading.Lock()
        self.active_run: str | None = None
        self._thread: threading.Thread | None = None
        self.errors: dict[str, str] = {}  # run id -> failure detail

    def launch(self, config: orch.RunConfig) -> str:
        with self._lock:
            if self.active_run is not None and self._thread and self._thread.is_alive():
                raise RuntimeError(f"run {self.active_run!r} is active")
            self.active_run = config.run_name

            def work():
                try:
                    orch.autobuild(config, echo=False)
                except Exception as e:
                    self.errors[config.run_name] = str(e)
                finally:
                    self.active_run = None

            self._thread = threading.Thread(target=work, daemon=True)
            self._thread.start()
            return config.run_name

    def is_active(self, run_id: str) -> bool:
        return (
            self.active_run == run_id
            and self._thread is not None
            and self._thread.is_alive()
        )


def _run_dirs(root: Path) -> list[Path]:
    return sorted(
        (p.parent for p in root.glob("*/manifest.json")),
        key=lambda p: p.name,
    ) + sorted(p.parent for p in root.glob("*/*/manifest.json"))


def _find_run(root: Path, run_id: str) -> Path | None:
    for run_dir in _run_dirs(root):
        try:
            if orch.load_manifest(run_dir).run_id == run_id:
                return run_dir
        except (json.JSONDecodeError, OSError):
            continue
    return None


def create_app(root: str | Path, static_dir: str | Path | None = None) -> FastAPI:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="nmtbench gateway")
    registry = ModelRegistry(root)
    launcher = RunLauncher(root)
    app.state.registry = registry
    app.state.launcher = launcher

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    @app.get("/api/models")
    def list_models():
        registry.rescan()
        return {
            "models": [
                {
                    "name": e.name,
                    "bundle_path": str(e.bundle_path),
                    "status": e.status,
                    "decode_defaults": e.decode_defaults,
                }
                for e in registry.entries()
            ]
        }

    @app.post("/api/translate")
    def translate(body: TranslateRequest):
        registry.rescan()
        try:
            models = [registry.load(name) for name in body.models]
        except KeyError as e:
            return error(404, f"UnknownModel: {e.args[0]}")
        settings = DecodeSettings(
            beam_size=body.beam, alpha=body.alpha, max_len=body.max_len
        )
        try:
            translations = translate_corpus(models, body.text, settings)
        except VocabMismatch as e:
            return error(409, f"VocabMismatch: {e}")
        return {
            "translations": [
                {
                    "text": t.text,
                    "total_log_prob": t.total_log_prob,
                    "normalized_score": t.normalized_score,
                    "finished": t.finished,
                    "piece_ids": list(t.piece_ids),
                }
                for t in translations
            ]
        }

    @app.get("/api/runs")
    def list_runs():
        runs = []
        for run_dir in _run_dirs(root):
            try:
                manifest = orch.load_manifest(run_dir)
            except (json.JSONDecodeError, OSError):
                continue
            runs.append(
                {
                    "run_id": manifest.run_id,
                    "stages": {k: v["status"] for k, v in manifest.stages.items()},
                    "active": launcher.is_active(manifest.run_id),
                    "error": launcher.errors.get(manifest.run_id),
                }
            )
        return {"runs": runs}

    @app.get("/api/runs/{run_id}")
    def run_detail(run_id: str):
        run_dir = _find_run(root, run_id)
        if run_dir is None:
            if launcher.is_active(run_id):
                return {"run_id": run_id, "stages": {}, "active": True, "pending": True}
            return error(404, f"unknown run {run_id!r}")
        manifest = orch.load_manifest(run_dir)
        detail = manifest.to_dict()
        detail["active"] = launcher.is_active(run_id)
        detail["error"] = launcher.errors.get(run_id)
        return detail

    @app.get("/api/runs/{run_id}/events")
    def run_events(run_id: str):
        # a just-launched run may not have materialized its directory yet
        if _find_run(root, run_id) is None and not launcher.is_active(run_id):
            return error(404, f"unknown run {run_id!r}")

        def stream():
            last_step = -1
            position = 0
            while True:
                # sample activity BEFORE reading: every event written while
                # active is flushed to disk, so the read below drains them
                active = launcher.is_active(run_id)
                run_dir = _find_run(root, run_id)
                if run_dir is not None:
                    events_path = run_dir / "logs" / "events.jsonl"
                    if events_path.exists():
                        with open(events_path, encoding="utf-8") as fh:
                            fh.seek(position)
                            chunk = fh.read()
                            position = fh.tell()
                        for line in chunk.splitlines():
                            line = line.strip()
                            if not line:
                                continue
                            record = json.loads(line)
                            if record["step"] <= last_step:
                                continue  # no duplicates within a connection
                            last_step = record["step"]
                            yield f"data: {json.dumps(record, sort_keys=True)}\n\n"
                if not active:
                    break
                time.sleep(EVENT_POLL_INTERVAL_S)
            yield "event: end\ndata: {}\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/api/runs/{run_id}/green")
    def run_green(run_id: str):
        run_dir = _find_run(root, run_id)
        if run_dir is None:
            return error(404, f"unknown run {run_id!r}")
        green_path = run_dir / "reports" / "green.json"
        if not green_path.exists():
            return {"status": "pending"}
        return json.loads(green_path.read_text(encoding="utf-8"))

    @app.post("/api/runs")
    def launch_run(body: dict):
        try:
            config = orch.RunConfig.from_dict(body)
            config = orch_replace_output_root(config, root)
            config.validate()
        except (orch.ConfigError, TypeError) as e:
            return error(400, f"ValidationError: {e}")
        try:
            run_id = launcher.launch(config)
        except RuntimeError as e:
            return error(409, str(e))
        return {"run_id": run_id}

    if static_dir is None:
        static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    static_dir = Path(static_dir)
    if static_dir.exists():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app


def orch_replace_output_root(config: orch.RunConfig, root: Path) -> orch.RunConfig:
    """Runs launched through the service always live under the service root."""
    from dataclasses import replace

    return replace(config, output_root=str(root))


def serve(root: Path, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    app = create_app(root)
    uvicorn.run(app, host=host, port=port)
