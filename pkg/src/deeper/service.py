"""HTTP facade: submit questions, poll run status, fetch answers.

State lives only in the run directories, so a restarted service still
serves every finished run. Runs execute on a bounded thread pool.
"""

from __future__ import annotations

import logging
from contextlib import asynccontextmanager
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

from fastapi import Body, FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response

from .config import EngineConfig
from .pipeline import RUN_ID, RunRecord, Runtime, build_runtime, execute_run, start_run
from .planner import ResearchQuestion

logger = logging.getLogger(__name__)


def create_app(config: EngineConfig, runtime: Runtime | None = None) -> FastAPI:
    runtime = runtime or build_runtime(config)
    runs_dir = Path(config.runs_dir)
    pool = ThreadPoolExecutor(max_workers=config.parallelism, thread_name_prefix="deeper-run")

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        pool.shutdown(wait=True)

    app = FastAPI(title="deeper", version="1", lifespan=lifespan)
    app.state.pool = pool
    app.state.futures = {}

    def record_for(run_id: str) -> RunRecord:
        if not RUN_ID.match(run_id) or not (runs_dir / run_id / "run.json").is_file():
            raise HTTPException(404, f"unknown run {run_id}")
        return RunRecord.load(runs_dir / run_id)

    @app.get("/v1/health")
    def health() -> dict[str, Any]:
        return {"status": "ok", "offline": config.offline, "parallelism": config.parallelism}

    @app.post("/v1/ask", status_code=202)
    def ask(body: Any = Body(None)) -> JSONResponse:
        if isinstance(body, str):
            body = {"text": body}
        if isinstance(body, dict) and "question" in body and "text" not in body:
            body = {**body, "text": body.pop("question")}
        try:
            question = ResearchQuestion.from_dict(body)
        except (ValueError, TypeError, AttributeError) as exc:
            raise HTTPException(400, f"invalid question: {exc}") from exc
        record = start_run(question, config, runtime.clock, runs_dir)
        app.state.futures[record.run_id] = pool.submit(execute_run, record, config, runtime)
        return JSONResponse({"run_id": record.run_id, "status": record.status}, status_code=202)

    @app.get("/v1/runs/{run_id}")
    def status(run_id: str) -> dict[str, Any]:
        r = record_for(run_id)
        return {"run_id": r.run_id, "status": r.status, "failed_stage": r.failed_stage, "error": r.error,
                "question": r.question.text, "created_at": r.created_at, "finished_at": r.finished_at}

    @app.get("/v1/runs/{run_id}/answer")
    def answer(run_id: str) -> Response:
        r = record_for(run_id)
        if r.status != "done":
            raise HTTPException(409, f"run {run_id} is {r.status}")
        # the persisted bytes, untouched
        return Response((r.run_dir / "answer.json").read_bytes(), media_type="application/json")

    @app.exception_handler(RequestValidationError)
    def bad_body(_request: Any, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse({"detail": f"invalid question: {exc.errors()}"}, status_code=400)

    return app
