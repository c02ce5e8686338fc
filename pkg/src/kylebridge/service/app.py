"""HTTP face of the command runners.

One POST endpoint per command; the body carries the config text and an
output directory, the response carries the summary and the list of
files written.  Numerical failures (a solve not converging, a residual
over threshold) are reported as passed=false with HTTP 200; only
malformed configs and requests map to error status codes.
"""

from __future__ import annotations

from contextlib import nullcontext

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import ConfigError, parse_config
from ..runners import RUNNERS
from ..schrodinger import SinkhornError
from .schemas import HealthResponse, RunRequest, RunResponse


def _thread_cap(n):
    if n is None:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:          # cap is best-effort, results never depend on it
        return nullcontext()
    return threadpool_limits(limits=int(n))


def create_app() -> FastAPI:
    app = FastAPI(title="kylebridge runner", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    def _run(command: str, req: RunRequest) -> RunResponse:
        try:
            cfg = parse_config(req.config)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if req.seed is not None:
            cfg.sim["seed"] = req.seed
        try:
            with _thread_cap(req.threads):
                summary = RUNNERS[command](cfg, req.out_dir)
        except ConfigError as exc:
            # command-specific requirements (e.g. sweep without eps_list)
            raise HTTPException(status_code=422, detail=str(exc))
        except SinkhornError as exc:
            return RunResponse(command=command, passed=False, files=[],
                               warnings=[], summary={"error": str(exc)})
        return RunResponse(
            command=command,
            passed=bool(summary.pop("passed")),
            files=list(summary.pop("files")),
            warnings=list(summary.pop("warnings", [])),
            summary=summary)

    def _register(command: str):
        @app.post(f"/run/{command}", response_model=RunResponse,
                  name=f"run_{command.replace('-', '_')}")
        def endpoint(req: RunRequest) -> RunResponse:
            return _run(command, req)

    for name in RUNNERS:
        _register(name)
    return app
