"""Request/response bodies for the run service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class RunRequest(BaseModel):
    """One command execution.

    ``config`` is the sectioned key-value text (see config.DEFAULT_CONFIG
    for the schema); ``seed`` overrides sim.seed; ``threads`` caps the
    BLAS pool for this request without changing results.
    """

    config: str
    out_dir: str = "out"
    seed: int | None = Field(default=None, ge=0, lt=2 ** 64)
    threads: int | None = Field(default=None, ge=1, le=1024)


class RunResponse(BaseModel):
    command: str
    passed: bool
    files: list[str]
    warnings: list[str] = []
    summary: dict


class HealthResponse(BaseModel):
    status: str
    version: str
