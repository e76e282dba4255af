"""Main application entrypoint for the tracking service.

This module creates and configures the FastAPI application, wires up the
tracking router and exposes a simple health-check endpoint.

Structure
---------
- `create_app()` returns a configured `FastAPI` instance (app factory pattern).
- Routers are imported from `app.api` and included without altering their paths.

Notes
-----
- Logging is configured once in the lifespan hook from `app.settings`.
- Keep computation in `app.services`; this module only assembles the app.
"""
from __future__ import annotations

import logging
from contextlib import asynccontextmanager
from typing import AsyncIterator, Literal

from fastapi import FastAPI
from pydantic import BaseModel

from app.api.tracking import router as tracking_router
from app.settings import configure_logging, settings

__all__ = ["app", "create_app"]

logger = logging.getLogger(__name__)


class HealthResponse(BaseModel):
    """Response schema for the health-check endpoint."""

    status: Literal["ok"]


@asynccontextmanager
async def _lifespan(app: FastAPI) -> AsyncIterator[None]:
    configure_logging(settings)
    logger.info("tracking service starting (workers=%d)", settings.workers)
    yield


def create_app() -> FastAPI:
    """Application factory.

    Returns
    -------
    FastAPI
        A configured FastAPI instance with the tracking router mounted.
    """

    app = FastAPI(title="Graph Label Tracker", version="0.1.0", lifespan=_lifespan)
    app.include_router(tracking_router)

    @app.get("/health", response_model=HealthResponse, summary="Health check")
    def health() -> HealthResponse:  # pragma: no cover - trivial
        """Simple liveness check for uptime monitoring and load balancers."""

        return HealthResponse(status="ok")

    return app


# Expose a module-level `app` for ASGI servers (uvicorn, hypercorn, etc.).
app = create_app()
