import logging
from threading import Thread
from typing import Optional

import uvicorn
from fastapi import FastAPI

from app.serve.server import SessionRegistry
from app.storage.db import Database

logger = logging.getLogger(__name__)


def create_status_app(registry: SessionRegistry, db: Optional[Database] = None) -> FastAPI:
    """Read-only HTTP view of a running serve process"""
    app = FastAPI(
        title="IUM Search",
        description="Status of the unified search engine serve process",
        version="1.0.0",
    )

    # Health check endpoint
    @app.get("/healthz")
    async def health_check():
        """Health check endpoint for monitoring"""
        return {
            "status": "healthy",
            "active_sessions": len(registry),
            "serve_log": db is not None,
        }

    # Metrics endpoint
    @app.get("/metrics")
    async def metrics():
        """Session and serve-log counters"""
        try:
            result = {"active_sessions": len(registry), "sessions": registry.snapshot()}
            if db is not None:
                result.update(db.counts())
            return result
        except Exception as e:
            logger.error(f"Error getting metrics: {e}")
            return {"error": "Failed to get metrics"}

    return app


def start_status_server(app: FastAPI, host: str, port: int, log_level: str = "info") -> Thread:
    """Start the status app in a daemon thread"""
    def run_server():
        uvicorn.run(app, host=host, port=port, log_level=log_level.lower(), access_log=False)

    status_thread = Thread(target=run_server, daemon=True)
    status_thread.start()
    logger.info(f"Status server started on http://{host}:{port}")
    return status_thread
