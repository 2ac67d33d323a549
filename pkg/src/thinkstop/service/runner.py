"""Run the service in a background thread; used for the mock inference server."""

from __future__ import annotations

import threading
import time

import uvicorn
from fastapi import FastAPI

from ..errors import BindError
from ..policy import SyntheticPolicySpec, synthetic_from_spec
from .app import create_app


class RunningServer:
    """A live loopback server; call ``stop()`` (or use as a context manager) to shut down."""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread, host: str, port: int):
        self._server = server
        self._thread = thread
        self.host = host
        self.port = port

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}/v1"

    def stop(self, timeout: float = 5.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=timeout)

    def __enter__(self) -> "RunningServer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve_in_thread(
    app: FastAPI, host: str = "127.0.0.1", port: int = 0, startup_timeout: float = 10.0
) -> RunningServer:
    """Start uvicorn on a daemon thread and wait until it is accepting connections.

    ``port=0`` binds an ephemeral port; the actual port is read back from the
    bound socket. Raises BindError if the server dies before startup completes
    (the usual cause is an occupied port).
    """
    config = uvicorn.Config(app, host=host, port=port, log_level="error")
    server = uvicorn.Server(config)

    def run() -> None:
        try:
            server.run()
        except SystemExit:
            pass  # startup failure (port in use); surfaced below as BindError

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    deadline = time.monotonic() + startup_timeout
    while not server.started:
        if not thread.is_alive():
            raise BindError(f"server failed to start on {host}:{port}")
        if time.monotonic() > deadline:
            server.should_exit = True
            raise BindError(f"server startup timed out on {host}:{port}")
        time.sleep(0.01)
    bound_port = server.servers[0].sockets[0].getsockname()[1]
    return RunningServer(server, thread, host, bound_port)


def mock_server(
    spec: SyntheticPolicySpec,
    port: int = 0,
    *,
    host: str = "127.0.0.1",
    api_token: str | None = None,
    top_logprobs_cap: int | None = None,
) -> RunningServer:
    """Serve the completions protocol backed by a synthetic policy.

    Conformance surface for the remote policy client: top-logprob maps of the
    requested width, HTTP 400 with code "logprobs_capability_exceeded" beyond
    the cap, and HTTP 401 for missing or wrong bearer tokens when an API token
    is configured.
    """
    app = create_app(
        synthetic_from_spec(spec), api_token=api_token, top_logprobs_cap=top_logprobs_cap
    )
    return serve_in_thread(app, host=host, port=port)
