from .app import create_app
from .runner import RunningServer, mock_server, serve_in_thread

__all__ = ["create_app", "mock_server", "serve_in_thread", "RunningServer"]
