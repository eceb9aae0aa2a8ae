"""REST-шлюз с JWT-аутентификацией."""

from .app import create_app

__all__ = ["create_app"]
