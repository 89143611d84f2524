"""HTTP client for the service, with an in-process fallback.

Without a server URL the client mounts the ASGI app directly, so CLI
invocations work standalone while still exercising the exact service
surface (routes, schemas, error mapping).
"""

from __future__ import annotations

import asyncio

import httpx

from ..errors import WinsegError


class ServiceError(WinsegError):
    def __init__(self, status_code: int, detail):
        self.status_code = status_code
        self.detail = detail
        if isinstance(detail, dict):
            message = f"{detail.get('type', 'Error')}: {detail.get('message', detail)}"
        else:
            message = str(detail)
        super().__init__(message)


class ServiceClient:
    def __init__(self, server: str = None):
        self._server = server.rstrip("/") if server else None
        self._app = None
        if self._server is None:
            from .app import create_app

            self._app = create_app()

    def request(self, method: str, path: str, payload: dict = None) -> dict:
        if self._server is not None:
            with httpx.Client(base_url=self._server, timeout=None) as client:
                response = client.request(method, path, json=payload)
        else:
            response = asyncio.run(self._asgi_request(method, path, payload))
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise ServiceError(response.status_code, detail)
        return response.json()

    async def _asgi_request(self, method: str, path: str, payload: dict):
        transport = httpx.ASGITransport(app=self._app)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://winseg", timeout=None) as client:
            return await client.request(method, path, json=payload)

    def get(self, path: str) -> dict:
        return self.request("GET", path)

    def post(self, path: str, payload: dict) -> dict:
        return self.request("POST", path, payload)
