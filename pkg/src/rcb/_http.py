"""Small JSON-over-HTTP client shared by the embedding and LLM providers.

Requests are idempotent POSTs retried with exponential backoff on connection
failures and 5xx responses.  Concurrency is capped by a semaphore so callers
may fan out across threads without overwhelming the endpoint.  The bearer
token is read from the ``RCB_API_KEY`` environment variable when present.
"""

from __future__ import annotations

import os
import threading
import time

import requests

from .errors import ClientError

API_KEY_ENV = "RCB_API_KEY"


class HttpJsonClient:
    def __init__(
        self,
        base_url: str,
        max_retries: int = 3,
        backoff: float = 0.25,
        max_concurrency: int = 4,
        timeout: float = 30.0,
        session=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._semaphore = threading.Semaphore(max_concurrency)
        self._session = session if session is not None else requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def post_json(self, path: str, payload: dict) -> dict:
        """POST ``payload`` to ``base_url + path``; return the decoded body.

        Retries up to ``max_retries`` attempts on connection errors and 5xx
        statuses, then raises :class:`ClientError` carrying the last failure
        detail.  Non-retryable statuses (4xx) fail immediately.
        """
        url = f"{self.base_url}{path}"
        last_detail = "no attempt made"
        for attempt in range(self.max_retries):
            try:
                with self._semaphore:
                    response = self._session.post(
                        url, json=payload, headers=self._headers(), timeout=self.timeout
                    )
            except Exception as exc:  # connection-level failure
                last_detail = f"connection error: {exc}"
            else:
                status = getattr(response, "status_code", 0)
                if 200 <= status < 300:
                    try:
                        return response.json()
                    except Exception as exc:
                        raise ClientError(f"POST {url}: invalid JSON body: {exc}") from None
                last_detail = f"HTTP {status}: {getattr(response, 'text', '')[:200]}"
                if status < 500:
                    raise ClientError(f"POST {url}: {last_detail}")
            if attempt + 1 < self.max_retries and self.backoff > 0:
                time.sleep(self.backoff * (2**attempt))
        raise ClientError(f"POST {url} failed after {self.max_retries} attempts; last: {last_detail}")
