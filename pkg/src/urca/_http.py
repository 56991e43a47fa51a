"""Shared JSON-over-HTTP POST with the retry policy used by every remote backend."""

from __future__ import annotations

import logging
import os
import time

import requests

logger = logging.getLogger(__name__)

API_KEY_ENV = "URCA_API_KEY"

MAX_ATTEMPTS = 3
BACKOFF_BASE_SECONDS = 0.5


class TransportError(Exception):
    """A remote call failed after exhausting retries (or failed non-retryably)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


def _auth_headers() -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(API_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def post_json(
    url: str,
    payload: dict,
    timeout: float,
    session: requests.Session | None = None,
    sleep=time.sleep,
) -> dict:
    """POST a JSON payload, retrying transport errors and 429/5xx responses.

    Up to MAX_ATTEMPTS attempts with exponential backoff starting at
    BACKOFF_BASE_SECONDS. Other HTTP errors fail immediately.
    """
    post = session.post if session is not None else requests.post
    last_error: TransportError | None = None
    for attempt in range(MAX_ATTEMPTS):
        if attempt > 0:
            sleep(BACKOFF_BASE_SECONDS * 2 ** (attempt - 1))
        try:
            response = post(url, json=payload, headers=_auth_headers(), timeout=timeout)
        except requests.RequestException as exc:
            last_error = TransportError(f"transport error calling {url}: {exc}")
            logger.warning("attempt %d/%d failed: %s", attempt + 1, MAX_ATTEMPTS, exc)
            continue
        if response.status_code == 429 or response.status_code >= 500:
            last_error = TransportError(
                f"HTTP {response.status_code} from {url}", status=response.status_code
            )
            logger.warning("attempt %d/%d got HTTP %d", attempt + 1, MAX_ATTEMPTS, response.status_code)
            continue
        if response.status_code >= 400:
            raise TransportError(
                f"HTTP {response.status_code} from {url}: {response.text[:200]}",
                status=response.status_code,
            )
        try:
            return response.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON response from {url}: {exc}") from exc
    assert last_error is not None
    raise last_error
