"""HTTP client for a remote reasoning oracle.

Wire format: ``POST {endpoint}/answer`` with JSON ``{"think": ..., "question": ...}``;
a 200 response must carry JSON ``{"answer": "<string>"}``.
"""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from typing import Callable

from ..cot_filter import OracleError

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = 1.0


class _Retryable(Exception):
    pass


class RemoteOracle:
    """Callable ``(think, question) -> answer`` backed by an HTTP service.

    Network errors, timeouts and 5xx/429 responses are retried up to
    ``retries`` times, sleeping ``backoff * 2**attempt`` seconds in between
    (1 s, 2 s, 4 s by default). Any other non-200 status or a body without a
    string ``answer`` fails immediately. Every failure raises
    :class:`OracleError`; nothing is ever turned into an empty answer.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = DEFAULT_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise ValueError("remote oracle needs an endpoint URL")
        self.url = endpoint.rstrip("/") + "/answer"
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep

    def _once(self, body: bytes) -> str:
        req = urllib.request.Request(
            self.url, data=body, method="POST", headers={"Content-Type": "application/json; charset=utf-8"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                status, payload = resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code >= 500 or exc.code == 429:
                raise _Retryable(f"HTTP {exc.code}") from exc
            raise OracleError(f"oracle returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise _Retryable(str(exc)) from exc
        if status != 200:
            raise OracleError(f"oracle returned HTTP {status}")
        try:
            answer = json.loads(payload.decode("utf-8"))["answer"]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise OracleError("oracle response is not a JSON object with an 'answer' field") from exc
        if not isinstance(answer, str):
            raise OracleError("oracle 'answer' field is not a string")
        return answer

    def __call__(self, think: str, question: str) -> str:
        body = json.dumps({"think": think, "question": question}, ensure_ascii=False).encode("utf-8")
        for attempt in range(self.retries + 1):
            try:
                return self._once(body)
            except _Retryable as exc:
                if attempt == self.retries:
                    raise OracleError(f"oracle unavailable after {self.retries} retries: {exc}") from exc
                delay = self.backoff * 2**attempt
                log.info("oracle attempt %d failed (%s); retrying in %.1fs", attempt + 1, exc, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")


def oracle_client_answer(endpoint: str, think: str, question: str, **kwargs) -> str:
    return RemoteOracle(endpoint, **kwargs)(think, question)
