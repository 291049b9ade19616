"""Minimal HTTP client for text-completion endpoints.

Used by the extraction workflow (send a structuring prompt, get raw text back)
and by pairwise comparison scoring.  The wire format is deliberately simple:
POST a JSON object ``{"prompt": ...}`` and expect ``{"text": ...}`` in return.
"""

from __future__ import annotations

import requests

from .errors import ContractError, EvaluationError


class CompletionClient:
    """Thin wrapper over one completion endpoint."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 30.0):
        if not endpoint or not endpoint.startswith(("http://", "https://")):
            raise ContractError(f"endpoint must be an http(s) URL, got {endpoint!r}")
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        """POST the prompt, return the completion text.

        Transport failures, non-2xx statuses, bad JSON, and responses missing
        the ``text`` field all surface as :class:`EvaluationError` so callers
        can treat the endpoint as a single fallible dependency.
        """
        if not prompt:
            raise ContractError("prompt must be non-empty")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(self.endpoint, json={"prompt": prompt},
                                     headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise EvaluationError(f"completion request failed: {exc}") from exc
        if response.status_code // 100 != 2:
            raise EvaluationError(
                f"completion endpoint returned HTTP {response.status_code}: "
                f"{response.text[:200]}")
        try:
            payload = response.json()
        except ValueError as exc:
            raise EvaluationError(f"completion response is not JSON: {exc}") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise EvaluationError("completion response must be an object with a 'text' string")
        return payload["text"]
