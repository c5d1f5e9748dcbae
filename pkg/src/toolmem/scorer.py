"""Hook for an external image-description alignment scorer.

The scorer itself is not part of this package. Two transports are supported:

* subprocess: one JSON object per line on stdin,
  ``{"image": "<locator>", "description": "..."}``, answered by one line per
  input on stdout, ``{"score": <float>}``;
* HTTP: ``POST <url>`` with ``{"pairs": [{"image": ..., "description": ...}]}``
  answered by ``{"scores": [<float>, ...]}``.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from typing import Protocol, Sequence

import httpx

from .errors import ToolMemError


class ScorerError(ToolMemError):
    pass


class AlignmentScorer(Protocol):
    def score(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


def _check(scores: list, expected: int) -> list[float]:
    if len(scores) != expected:
        raise ScorerError(f"scorer returned {len(scores)} scores for {expected} pairs")
    out = [float(s) for s in scores]
    if not all(math.isfinite(s) for s in out):
        raise ScorerError("scorer returned a non-finite score")
    return out


class SubprocessScorer:
    def __init__(self, command: str | Sequence[str], timeout: float = 600.0) -> None:
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def score(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        if not pairs:
            return []
        payload = "".join(json.dumps({"image": i, "description": d}) + "\n" for i, d in pairs)
        try:
            proc = subprocess.run(
                self.command, input=payload, capture_output=True, text=True,
                timeout=self.timeout, check=True,
            )
        except (OSError, subprocess.SubprocessError) as exc:
            raise ScorerError(f"scorer command failed: {exc}") from exc
        try:
            scores = [json.loads(line)["score"] for line in proc.stdout.splitlines() if line.strip()]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ScorerError(f"bad scorer output: {exc}") from exc
        return _check(scores, len(pairs))


class HttpScorer:
    def __init__(self, url: str, client: httpx.Client | None = None, timeout: float = 120.0) -> None:
        self.url = url
        self._client = client or httpx.Client(timeout=timeout)

    def score(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        if not pairs:
            return []
        body = {"pairs": [{"image": i, "description": d} for i, d in pairs]}
        try:
            resp = self._client.post(self.url, json=body)
            resp.raise_for_status()
            scores = resp.json()["scores"]
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise ScorerError(f"scorer endpoint failed: {exc}") from exc
        return _check(list(scores), len(pairs))
