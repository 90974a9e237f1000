"""HTTP client for an external text-generation service.

The wire contract is a vendor-neutral JSON POST:

    request:  {"max_tokens": int, "prompt": str, "temperature": 0.0}
    response: {"text": str}

Decoding is always greedy: temperature is pinned to 0.0 and any other
configured value is overridden with a warning, so identical prompts yield
identical requests byte for byte.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import requests

from .errors import GenerationError

ENDPOINT_ENV_VAR = "CEMRAG_ENDPOINT"


@dataclass(frozen=True)
class GenerationConfig:
    """Connection and decoding settings for the generation service."""

    endpoint: str | None = None
    temperature: float = 0.0
    max_tokens: int = 256
    timeout: float = 30.0
    retries: int = 2
    backoff_base: float = 0.25

    def __post_init__(self):
        if self.temperature != 0.0:
            warnings.warn(
                f"temperature {self.temperature} overridden to 0.0 (greedy decoding)",
                stacklevel=2,
            )
            object.__setattr__(self, "temperature", 0.0)
        if self.max_tokens <= 0:
            raise GenerationError(f"max_tokens must be positive, got {self.max_tokens}")
        if self.retries < 0:
            raise GenerationError(f"retries must be >= 0, got {self.retries}")

    def resolve_endpoint(self) -> str:
        endpoint = self.endpoint or os.environ.get(ENDPOINT_ENV_VAR)
        if not endpoint:
            raise GenerationError(
                f"no endpoint configured and {ENDPOINT_ENV_VAR} is not set"
            )
        return endpoint


@dataclass(frozen=True)
class GeneratedReport:
    """One generated report with transport diagnostics."""

    id: str
    text: str
    latency: float
    attempt_count: int


def request_body(prompt: str, config: GenerationConfig) -> bytes:
    """Canonical request bytes: sorted keys, no whitespace, no volatile fields."""
    return json.dumps(
        {"max_tokens": config.max_tokens, "prompt": prompt, "temperature": 0.0},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")


def generate(
    prompt: str, config: GenerationConfig, record_id: str = ""
) -> GeneratedReport:
    """POST one prompt, retrying transport failures and 5xx responses.

    Exponential backoff between attempts; 4xx responses, malformed
    payloads, and empty text fail immediately (the server answered, so a
    retry cannot help).
    """
    endpoint = config.resolve_endpoint()
    body = request_body(prompt, config)
    last_error: Exception | None = None
    attempts = 0
    for attempt in range(config.retries + 1):
        if attempt > 0 and config.backoff_base > 0:
            time.sleep(config.backoff_base * 2 ** (attempt - 1))
        attempts += 1
        started = time.perf_counter()
        try:
            response = requests.post(
                endpoint,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=config.timeout,
            )
        except requests.RequestException as exc:
            last_error = exc
            continue
        latency = time.perf_counter() - started
        if 400 <= response.status_code < 500:
            raise GenerationError(
                f"{record_id or prompt[:40]!r}: HTTP {response.status_code} "
                f"from {endpoint} (not retried)"
            )
        if response.status_code != 200:
            last_error = GenerationError(
                f"HTTP {response.status_code} from {endpoint}"
            )
            continue
        try:
            payload = response.json()
            text = payload["text"]
        except (ValueError, KeyError, TypeError):
            raise GenerationError(
                f"{record_id or prompt[:40]!r}: malformed response "
                f"{response.text[:200]!r}"
            ) from None
        if not isinstance(text, str) or not text:
            raise GenerationError(f"{record_id or prompt[:40]!r}: empty generated text")
        return GeneratedReport(
            id=record_id, text=text, latency=latency, attempt_count=attempts
        )
    raise GenerationError(
        f"{record_id or prompt[:40]!r}: gave up after {attempts} attempts: {last_error}"
    )


def generate_batch(
    items: Sequence[tuple[str, str]],
    config: GenerationConfig,
    parallel: bool = False,
    max_in_flight: int = 4,
) -> list[GeneratedReport]:
    """Generate for (id, prompt) pairs, output ordered by input order.

    Sequential by default; the parallel mode bounds in-flight requests and
    still returns results in input order.
    """
    if not parallel:
        return [generate(prompt, config, record_id) for record_id, prompt in items]
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = [pool.submit(generate, prompt, config, rid) for rid, prompt in items]
        return [f.result() for f in futures]
