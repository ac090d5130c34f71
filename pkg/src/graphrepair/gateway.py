"""Text-generation backends: a local inference server over HTTP and scripted mocks.

The HTTP wire format is a JSON POST::

    {"model": ..., "system": ..., "prompt": ..., "stream": false,
     "options": {"temperature": 0.4, "num_predict": ...}}

Field names in the response are read through an :class:`Adapter`; the default
matches Ollama's ``/api/generate`` (durations in nanoseconds).
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol

import requests
import yaml

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "GRAPHREPAIR_ENDPOINT"
DEFAULT_ENDPOINT = "http://localhost:11434/api/generate"


class GatewayError(Exception):
    pass


class GatewayTimeout(GatewayError):
    pass


class HttpError(GatewayError):
    def __init__(self, status: int | None, message: str = ""):
        super().__init__(f"HTTP {status}: {message}" if status else message)
        self.status = status


class MalformedBackendResponse(GatewayError):
    pass


class DuplicateName(GatewayError, ValueError):
    pass


class UnknownModel(GatewayError, KeyError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    name: str
    endpoint: str | None = None
    temperature: float = 0.4
    max_tokens: int | None = None
    timeout: float = 300.0
    retries: int = 2
    model: str | None = None  # backend model id; defaults to name
    mock: str | None = None  # name of a registered mock

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must lie in [0, 2], got {self.temperature}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")

    @property
    def backend_model(self) -> str:
        return self.model or self.name

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class GenerationResult:
    text: str
    model: str
    prompt_eval_seconds: float = 0.0
    eval_seconds: float = 0.0
    completion_tokens: int = 0
    prompt_tokens: int | None = None
    wall_seconds: float = 0.0
    estimated: bool = False  # token counts / durations not reported by the backend

    def __post_init__(self) -> None:
        for name in ("prompt_eval_seconds", "eval_seconds", "wall_seconds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.completion_tokens < 0:
            raise ValueError("completion_tokens must be non-negative")


def estimate_tokens(text: str) -> int:
    return len(text.split())


# --------------------------------------------------------------------------
# HTTP backend


@dataclass(frozen=True)
class Adapter:
    """Where to find things in a backend's JSON response."""

    text: str = "response"
    prompt_eval_duration: str | None = "prompt_eval_duration"
    eval_duration: str | None = "eval_duration"
    completion_tokens: str | None = "eval_count"
    prompt_tokens: str | None = "prompt_eval_count"
    duration_scale: float = 1e-9

    @classmethod
    def load(cls, path) -> Adapter:
        with open(path, encoding="utf-8") as fh:
            return cls(**(yaml.safe_load(fh) or {}))


def _dig(data: Any, path: str | None) -> Any:
    if path is None:
        return None
    for part in path.split("."):
        if isinstance(data, list):
            try:
                data = data[int(part)]
            except (ValueError, IndexError):
                return None
        elif isinstance(data, dict):
            data = data.get(part)
        else:
            return None
    return data


def _http_generate(config: ModelConfig, endpoint: str, adapter: Adapter, system: str, user: str) -> GenerationResult:
    options: dict[str, Any] = {"temperature": config.temperature}
    if config.max_tokens is not None:
        options["num_predict"] = config.max_tokens
    payload = {
        "model": config.backend_model,
        "system": system,
        "prompt": user,
        "stream": False,
        "options": options,
    }
    start = time.perf_counter()
    try:
        resp = requests.post(endpoint, json=payload, timeout=config.timeout)
    except requests.Timeout as exc:
        raise GatewayTimeout(f"{endpoint}: {exc}") from None
    except requests.RequestException as exc:
        raise HttpError(None, f"{endpoint}: {exc}") from None
    wall = time.perf_counter() - start
    if resp.status_code != 200:
        raise HttpError(resp.status_code, resp.text[:200])
    try:
        data = resp.json()
    except ValueError:
        raise MalformedBackendResponse("response is not JSON") from None
    text = _dig(data, adapter.text)
    if not isinstance(text, str):
        raise MalformedBackendResponse(f"no text at {adapter.text!r}")

    estimated = False
    pe = _dig(data, adapter.prompt_eval_duration)
    ev = _dig(data, adapter.eval_duration)
    if isinstance(ev, (int, float)):
        eval_s = ev * adapter.duration_scale
        prompt_s = pe * adapter.duration_scale if isinstance(pe, (int, float)) else 0.0
    else:
        eval_s, prompt_s, estimated = wall, 0.0, True
    tokens = _dig(data, adapter.completion_tokens)
    if not isinstance(tokens, int):
        tokens, estimated = estimate_tokens(text), True
    prompt_tokens = _dig(data, adapter.prompt_tokens)
    return GenerationResult(
        text=text,
        model=config.name,
        prompt_eval_seconds=max(prompt_s, 0.0),
        eval_seconds=max(eval_s, 0.0),
        completion_tokens=tokens,
        prompt_tokens=prompt_tokens if isinstance(prompt_tokens, int) else None,
        wall_seconds=wall,
        estimated=estimated,
    )


# --------------------------------------------------------------------------
# mocks


class MockBehavior(Protocol):
    def __call__(self, system: str, user: str, violation_id: str | None) -> str: ...


def fixed_text(text: str) -> MockBehavior:
    return lambda system, user, violation_id: text


def echo() -> MockBehavior:
    return lambda system, user, violation_id: user


def lookup_table(table: Mapping[str, str], default: str = "") -> MockBehavior:
    table = dict(table)
    return lambda system, user, violation_id: table.get(violation_id or "", default)


_EAGER_LINES = (
    "DEL_EDGE | [ra] | -",
    "DEL_EDGE | [rc] | -",
    "UPD_NODE | p | allergy_checked=true",
    "REMOVE_EDGE | [rm] | -",
    "UPD_NODE | m | status=reviewed",
    "MODIFY_NODE | i | verified=false",
    "ADD_NODE | n1 | label=Note text=allergy",
    "UPDATE_EDGE | [ra] | confirmed=false",
    "UPD_EDGE | [rm] | flagged=true",
)


def failure_mode(kind: str, truth: Mapping[str, str] | None = None) -> MockBehavior:
    """Scripted failure patterns.

    ``eager``: nine operations, three with disallowed op codes.
    ``indecisive``: two alternative blocks; the first deletes the medication edge.
    ``hallucinating``: the correct deletion plus an invented node update.
    ``wrong_edge``: deletes the medication edge.
    ``truth`` maps violation ids to the edge variable of the correct repair.
    """
    truth = dict(truth or {})
    if kind == "eager":
        text = "<repairs>\n" + "\n".join(_EAGER_LINES) + "\n</repairs>"
        return fixed_text(text)
    if kind == "wrong_edge":
        return fixed_text("<repairs>\nDEL_EDGE | [rm] | -\n</repairs>")
    if kind == "indecisive":
        def indecisive(system, user, violation_id):
            var = truth.get(violation_id or "", "ra")
            return (
                "Option 1:\n<repairs>\nDEL_EDGE | [rm] | -\n</repairs>\n"
                f"Option 2:\n<repairs>\nDEL_EDGE | [{var}] | -\n</repairs>"
            )
        return indecisive
    if kind == "hallucinating":
        def hallucinating(system, user, violation_id):
            var = truth.get(violation_id or "", "ra")
            return f"<repairs>\nDEL_EDGE | [{var}] | -\nUPD_NODE | m | status=ok\n</repairs>"
        return hallucinating
    raise ValueError(f"unknown failure mode {kind!r}")


@dataclass
class _Mock:
    behavior: Callable[[str, str, str | None], str]
    # synthetic clock: seconds per prompt character and per output token
    prompt_rate: float = 1e-4
    token_rate: float = 0.02


# --------------------------------------------------------------------------


class Gateway:
    """Dispatches generation requests to mocks or HTTP endpoints.

    Safe to share between threads.  At most ``concurrency`` requests are in
    flight per endpoint.
    """

    def __init__(self, *, adapter: Adapter | None = None, concurrency: int = 1, endpoint: str | None = None):
        if concurrency < 1:
            raise ValueError("concurrency must be at least 1")
        self.adapter = adapter or Adapter()
        self.concurrency = concurrency
        self.default_endpoint = endpoint or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT
        self._mocks: dict[str, _Mock] = {}
        self._slots: dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()

    def register_mock(self, name: str, behavior: MockBehavior, *, prompt_rate: float = 1e-4, token_rate: float = 0.02) -> None:
        with self._lock:
            if name in self._mocks:
                raise DuplicateName(f"mock {name!r} already registered")
            self._mocks[name] = _Mock(behavior, prompt_rate, token_rate)

    def has_mock(self, name: str) -> bool:
        return name in self._mocks

    def endpoint_for(self, config: ModelConfig) -> str:
        return config.endpoint or self.default_endpoint

    def _slot(self, endpoint: str) -> threading.BoundedSemaphore:
        with self._lock:
            if endpoint not in self._slots:
                self._slots[endpoint] = threading.BoundedSemaphore(self.concurrency)
            return self._slots[endpoint]

    def generate(self, config: ModelConfig, system: str, user: str, *, violation_id: str | None = None) -> GenerationResult:
        mock_name = config.mock or (config.name if config.endpoint is None and config.name in self._mocks else None)
        if mock_name is not None:
            mock = self._mocks.get(mock_name)
            if mock is None:
                raise UnknownModel(f"no mock registered as {mock_name!r}")
            return self._mock_generate(config, mock, system, user, violation_id)

        endpoint = self.endpoint_for(config)
        attempts = config.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                with self._slot(endpoint):
                    return _http_generate(config, endpoint, self.adapter, system, user)
            except GatewayError as exc:
                if attempt == attempts:
                    raise
                logger.warning("%s attempt %d/%d failed: %s", config.name, attempt, attempts, exc)
                time.sleep(min(0.5 * attempt, 2.0))
        raise AssertionError("unreachable")

    def _mock_generate(self, config, mock: _Mock, system, user, violation_id) -> GenerationResult:
        text = mock.behavior(system, user, violation_id)
        if not isinstance(text, str):
            raise MalformedBackendResponse(f"mock {config.name!r} returned {type(text).__name__}")
        tokens = estimate_tokens(text)
        prompt_s = round((len(system) + len(user)) * mock.prompt_rate, 6)
        eval_s = round(tokens * mock.token_rate, 6)
        return GenerationResult(
            text=text,
            model=config.name,
            prompt_eval_seconds=prompt_s,
            eval_seconds=eval_s,
            completion_tokens=tokens,
            prompt_tokens=estimate_tokens(system) + estimate_tokens(user),
            wall_seconds=prompt_s + eval_s,
            estimated=False,
        )
