"""Chat-completions inference with concurrency, retries, and caching.

The runner takes prompt jobs, fans them out over a bounded thread pool,
and returns one completion record per job in job order. Successful
replies are cached on disk keyed by payload content plus a decoding
fingerprint, so reruns and ablation reruns never repeat a request.
"""

import hashlib
import json
import os
import shutil
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from zsner.errors import AuthError, CacheError, RunDirectoryError

STATUS_OK = "ok"
STATUS_ERROR = "error"

# error kinds attached to failed records
KIND_NETWORK = "network"
KIND_TIMEOUT = "timeout"
KIND_RATE_LIMIT = "rate_limit"
KIND_SERVER = "server"
KIND_AUTH = "auth"
KIND_REQUEST = "request"
KIND_TOO_LONG = "too_long"
KIND_PROTOCOL = "protocol"

_TOO_LONG_MARKERS = (
    "context length",
    "maximum context",
    "context window",
    "too many tokens",
    "reduce the length",
)


class BackendError(Exception):
    """Raised by backends; transient errors are retried, fatal ones are not."""

    def __init__(self, message: str, kind: str, transient: bool):
        super().__init__(message)
        self.kind = kind
        self.transient = transient


@dataclass
class BackendConfig:
    endpoint_url: str
    model_name: str
    auth_env: str = ""
    max_parallel: int = 4
    requests_per_minute: int | None = None
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    max_tokens: int = 512
    retry_base_delay: float = 0.5

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


@dataclass
class CompletionRecord:
    job_id: str
    raw_text: str
    status: str
    error_kind: str = ""
    latency_ms: int = 0
    attempt_count: int = 1
    fingerprint: str = ""
    timestamp: str = ""

    def to_record(self) -> dict:
        return {
            "job_id": self.job_id,
            "raw_text": self.raw_text,
            "status": self.status,
            "error_kind": self.error_kind,
            "latency_ms": self.latency_ms,
            "attempt_count": self.attempt_count,
            "fingerprint": self.fingerprint,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CompletionRecord":
        return cls(
            job_id=rec["job_id"],
            raw_text=rec.get("raw_text", ""),
            status=rec.get("status", STATUS_ERROR),
            error_kind=rec.get("error_kind", ""),
            latency_ms=rec.get("latency_ms", 0),
            attempt_count=rec.get("attempt_count", 1),
            fingerprint=rec.get("fingerprint", ""),
            timestamp=rec.get("timestamp", ""),
        )


def canonical_record(rec: dict) -> dict:
    """Record content minus the run-specific fields (for comparing reruns)."""
    return {k: v for k, v in rec.items() if k not in ("timestamp", "latency_ms")}


def decoding_fingerprint(model_name: str, params: dict) -> str:
    digest = hashlib.sha256(
        json.dumps(params, sort_keys=True).encode("utf-8")
    ).hexdigest()[:8]
    return f"{model_name}:{digest}"


def cache_key(payload: dict, fingerprint: str) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\x1e" + fingerprint
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# response cache


class ResponseCache:
    """One JSON file per successful completion, atomic writes."""

    def __init__(self, directory):
        self.directory = Path(directory)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            probe = self.directory / ".write-probe"
            probe.write_text("", encoding="utf-8")
            probe.unlink()
        except OSError as exc:
            raise CacheError(f"cache directory {self.directory} not writable: {exc}")

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            return None  # torn write from a killed run; treat as a miss

    def put(self, key: str, record: dict) -> None:
        path = self._path(key)
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(record, fh, ensure_ascii=False)
        os.replace(tmp, path)

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


# --------------------------------------------------------------------------
# rate limiter


class RateLimiter:
    """Sliding-window limiter: at most `per_minute` acquisitions per 60s."""

    def __init__(self, per_minute: int, clock=time.monotonic, sleep=time.sleep):
        if per_minute < 1:
            raise ValueError("per_minute must be >= 1")
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self.sleep(max(wait, 0.0))


# --------------------------------------------------------------------------
# backends


class HttpBackend:
    """OpenAI-compatible /chat/completions over requests."""

    def __init__(self, config: BackendConfig, session=None):
        import requests

        self.config = config
        self.session = session or requests.Session()
        self._requests = requests
        api_key = ""
        if config.auth_env:
            api_key = os.environ.get(config.auth_env, "")
            if not api_key:
                raise AuthError(
                    f"environment variable {config.auth_env!r} is not set; "
                    f"export the API key before running"
                )
        self.api_key = api_key
        self.params = {
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        self.fingerprint = decoding_fingerprint(config.model_name, self.params)

    def complete(self, job) -> str:
        body = dict(job.payload)
        body["model"] = self.config.model_name
        body.update(self.params)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(
                self.config.endpoint_url,
                json=body,
                headers=headers,
                timeout=self.config.timeout,
            )
        except self._requests.Timeout as exc:
            raise BackendError(str(exc), KIND_TIMEOUT, transient=True)
        except self._requests.RequestException as exc:
            raise BackendError(str(exc), KIND_NETWORK, transient=True)

        if resp.status_code == 429:
            raise BackendError("rate limited", KIND_RATE_LIMIT, transient=True)
        if resp.status_code >= 500:
            raise BackendError(
                f"server error {resp.status_code}", KIND_SERVER, transient=True
            )
        if resp.status_code in (401, 403):
            raise BackendError(
                f"auth rejected ({resp.status_code})", KIND_AUTH, transient=False
            )
        if resp.status_code >= 400:
            text = resp.text[:2000]
            lowered = text.lower()
            if any(marker in lowered for marker in _TOO_LONG_MARKERS):
                raise BackendError(text, KIND_TOO_LONG, transient=False)
            raise BackendError(
                f"request rejected ({resp.status_code}): {text}",
                KIND_REQUEST,
                transient=False,
            )
        try:
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(
                f"malformed completion response: {exc}", KIND_PROTOCOL, transient=True
            )


MOCK_KINDS = ("gold_oracle", "empty", "drop_k", "malformed")


class MockBackend:
    """Deterministic stand-in backends for tests and dry runs.

    gold_oracle replies with the exact gold surfaces for the job's cell,
    empty always replies [], drop_k omits the first k gold mentions, and
    malformed replies with prose that carries no JSON array. Instrumented:
    .calls counts backend invocations, .max_in_flight tracks concurrency.
    """

    def __init__(
        self,
        kind: str,
        gold_surfaces: dict[tuple[str, str], list[str]] | None = None,
        *,
        k: int = 1,
        delay: float = 0.0,
        fail_plan: dict[str, int] | None = None,
    ):
        if kind not in MOCK_KINDS:
            raise ValueError(f"unknown mock kind {kind!r}; expected {MOCK_KINDS}")
        if kind in ("gold_oracle", "drop_k") and gold_surfaces is None:
            raise ValueError(f"mock kind {kind!r} needs gold surfaces")
        self.kind = kind
        self.gold_surfaces = gold_surfaces or {}
        self.k = k
        self.delay = delay
        self.fail_plan = dict(fail_plan or {})
        self.calls = 0
        self.max_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()
        params = {"kind": kind, "k": k if kind == "drop_k" else None}
        self.fingerprint = decoding_fingerprint("mock", params)

    def complete(self, job) -> str:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
            remaining = self.fail_plan.get(job.job_id, 0)
            if remaining > 0:
                self.fail_plan[job.job_id] = remaining - 1
        try:
            if self.delay:
                time.sleep(self.delay)
            if remaining > 0:
                raise BackendError("planned transient failure", KIND_SERVER, True)
            if self.kind == "empty":
                return "[]"
            if self.kind == "malformed":
                return "Non sono presenti entità di questo tipo nel testo."
            surfaces = self.gold_surfaces.get((job.doc_id, job.tag_id), [])
            if self.kind == "drop_k":
                surfaces = surfaces[self.k :]
            return json.dumps(list(surfaces), ensure_ascii=False)
        finally:
            with self._lock:
                self._in_flight -= 1


def gold_surface_index(docs) -> dict[tuple[str, str], list[str]]:
    """(doc_id, tag_id) -> raw gold surfaces, for the oracle mocks."""
    index: dict[tuple[str, str], list[str]] = {}
    for doc in docs:
        for m in doc.mentions:
            index.setdefault((doc.doc_id, m.tag_id), []).append(m.surface)
    return index


# --------------------------------------------------------------------------
# runner


@dataclass
class RunStats:
    cached: int = 0
    fetched: int = 0
    failed: int = 0


def run(
    jobs,
    backend,
    cache: ResponseCache | None = None,
    *,
    max_parallel: int = 4,
    max_retries: int = 3,
    retry_base_delay: float = 0.5,
    limiter: RateLimiter | None = None,
    sleep=time.sleep,
    stats: RunStats | None = None,
) -> list[CompletionRecord]:
    """Execute jobs, returning records aligned with the input order.

    Cache hits cost no backend call and no limiter slot and come back with
    attempt_count 0. Transient failures back off exponentially (base * 2^n)
    up to max_retries extra attempts; a job that still fails yields an
    error record and the rest of the batch proceeds.
    """
    from concurrent.futures import ThreadPoolExecutor

    if max_parallel < 1:
        raise ValueError("max_parallel must be >= 1")
    stats = stats if stats is not None else RunStats()
    fingerprint = getattr(backend, "fingerprint", "")

    def one(job) -> CompletionRecord:
        key = cache_key(job.payload, fingerprint)
        if cache is not None:
            hit = cache.get(key)
            if hit is not None:
                rec = CompletionRecord.from_record(hit)
                rec.job_id = job.job_id
                rec.attempt_count = 0
                with lock:
                    stats.cached += 1
                return rec
        attempts = 0
        while True:
            attempts += 1
            if limiter is not None:
                limiter.acquire()
            started = time.monotonic()
            try:
                raw = backend.complete(job)
            except BackendError as exc:
                if exc.transient and attempts <= max_retries:
                    sleep(retry_base_delay * (2 ** (attempts - 1)))
                    continue
                with lock:
                    stats.failed += 1
                return CompletionRecord(
                    job_id=job.job_id,
                    raw_text="",
                    status=STATUS_ERROR,
                    error_kind=exc.kind,
                    latency_ms=int((time.monotonic() - started) * 1000),
                    attempt_count=attempts,
                    fingerprint=fingerprint,
                    timestamp=_utc_now(),
                )
            rec = CompletionRecord(
                job_id=job.job_id,
                raw_text=raw,
                status=STATUS_OK,
                latency_ms=int((time.monotonic() - started) * 1000),
                attempt_count=attempts,
                fingerprint=fingerprint,
                timestamp=_utc_now(),
            )
            if cache is not None:
                cache.put(key, rec.to_record())
            with lock:
                stats.fetched += 1
            return rec

    lock = threading.Lock()
    with ThreadPoolExecutor(max_workers=max_parallel) as pool:
        return list(pool.map(one, jobs))


# --------------------------------------------------------------------------
# run directory persistence


def prepare_run_dir(run_dir, overwrite: bool = False) -> Path:
    """Claim a run directory before spending backend calls.

    An existing populated directory is refused unless overwrite is set;
    overwriting clears previous outputs but keeps any cache/ subdirectory.
    """
    run_dir = Path(run_dir)
    if run_dir.exists():
        contents = [p for p in run_dir.iterdir() if p.name != "cache"]
        if contents and not overwrite:
            raise RunDirectoryError(
                f"run directory {run_dir} already has outputs; "
                f"pass overwrite to replace them"
            )
        for p in contents:
            if p.is_dir():
                shutil.rmtree(p)
            else:
                p.unlink()
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def persist_run(records, manifest: dict, run_dir, overwrite: bool = False) -> None:
    """Write replies.jsonl and manifest.json into run_dir."""
    run_dir = prepare_run_dir(run_dir, overwrite)
    with open(run_dir / "replies.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_record(), ensure_ascii=False) + "\n")
    manifest = dict(manifest)
    manifest.setdefault("written_at", _utc_now())
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def load_run(run_dir) -> tuple[list[CompletionRecord], dict]:
    run_dir = Path(run_dir)
    replies = run_dir / "replies.jsonl"
    manifest_path = run_dir / "manifest.json"
    if not replies.is_file() or not manifest_path.is_file():
        raise RunDirectoryError(
            f"{run_dir} is not a run directory (need replies.jsonl and manifest.json)"
        )
    records = []
    with open(replies, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(CompletionRecord.from_record(json.loads(line)))
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return records, manifest
