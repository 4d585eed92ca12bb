"""Seams for the external models: phrase extraction, detection, captioning.

Each capability has a file-backed fixture implementation and an HTTP one.
The HTTP protocol is one POST endpoint per capability whose bodies reuse the
JSONL record schemas:

    POST {base}/extract   instruction record      -> {"phrases": [{"text","start","end"}]}
    POST {base}/detect    DetectRequest record    -> candidates record
    POST {base}/caption   {"image_ref"}           -> {"caption"}
"""
from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import httpx

from .alignment import Candidate
from .errors import ClientUnavailable, ValidationError
from .instruction import TextInstruction
from .io import AugmentRecord, read_jsonl


@dataclass(frozen=True)
class DetectRequest:
    instruction_id: str
    phrase_index: int
    phrase: str
    nodes: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "instruction_id": self.instruction_id,
            "phrase_index": self.phrase_index,
            "phrase": self.phrase,
            "nodes": list(self.nodes),
        }


class ExtractorClient(Protocol):
    def extract(self, instruction: TextInstruction) -> Sequence[Mapping]: ...


class DetectorClient(Protocol):
    def detect(self, request: DetectRequest) -> list[Candidate]: ...


class CaptionerClient(Protocol):
    def caption(self, image_ref: str) -> str: ...


def _load_fixture(path) -> list[dict]:
    if not os.path.exists(path):
        raise ClientUnavailable(f"fixture file {path} not found")
    return read_jsonl(path)


class FixtureExtractor:
    """Phrases from a JSONL file of ``{"id", "phrases"}`` records."""

    def __init__(self, records: Mapping[str, list]):
        self.records = dict(records)

    @classmethod
    def from_file(cls, path) -> "FixtureExtractor":
        return cls({str(r["id"]): r.get("phrases", []) for r in _load_fixture(path)})

    def extract(self, instruction: TextInstruction):
        return list(self.records.get(instruction.id, []))


class FixtureDetector:
    """Candidates from a candidates.jsonl file, keyed by (instruction, phrase)."""

    def __init__(self, table: Mapping[tuple[str, int], Sequence[Candidate]]):
        self.table = {k: tuple(v) for k, v in table.items()}

    @classmethod
    def from_records(cls, records) -> "FixtureDetector":
        table: dict = {}
        for r in records:
            key = (str(r["instruction_id"]), int(r["phrase_index"]))
            table.setdefault(key, []).extend(Candidate.from_record(c) for c in r["candidates"])
        return cls(table)

    @classmethod
    def from_file(cls, path) -> "FixtureDetector":
        return cls.from_records(_load_fixture(path))

    def detect(self, request: DetectRequest) -> list[Candidate]:
        return list(self.table.get((request.instruction_id, request.phrase_index), ()))


class FixtureCaptioner:
    def __init__(self, captions: Mapping[str, str]):
        self.captions = dict(captions)

    @classmethod
    def from_file(cls, path) -> "FixtureCaptioner":
        return cls({str(r["image_ref"]): str(r["caption"]) for r in _load_fixture(path)})

    def caption(self, image_ref: str) -> str:
        return self.captions.get(image_ref, "")


class _HttpClient:
    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 2,
                 transport: httpx.BaseTransport | None = None, backoff: float = 0.5):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def _post(self, endpoint: str, body: dict) -> dict:
        url = f"{self.base_url}/{endpoint}"
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._http.post(url, json=body)
                if resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                else:
                    resp.raise_for_status()
                    return resp.json()
            except httpx.HTTPStatusError as exc:
                raise ClientUnavailable(f"{url} rejected the request: {exc.response.status_code}") from exc
            except (httpx.TransportError, ValueError) as exc:
                last = repr(exc)
            if attempt < self.retries and self.backoff:
                time.sleep(self.backoff * 2**attempt)
        raise ClientUnavailable(f"{url} unavailable after {self.retries + 1} attempts: {last}")

    def close(self):
        self._http.close()


class HttpExtractor(_HttpClient):
    def extract(self, instruction: TextInstruction):
        return self._post("extract", instruction.to_record()).get("phrases", [])


class HttpDetector(_HttpClient):
    def detect(self, request: DetectRequest) -> list[Candidate]:
        out = self._post("detect", request.to_record())
        try:
            return [Candidate.from_record(c) for c in out.get("candidates", [])]
        except ValidationError as exc:
            raise ValidationError(f"detector returned an invalid candidate: {exc}") from exc


class HttpCaptioner(_HttpClient):
    def caption(self, image_ref: str) -> str:
        return str(self._post("caption", {"image_ref": image_ref}).get("caption", ""))


class Serialized:
    """Wrap a client that is not safe for concurrent calls."""

    def __init__(self, client):
        self._client = client
        self._lock = threading.Lock()

    def __getattr__(self, name):
        attr = getattr(self._client, name)
        if not callable(attr):
            return attr

        def call(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return call


class AugmentStore:
    """Generated image variants per original image reference."""

    def __init__(self, variants: Mapping[str, Sequence[str]]):
        self._variants = {}
        for ref, vs in variants.items():
            vs = tuple(vs)
            if ref in vs:
                raise ValidationError(f"variants of {ref!r} include the original")
            self._variants[ref] = vs

    @classmethod
    def from_file(cls, path) -> "AugmentStore":
        recs = [AugmentRecord.from_record(r) for r in read_jsonl(path)]
        return cls({r.image_ref: r.variants for r in recs})

    def variants(self, image_ref: str) -> tuple[str, ...]:
        return self._variants.get(image_ref, ())

    def __len__(self):
        return len(self._variants)
