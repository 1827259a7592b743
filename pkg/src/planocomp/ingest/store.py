"""Write-once content-addressed object store and an append-only JSONL report log."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Iterator


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class ObjectStore:
    """Blobs stored under ``objects/<first two hex>/<digest>``; never rewritten."""

    def __init__(self, root: str | Path):
        self.root = Path(root) / "objects"
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, digest: str) -> Path:
        if len(digest) != 64 or any(c not in "0123456789abcdef" for c in digest):
            raise ValueError(f"not a sha256 digest: {digest!r}")
        return self.root / digest[:2] / digest

    def __contains__(self, digest: str) -> bool:
        return self.path(digest).is_file()

    def put(self, data: bytes) -> tuple[str, bool]:
        """Store ``data``; returns its digest and whether it was new."""
        digest = sha256_hex(data)
        target = self.path(digest)
        if target.is_file():
            return digest, False
        target.parent.mkdir(exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.chmod(tmp, 0o444)
            try:
                # link fails if a concurrent writer got there first, which is fine
                os.link(tmp, target)
                created = True
            except FileExistsError:
                created = False
        finally:
            os.unlink(tmp)
        return digest, created

    def get(self, digest: str) -> bytes:
        try:
            return self.path(digest).read_bytes()
        except FileNotFoundError:
            raise KeyError(digest) from None


class ReportLog:
    """Line-delimited JSON records, only ever appended to.

    Each record carries a ``job_id``; the latest record for a job is its
    current state.
    """

    def __init__(self, root: str | Path, name: str = "reports.jsonl"):
        self.path = Path(root) / name
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        if "job_id" not in record:
            raise ValueError("records need a job_id")
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        with self._lock, open(self.path, "a") as f:
            f.write(line + "\n")
            f.flush()
            os.fsync(f.fileno())

    def __iter__(self) -> Iterator[dict]:
        if not self.path.exists():
            return
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    # a torn final line after a crash; later lines are still valid
                    continue

    def latest(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for rec in self:
            out[rec["job_id"]] = rec
        return out
