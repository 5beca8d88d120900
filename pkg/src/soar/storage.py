"""Event log persistence, malware vault, engagement and uptime accounting.

Engagement time is measured with a session-gap rule: consecutive hits from one
attacker on one decoy belong to the same session while the gap between them is
below ``gap`` seconds (300 by default). This definition is ours and is
configurable; published engagement figures do not say how they were measured.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .orchestrator import EventKind, OrchestratorEvent

DEFAULT_SESSION_GAP = 300.0


class StorageError(Exception):
    pass


class EmptyFile(StorageError):
    pass


# -- event log ---------------------------------------------------------------


class EventLog:
    """Append-only JSON-lines log; in memory when ``path`` is None."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self.lines: list[str] = []
        self._last_seq = -1
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, ev: OrchestratorEvent) -> None:
        line = ev.to_json()
        if ev.seq <= self._last_seq:
            raise StorageError(f"event seq {ev.seq} out of order")
        self._last_seq = ev.seq
        self.lines.append(line)
        if self._fh is not None:
            self._fh.write(line + "\n")

    def extend(self, events: Iterable[OrchestratorEvent]) -> None:
        for ev in events:
            self.append(ev)

    def events(self) -> list[OrchestratorEvent]:
        return [OrchestratorEvent.from_json(line) for line in self.lines]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __len__(self):
        return len(self.lines)


def read_events(path) -> list[OrchestratorEvent]:
    with open(path, encoding="utf-8") as fh:
        return [OrchestratorEvent.from_json(line) for line in fh if line.strip()]


# -- vault -------------------------------------------------------------------


@dataclass(frozen=True)
class MalwareSample:
    sha256: str
    size: int
    first_seen_ts: float
    instance_id: str
    path: str
    blob: str


class Vault:
    """Content-addressed blob store plus append-only sample metadata.

    With a ``root`` directory, blobs live under ``blobs/<sha256>`` and are written
    to a temporary file then renamed into place.
    """

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self._blobs: dict[str, bytes] = {}
        self.samples: dict[str, MalwareSample] = {}
        self.sample_log: list[dict] = []
        if self.root is not None:
            (self.root / "blobs").mkdir(parents=True, exist_ok=True)

    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        if self.root is None:
            self._blobs.setdefault(digest, bytes(data))
            return digest
        target = self.root / "blobs" / digest
        if not target.exists():
            fd, tmp = tempfile.mkstemp(dir=self.root / "blobs", prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        return digest

    def get_blob(self, digest: str) -> bytes:
        if self.root is None:
            return self._blobs[digest]
        return (self.root / "blobs" / digest).read_bytes()

    def has_blob(self, digest: str) -> bool:
        if self.root is None:
            return digest in self._blobs
        return (self.root / "blobs" / digest).exists()

    def blob_ids(self) -> list[str]:
        if self.root is None:
            return sorted(self._blobs)
        return sorted(p.name for p in (self.root / "blobs").iterdir() if not p.name.startswith("."))

    def store_sample(self, data: bytes, ts: float, instance_id: str, path: str) -> MalwareSample:
        if not data:
            raise EmptyFile(path)
        digest = hashlib.sha256(data).hexdigest()
        if digest in self.samples:
            return self.samples[digest]
        self.put_blob(data)
        sample = MalwareSample(digest, len(data), ts, instance_id, path, digest)
        self.samples[digest] = sample
        self.sample_log.append(asdict(sample))
        if self.root is not None:
            with open(self.root / "samples.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(sample)) + "\n")
        return sample


# -- engagement --------------------------------------------------------------


@dataclass(frozen=True)
class EngagementRecord:
    attacker_ip: str
    instance_id: str
    start_ts: float
    end_ts: float

    @property
    def duration(self) -> float:
        return self.end_ts - self.start_ts


def compute_engagements(hits: Iterable[tuple[float, str, str]], gap: float = DEFAULT_SESSION_GAP
                        ) -> list[EngagementRecord]:
    """Sessions from (ts, attacker_ip, instance_id) hits, longest first."""
    per_pair: dict[tuple[str, str], list[float]] = defaultdict(list)
    for ts, attacker, instance in hits:
        per_pair[(attacker, instance)].append(ts)
    records = []
    for (attacker, instance), stamps in per_pair.items():
        stamps.sort()
        start = prev = stamps[0]
        for t in stamps[1:]:
            if t - prev >= gap:
                records.append(EngagementRecord(attacker, instance, start, prev))
                start = t
            prev = t
        records.append(EngagementRecord(attacker, instance, start, prev))
    records.sort(key=lambda r: (-r.duration, r.attacker_ip, r.instance_id, r.start_ts))
    return records


def hits_from_log(events: Iterable[OrchestratorEvent]) -> list[tuple[float, str, str]]:
    """Attacker contacts recorded in the log: direct TOUCHes and probe-triggered DEPLOYs."""
    hits = []
    for ev in events:
        d = ev.detail
        if ev.kind is EventKind.TOUCH and d.get("direct") and d.get("src"):
            hits.append((ev.ts, d["src"], d["instance"]))
        elif ev.kind is EventKind.DEPLOY and d.get("reason") == "probe" and d.get("src"):
            hits.append((ev.ts, d["src"], d["instance"]))
    return hits


@dataclass(frozen=True)
class Lifetime:
    instance_id: str
    template: str
    ip: str
    port: int
    deploy_ts: float
    reap_ts: float | None
    decision: int


def lifetimes(events: Iterable[OrchestratorEvent]) -> list[Lifetime]:
    deployed: dict[str, dict] = {}
    reaped: dict[str, float] = {}
    for ev in events:
        if ev.kind is EventKind.DEPLOY:
            deployed[ev.detail["instance"]] = dict(ev.detail, ts=ev.ts)
        elif ev.kind is EventKind.REAP:
            reaped[ev.detail["instance"]] = ev.ts
    return [Lifetime(iid, d["template"], d["ip"], d["port"], d["ts"], reaped.get(iid), d.get("decision", 0))
            for iid, d in sorted(deployed.items())]


def hits_from_packets(events: Sequence[OrchestratorEvent], packets) -> list[tuple[float, str, str]]:
    """Attribute packets to the decoy live at their (ip, port) when they arrived."""
    by_target: dict[tuple[str, int], list[Lifetime]] = defaultdict(list)
    for life in lifetimes(events):
        by_target[(life.ip, life.port)].append(life)
    hits = []
    for p in packets:
        for life in by_target.get((p.ip_dst, p.dst_port), ()):
            if life.deploy_ts <= p.ts and (life.reap_ts is None or p.ts < life.reap_ts):
                hits.append((p.ts, p.ip_src, life.instance_id))
                break
    return hits


# -- uptime ------------------------------------------------------------------


@dataclass
class UptimeLedger:
    intervals: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    def add(self, template: str, start: float, end: float) -> None:
        if end < start:
            raise ValueError("interval ends before it starts")
        self.intervals.setdefault(template, []).append((start, end))

    def uptime(self, template: str | None = None) -> float:
        if template is not None:
            return sum(b - a for a, b in self.intervals.get(template, ()))
        return sum(self.uptime(t) for t in self.intervals)

    @property
    def total(self) -> float:
        return self.uptime()

    @classmethod
    def from_events(cls, events: Iterable[OrchestratorEvent], horizon: float) -> "UptimeLedger":
        ledger = cls()
        for life in lifetimes(events):
            end = life.reap_ts if life.reap_ts is not None else horizon
            ledger.add(life.template, life.deploy_ts, max(end, life.deploy_ts))
        return ledger


@dataclass
class CpuSaving:
    horizon: float
    per_template: dict[str, float]
    total: float
    uptime: dict[str, float]


def cpu_saving_report(ledger: UptimeLedger, horizon: float, templates: Sequence[str] | None = None
                      ) -> CpuSaving:
    """Percentage of always-on honeypot time saved by dynamic deployment."""
    names = list(templates) if templates is not None else sorted(ledger.intervals)
    if not names:
        raise ValueError("no templates to report on")
    for intervals in ledger.intervals.values():
        if any(end > horizon + 1e-9 for _, end in intervals):
            raise ValueError("interval extends past the horizon")
    uptime = {t: ledger.uptime(t) for t in names}
    if horizon <= 0:
        # nothing ran, so there is nothing to save; undefined ratios report as 0
        return CpuSaving(horizon, {t: 0.0 for t in names}, 0.0, uptime)
    per = {t: 100.0 * (1.0 - uptime[t] / horizon) for t in names}
    total = 100.0 * (1.0 - sum(uptime.values()) / (len(names) * horizon))
    return CpuSaving(horizon, per, total, uptime)
