"""Honeypot deployment backends.

``SimulatedBackend`` is the deterministic in-process substrate used by the
scenario runner and the tests. ``ExecBackend`` drives an external container
runtime through its command line; it is best-effort and not exercised against
a real runtime in CI.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import shlex
import socket
import subprocess
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .orchestrator import HoneypotTemplate
from .storage import Vault

logger = logging.getLogger(__name__)

DEFAULT_READINESS_TIMEOUT = 30.0


class BackendError(Exception):
    pass


class ImageMissing(BackendError):
    pass


class AddressInUse(BackendError):
    pass


class ReadinessTimeout(BackendError):
    pass


class StaleHandle(BackendError):
    pass


class BackupFailed(BackendError):
    def __init__(self, message: str, handle: "Handle"):
        super().__init__(message)
        self.handle = handle


class BackendUnavailable(BackendError):
    pass


class ActionKind(str, enum.Enum):
    START = "START"
    STOP_WITH_BACKUP = "STOP_WITH_BACKUP"
    LIST_NEW_FILES = "LIST_NEW_FILES"


class Outcome(str, enum.Enum):
    OK = "OK"
    FAILED = "FAILED"


@dataclass(frozen=True)
class BackendAction:
    kind: ActionKind
    instance_id: str
    image_id: str
    ip: str
    issued_at: float
    completed_at: float
    outcome: Outcome

    @property
    def latency(self) -> float:
        return self.completed_at - self.issued_at


@dataclass
class Handle:
    instance_id: str
    image_id: str
    ip: str
    port: int
    started_at: float
    ready_at: float
    active: bool = True


@dataclass
class _SimFile:
    data: bytes
    created: float


def backup_manifest(handle: Handle, files: Sequence[tuple[str, bytes, str]], ts: float) -> bytes:
    doc = {
        "instance": handle.instance_id,
        "image": handle.image_id,
        "ip": handle.ip,
        "stopped_at": ts,
        "files": [{"path": path, "sha256": digest, "size": len(data)} for path, data, digest in files],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def read_backup(vault: Vault, backup_id: str) -> dict:
    return json.loads(vault.get_blob(backup_id))


class SimulatedBackend:
    """Deterministic backend in virtual time.

    Instances are dictionaries of planted files; ``start`` completes after a
    fixed synthetic latency (0 s unless configured).
    """

    def __init__(self, latency: float = 0.0, vault: Vault | None = None,
                 images: Sequence[str] | None = None):
        self.latency = latency
        self.vault = vault if vault is not None else Vault()
        self.images = set(images) if images is not None else None
        self.handles: dict[str, Handle] = {}
        self.files: dict[str, dict[str, _SimFile]] = {}
        self.actions: list[BackendAction] = []
        self._by_ip: dict[str, str] = {}
        self._counter = 0

    def _record(self, kind, handle_or_id, image, ip, issued, completed, outcome=Outcome.OK):
        self.actions.append(BackendAction(kind, handle_or_id, image, ip, issued, completed, outcome))

    def start(self, template: HoneypotTemplate, ip: str, now: float = 0.0,
              instance_id: str | None = None) -> Handle:
        if self.images is not None and template.image_id not in self.images:
            raise ImageMissing(template.image_id)
        if ip in self._by_ip:
            raise AddressInUse(ip)
        if instance_id is None:
            self._counter += 1
            instance_id = f"sim{self._counter:04d}"
        if instance_id in self.handles:
            raise BackendError(f"duplicate instance id {instance_id}")
        handle = Handle(instance_id, template.image_id, ip, template.port, now, now + self.latency)
        self.handles[instance_id] = handle
        self.files[instance_id] = {}
        self._by_ip[ip] = instance_id
        self._record(ActionKind.START, instance_id, template.image_id, ip, now, handle.ready_at)
        return handle

    def _live(self, handle: Handle) -> Handle:
        current = self.handles.get(handle.instance_id)
        if current is None or not current.active:
            raise StaleHandle(handle.instance_id)
        return current

    def plant_file(self, handle: Handle, path: str, data: bytes, ts: float) -> None:
        """Simulate an attacker writing a file inside the decoy."""
        self._live(handle)
        self.files[handle.instance_id][path] = _SimFile(bytes(data), ts)

    def list_new_files(self, handle: Handle, since: float, now: float | None = None
                       ) -> list[tuple[str, bytes, str]]:
        self._live(handle)
        found = [(path, f.data, hashlib.sha256(f.data).hexdigest())
                 for path, f in sorted(self.files[handle.instance_id].items()) if f.created > since]
        t = since if now is None else now
        self._record(ActionKind.LIST_NEW_FILES, handle.instance_id, handle.image_id, handle.ip, t, t)
        return found

    def stop_with_backup(self, handle: Handle, now: float = 0.0) -> str:
        """Snapshot the planted files into the vault, then destroy the instance."""
        handle = self._live(handle)
        files = [(path, f.data, hashlib.sha256(f.data).hexdigest())
                 for path, f in sorted(self.files[handle.instance_id].items())]
        handle.active = False
        del self._by_ip[handle.ip]
        try:
            for _, data, _ in files:
                self.vault.put_blob(data)
            backup_id = self.vault.put_blob(backup_manifest(handle, files, now))
        except Exception as exc:
            self._record(ActionKind.STOP_WITH_BACKUP, handle.instance_id, handle.image_id, handle.ip,
                         now, now, Outcome.FAILED)
            raise BackupFailed(str(exc), handle) from exc
        self._record(ActionKind.STOP_WITH_BACKUP, handle.instance_id, handle.image_id, handle.ip, now, now)
        return backup_id


def tcp_probe(ip: str, port: int, timeout: float = 1.0) -> bool:
    try:
        with socket.create_connection((ip, port), timeout=timeout):
            return True
    except OSError:
        return False


@dataclass
class ExecBackend:
    """Backend driving a docker-compatible runtime CLI.

    Every spawned command line is logged verbatim at INFO level.
    """

    runtime: str = "docker"
    network: str = "soar"
    registry: str = ""
    watch_dir: str = "/"
    readiness_timeout: float = DEFAULT_READINESS_TIMEOUT
    vault: Vault = field(default_factory=Vault)
    probe: Callable[[str, int], bool] = tcp_probe
    clock: Callable[[], float] = time.time
    sleep: Callable[[float], None] = time.sleep
    handles: dict = field(default_factory=dict)
    actions: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    polled: dict = field(default_factory=dict)

    def _run(self, *args: str, check: bool = True, binary: bool = False):
        cmd = [self.runtime, *args]
        line = shlex.join(cmd)
        self.commands.append(line)
        logger.info("exec: %s", line)
        try:
            proc = subprocess.run(cmd, capture_output=True, text=not binary)
        except FileNotFoundError as exc:
            raise BackendUnavailable(f"runtime {self.runtime!r} not found") from exc
        if check and proc.returncode != 0:
            raise BackendError(f"{line} failed ({proc.returncode}): {proc.stderr!s:.200}")
        return proc

    def ping(self) -> None:
        """Raise BackendUnavailable unless the runtime answers."""
        proc = self._run("version", check=False)
        if proc.returncode != 0:
            raise BackendUnavailable(f"runtime {self.runtime!r} not answering: {proc.stderr!s:.200}")

    def _image(self, image_id: str) -> str:
        return f"{self.registry.rstrip('/')}/{image_id}" if self.registry else image_id

    def start(self, template: HoneypotTemplate, ip: str, now: float | None = None,
              instance_id: str | None = None) -> Handle:
        # the runtime works in wall time whatever clock the caller runs on
        issued = self.clock()
        if any(h.ip == ip and h.active for h in self.handles.values()):
            raise AddressInUse(ip)
        image = self._image(template.image_id)
        if self._run("image", "inspect", image, check=False).returncode != 0:
            self.actions.append(BackendAction(ActionKind.START, instance_id or "", template.image_id, ip,
                                              issued, self.clock(), Outcome.FAILED))
            raise ImageMissing(image)
        instance_id = instance_id or f"soar-{len(self.handles) + 1:04d}"
        self._run("run", "-d", "--name", instance_id, "--network", self.network, "--ip", ip, image)
        deadline = self.clock() + self.readiness_timeout
        while not self.probe(ip, template.port):
            if self.clock() >= deadline:
                self._run("rm", "-f", instance_id, check=False)
                self.actions.append(BackendAction(ActionKind.START, instance_id, template.image_id, ip,
                                                  issued, self.clock(), Outcome.FAILED))
                raise ReadinessTimeout(f"{instance_id} not answering on {ip}:{template.port}")
            self.sleep(0.25)
        ready = self.clock()
        handle = Handle(instance_id, template.image_id, ip, template.port, issued, ready)
        self.handles[instance_id] = handle
        self.actions.append(BackendAction(ActionKind.START, instance_id, template.image_id, ip, issued, ready,
                                          Outcome.OK))
        return handle

    def _live(self, handle: Handle) -> Handle:
        current = self.handles.get(handle.instance_id)
        if current is None or not current.active:
            raise StaleHandle(handle.instance_id)
        return current

    def list_new_files(self, handle: Handle, since: float, now: float | None = None
                       ) -> list[tuple[str, bytes, str]]:
        handle = self._live(handle)
        issued = self.clock()
        # ``since`` may be on the caller's virtual clock; the container filesystem is on wall time
        since = self.polled.get(handle.instance_id, handle.started_at)
        proc = self._run("exec", handle.instance_id, "find", self.watch_dir, "-xdev", "-type", "f",
                         "-newermt", f"@{since:.6f}")
        self.polled[handle.instance_id] = issued
        out = []
        for path in sorted(line for line in proc.stdout.splitlines() if line.strip()):
            data = self._run("exec", handle.instance_id, "cat", path, binary=True).stdout
            out.append((path, data, hashlib.sha256(data).hexdigest()))
        self.actions.append(BackendAction(ActionKind.LIST_NEW_FILES, handle.instance_id, handle.image_id,
                                          handle.ip, issued, self.clock(), Outcome.OK))
        return out

    def stop_with_backup(self, handle: Handle, now: float | None = None) -> str:
        handle = self._live(handle)
        issued = self.clock()
        error = None
        backup_id = None
        try:
            self.polled.pop(handle.instance_id, None)
            files = self.list_new_files(handle, handle.started_at)
            for _, data, _ in files:
                self.vault.put_blob(data)
            backup_id = self.vault.put_blob(backup_manifest(handle, files, issued))
        except Exception as exc:
            error = exc
        self._run("rm", "-f", handle.instance_id, check=False)
        handle.active = False
        outcome = Outcome.FAILED if error else Outcome.OK
        self.actions.append(BackendAction(ActionKind.STOP_WITH_BACKUP, handle.instance_id, handle.image_id,
                                          handle.ip, issued, self.clock(), outcome))
        if error is not None:
            raise BackupFailed(str(error), handle) from error
        return backup_id
