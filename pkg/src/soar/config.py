"""Engine configuration: a YAML file, validated before anything starts.

Example with every key at its default::

    pool:
      subnet: 172.26.233.0/24
      first: 172.26.233.4
      spacing: 20
      count: 7
      # ips: [172.26.233.4, 172.26.233.40]   explicit list instead of first/spacing/count
      # dhcp_range: [172.26.233.100, 172.26.233.199]
    catalog:                    # per-template overrides of the built-in image table
      SSH: {image: cowrie, port: 22}
    idle_timeout: 900
    deploy_ahead: true
    session_gap: 300
    backend:
      kind: simulated           # simulated | exec
      latency: 0                # simulated start-up delay, seconds
      runtime: docker
      network: soar
      registry: ""
      readiness_timeout: 30
      watch_dir: /
    models:
      dir: null                 # directory with http_ids.json, ddos.json, botnet.json
    detectors: {http_ids: true, ddos: true, botnet: true}
    log_dir: soar-out
    vault_dir: null             # defaults to <log_dir>/vault

Unknown keys are rejected with the offending dotted key in the message.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .backend import DEFAULT_READINESS_TIMEOUT, ExecBackend, SimulatedBackend
from .orchestrator import (
    DEFAULT_CATALOG, DEFAULT_IDLE_TIMEOUT, DEFAULT_POOL_SIZE, DEFAULT_SPACING, Catalog, HoneypotTemplate,
    ReservedIpPool, Service,
)
from .storage import DEFAULT_SESSION_GAP, Vault


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class PoolConfig:
    subnet: str = "172.26.233.0/24"
    first: str = "172.26.233.4"
    spacing: int = DEFAULT_SPACING
    count: int = DEFAULT_POOL_SIZE
    ips: tuple[str, ...] | None = None
    dhcp_range: tuple[str, str] | None = None

    def build(self) -> ReservedIpPool:
        try:
            if self.ips is not None:
                pool = ReservedIpPool(tuple(self.ips), None, self.subnet)
            else:
                pool = ReservedIpPool.evenly_spaced(self.first, self.spacing, self.count, self.subnet)
            if self.dhcp_range is not None:
                pool.check_dhcp(*self.dhcp_range)
        except ValueError as exc:
            raise ConfigInvalid(f"pool: {exc}") from exc
        return pool


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "simulated"
    latency: float = 0.0
    runtime: str = "docker"
    network: str = "soar"
    registry: str = ""
    readiness_timeout: float = DEFAULT_READINESS_TIMEOUT
    watch_dir: str = "/"

    def build(self, vault: Vault):
        if self.kind == "simulated":
            return SimulatedBackend(self.latency, vault)
        return ExecBackend(self.runtime, self.network, self.registry, self.watch_dir, self.readiness_timeout,
                           vault)


@dataclass(frozen=True)
class EngineConfig:
    pool: PoolConfig = field(default_factory=PoolConfig)
    catalog: dict = field(default_factory=dict)
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT
    deploy_ahead: bool = True
    session_gap: float = DEFAULT_SESSION_GAP
    backend: BackendConfig = field(default_factory=BackendConfig)
    models: dict = field(default_factory=lambda: {"dir": None})
    detectors: dict = field(default_factory=lambda: {"http_ids": True, "ddos": True, "botnet": True})
    log_dir: str = "soar-out"
    vault_dir: str | None = None

    def build_catalog(self) -> Catalog:
        if not self.catalog:
            return DEFAULT_CATALOG
        out = []
        for t in DEFAULT_CATALOG:
            o = self.catalog.get(t.service.value, {})
            out.append(HoneypotTemplate(t.service, int(o.get("port", t.port)), str(o.get("image", t.image_id)),
                                        t.interaction, t.follow_up_of))
        try:
            return Catalog(out)
        except ValueError as exc:
            raise ConfigInvalid(f"catalog: {exc}") from exc

    @property
    def vault_path(self) -> Path:
        return Path(self.vault_dir) if self.vault_dir else Path(self.log_dir) / "vault"

    def with_overrides(self, **kw) -> "EngineConfig":
        """Apply command-line flags; ``None`` means the flag was not given."""
        kw = {k: v for k, v in kw.items() if v is not None}
        backend = {k: kw.pop(k) for k in ("latency",) if k in kw}
        cfg = replace(self, **kw)
        if backend:
            cfg = replace(cfg, backend=replace(cfg.backend, **backend))
        return cfg


def _check_keys(d, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigInvalid(f"{where or 'config'}: expected a mapping, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            key = f"{where}.{k}" if where else str(k)
            raise ConfigInvalid(f"unknown config key {key!r}")


def _num(v, key: str, positive: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalid(f"{key} must be a number, got {v!r}")
    if positive and v <= 0 or v < 0:
        raise ConfigInvalid(f"{key} must be {'positive' if positive else 'non-negative'}, got {v!r}")
    return float(v)


def _bool(v, key: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigInvalid(f"{key} must be true or false, got {v!r}")
    return v


def _ip(v, key: str) -> str:
    try:
        return str(ipaddress.IPv4Address(str(v)))
    except ValueError as exc:
        raise ConfigInvalid(f"{key}: {exc}") from exc


def parse_config(doc: dict | None) -> EngineConfig:
    doc = doc or {}
    _check_keys(doc, {f.name for f in fields(EngineConfig)}, "")
    kw: dict = {}

    if "pool" in doc:
        p = doc["pool"]
        _check_keys(p, {f.name for f in fields(PoolConfig)}, "pool")
        pk = {}
        if "subnet" in p:
            try:
                pk["subnet"] = str(ipaddress.IPv4Network(str(p["subnet"]), strict=False))
            except ValueError as exc:
                raise ConfigInvalid(f"pool.subnet: {exc}") from exc
        if "first" in p:
            pk["first"] = _ip(p["first"], "pool.first")
        for k in ("spacing", "count"):
            if k in p:
                if isinstance(p[k], bool) or not isinstance(p[k], int):
                    raise ConfigInvalid(f"pool.{k} must be an integer, got {p[k]!r}")
                pk[k] = p[k]
        if p.get("ips") is not None:
            pk["ips"] = tuple(_ip(v, "pool.ips") for v in p["ips"])
        if p.get("dhcp_range") is not None:
            r = p["dhcp_range"]
            if not isinstance(r, list) or len(r) != 2:
                raise ConfigInvalid("pool.dhcp_range must be [start, end]")
            pk["dhcp_range"] = (_ip(r[0], "pool.dhcp_range"), _ip(r[1], "pool.dhcp_range"))
        kw["pool"] = PoolConfig(**pk)

    if "catalog" in doc:
        cat = doc["catalog"] or {}
        _check_keys(cat, {s.value for s in Service}, "catalog")
        for name, entry in cat.items():
            _check_keys(entry, {"image", "port"}, f"catalog.{name}")
        kw["catalog"] = cat

    for k in ("idle_timeout", "session_gap"):
        if k in doc:
            kw[k] = _num(doc[k], k, positive=True)
    if "deploy_ahead" in doc:
        kw["deploy_ahead"] = _bool(doc["deploy_ahead"], "deploy_ahead")

    if "backend" in doc:
        b = doc["backend"]
        _check_keys(b, {f.name for f in fields(BackendConfig)}, "backend")
        bk = dict(b)
        if bk.get("kind", "simulated") not in ("simulated", "exec"):
            raise ConfigInvalid(f"backend.kind must be simulated or exec, got {bk['kind']!r}")
        for k in ("latency", "readiness_timeout"):
            if k in bk:
                bk[k] = _num(bk[k], f"backend.{k}")
        kw["backend"] = BackendConfig(**bk)

    if "models" in doc:
        m = doc["models"] or {}
        _check_keys(m, {"dir"}, "models")
        kw["models"] = {"dir": m.get("dir")}

    if "detectors" in doc:
        d = doc["detectors"] or {}
        _check_keys(d, {"http_ids", "ddos", "botnet"}, "detectors")
        kw["detectors"] = {**EngineConfig().detectors,
                           **{k: _bool(v, f"detectors.{k}") for k, v in d.items()}}

    for k in ("log_dir", "vault_dir"):
        if doc.get(k) is not None:
            kw[k] = str(doc[k])

    cfg = EngineConfig(**kw)
    cfg.pool.build()
    cfg.build_catalog()
    return cfg


def load_config(path) -> EngineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config {path} is not valid YAML: {exc}") from exc
    return parse_config(doc)
