"""Decision core: reserved-IP selection, deployment triggers, idle reaping.

All state changes go through :func:`apply_event`, so the event log alone is
enough to rebuild the instance table (see :func:`replay`).
"""

from __future__ import annotations

import enum
import ipaddress
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .packets import Packet

DEFAULT_IDLE_TIMEOUT = 900.0
DEFAULT_POOL_SIZE = 7
DEFAULT_SPACING = 20


class OrchestratorError(Exception):
    pass


class DstNotInPool(OrchestratorError):
    pass


class PoolExhausted(OrchestratorError):
    pass


class Service(str, enum.Enum):
    HTTP_WEB = "HTTP_WEB"
    HTTP_APP = "HTTP_APP"
    DB = "DB"
    SSH = "SSH"
    SMTP = "SMTP"
    MODBUS = "MODBUS"
    HTTP_SQLI = "HTTP_SQLI"
    HTTP_XSS = "HTTP_XSS"
    HTTP_OSC = "HTTP_OSC"


class Interaction(str, enum.Enum):
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


class State(str, enum.Enum):
    DEPLOYING = "DEPLOYING"
    ACTIVE = "ACTIVE"
    REAPED = "REAPED"


class EventKind(str, enum.Enum):
    DEPLOY = "DEPLOY"
    READY = "READY"
    TOUCH = "TOUCH"
    REAP = "REAP"
    ALERT_FOLLOWUP = "ALERT_FOLLOWUP"
    NOTIFY = "NOTIFY"


ATTACK_LABELS = ("SQLI", "XSS", "OSC")


@dataclass(frozen=True)
class ReservedIpPool:
    ips: tuple[str, ...]
    spacing: int | None = None
    subnet: str | None = None

    def __post_init__(self):
        addrs = [ipaddress.IPv4Address(ip) for ip in self.ips]
        if not 2 <= len(addrs) <= 16:
            raise ValueError(f"pool size {len(addrs)} outside 2..16")
        if any(b <= a for a, b in zip(addrs, addrs[1:])):
            raise ValueError("pool addresses must be strictly increasing")
        if self.spacing is not None:
            if self.spacing <= 0:
                raise ValueError("spacing must be positive")
            if any(int(b) - int(a) != self.spacing for a, b in zip(addrs, addrs[1:])):
                raise ValueError(f"pool gaps differ from spacing {self.spacing}")
        if self.subnet is not None:
            net = ipaddress.IPv4Network(self.subnet, strict=False)
            outside = [str(a) for a in addrs if a not in net]
            if outside:
                raise ValueError(f"pool addresses outside {self.subnet}: {outside}")
        object.__setattr__(self, "_members", frozenset(self.ips))

    @classmethod
    def evenly_spaced(cls, first: str, spacing: int = DEFAULT_SPACING, count: int = DEFAULT_POOL_SIZE,
                      subnet: str | None = None) -> "ReservedIpPool":
        start = ipaddress.IPv4Address(first)
        return cls(tuple(str(start + k * spacing) for k in range(count)), spacing, subnet)

    def contains(self, ip: str) -> bool:
        return ip in self._members

    def index(self, ip: str) -> int:
        return self.ips.index(ip)

    def check_dhcp(self, start: str, end: str) -> None:
        lo, hi = ipaddress.IPv4Address(start), ipaddress.IPv4Address(end)
        clash = [ip for ip in self.ips if lo <= ipaddress.IPv4Address(ip) <= hi]
        if clash:
            raise ValueError(f"reserved addresses inside DHCP range: {clash}")

    def __len__(self):
        return len(self.ips)


# Irregularly spaced seven-address layout on a /24 used in examples and tests.
EXAMPLE_POOL = ReservedIpPool(
    ("172.26.233.4", "172.26.233.40", "172.26.233.85", "172.26.233.125",
     "172.26.233.185", "172.26.233.220", "172.26.233.250"),
    subnet="172.26.233.0/24",
)


@dataclass(frozen=True)
class HoneypotTemplate:
    service: Service
    port: int
    image_id: str
    interaction: Interaction = Interaction.HIGH
    follow_up_of: str | None = None

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside 1..65535")
        if self.follow_up_of is not None and self.follow_up_of not in ATTACK_LABELS:
            raise ValueError(f"unknown follow-up label {self.follow_up_of}")

    @property
    def is_http(self) -> bool:
        return self.service.value.startswith("HTTP")


class Catalog:
    """Available honeypot images keyed by service."""

    def __init__(self, templates: Iterable[HoneypotTemplate]):
        self.templates: dict[Service, HoneypotTemplate] = {}
        seen = set()
        for t in templates:
            if (t.service, t.port) in seen or t.service in self.templates:
                raise ValueError(f"duplicate catalog entry {t.service.value}:{t.port}")
            seen.add((t.service, t.port))
            self.templates[t.service] = t
        # probe-triggered lookup only sees base images; vulnerable variants are alert-driven
        self._by_port: dict[int, HoneypotTemplate] = {}
        for t in self.templates.values():
            if t.follow_up_of is None:
                if t.port in self._by_port:
                    raise ValueError(f"two base templates on port {t.port}")
                self._by_port[t.port] = t

    def for_port(self, port: int) -> HoneypotTemplate | None:
        return self._by_port.get(port)

    def follow_up(self, label: str) -> HoneypotTemplate | None:
        for t in self.templates.values():
            if t.follow_up_of == label:
                return t
        return None

    def base_templates(self) -> list[HoneypotTemplate]:
        return [t for t in self.templates.values() if t.follow_up_of is None]

    def __getitem__(self, service) -> HoneypotTemplate:
        return self.templates[Service(service)]

    def __iter__(self):
        return iter(self.templates.values())

    def __len__(self):
        return len(self.templates)


DEFAULT_CATALOG = Catalog([
    HoneypotTemplate(Service.HTTP_WEB, 80, "apache-httpd-honeypot", Interaction.HIGH),
    HoneypotTemplate(Service.HTTP_APP, 8080, "tomcat-honeypot", Interaction.HIGH),
    HoneypotTemplate(Service.DB, 3306, "mysql-5.7-honeypot", Interaction.HIGH),
    HoneypotTemplate(Service.SSH, 22, "cowrie", Interaction.MEDIUM),
    HoneypotTemplate(Service.SMTP, 25, "mailoney", Interaction.MEDIUM),
    HoneypotTemplate(Service.MODBUS, 502, "modbus-honeypot", Interaction.HIGH),
    HoneypotTemplate(Service.HTTP_SQLI, 80, "http-sqli-honeypot", Interaction.HIGH, "SQLI"),
    HoneypotTemplate(Service.HTTP_XSS, 80, "http-xss-honeypot", Interaction.HIGH, "XSS"),
    HoneypotTemplate(Service.HTTP_OSC, 80, "http-osc-honeypot", Interaction.HIGH, "OSC"),
])


@dataclass
class HoneypotInstance:
    id: str
    template: HoneypotTemplate
    ip: str
    state: State
    deployed_at: float
    last_activity: float
    decision: int = 0
    backup_id: str | None = None
    reaped_at: float | None = None

    @property
    def live(self) -> bool:
        return self.state is not State.REAPED

    def snapshot(self) -> tuple:
        return (self.id, self.template.service.value, self.ip, self.state.value,
                self.deployed_at, self.last_activity, self.reaped_at, self.backup_id)


@dataclass(frozen=True)
class OrchestratorEvent:
    seq: int
    ts: float
    kind: EventKind
    subjects: tuple[str, ...]
    detail: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> str:
        return json.dumps({
            "seq": self.seq,
            "ts": self.ts,
            "kind": self.kind.value,
            "subjects": list(self.subjects),
            "detail": self.detail,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "OrchestratorEvent":
        d = json.loads(line)
        return cls(d["seq"], d["ts"], EventKind(d["kind"]), tuple(d["subjects"]), d["detail"])


@dataclass
class EngineState:
    pool: ReservedIpPool
    catalog: Catalog = DEFAULT_CATALOG
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT
    deploy_ahead: bool = True
    instances: dict[str, HoneypotInstance] = field(default_factory=dict)
    seq: int = 0
    next_instance: int = 1
    decisions: int = 0
    by_ip: dict[str, str] = field(default_factory=dict)

    def occupied(self) -> set[str]:
        return set(self.by_ip)

    def live_at(self, ip: str) -> HoneypotInstance | None:
        iid = self.by_ip.get(ip)
        return self.instances[iid] if iid else None

    def live_of(self, service: Service) -> list[HoneypotInstance]:
        return sorted((i for i in self.instances.values() if i.live and i.template.service == service),
                      key=lambda i: i.id)

    def live(self) -> list[HoneypotInstance]:
        return sorted((i for i in self.instances.values() if i.live), key=lambda i: i.id)

    def new_id(self) -> str:
        iid = f"hp{self.next_instance:04d}"
        self.next_instance += 1
        return iid

    def event(self, ts: float, kind: EventKind, subjects: Sequence[str], **detail) -> OrchestratorEvent:
        ev = OrchestratorEvent(self.seq, ts, kind, tuple(subjects), detail)
        self.seq += 1
        return ev

    def snapshot(self) -> list[tuple]:
        return [self.instances[k].snapshot() for k in sorted(self.instances)]


def select_ips(ip_dst: str, n: int, pool: ReservedIpPool, occupied: Iterable[str] = ()) -> list[str]:
    """Pick up to ``n`` free reserved IPs ahead of a scanner that hit ``ip_dst``.

    A hit on the first pool address means the sweep runs upward, so the lowest
    free addresses come first; otherwise the highest free addresses are used.
    """
    if not pool.contains(ip_dst):
        raise DstNotInPool(ip_dst)
    if n <= 0:
        return []
    taken = set(occupied)
    candidates = [ip for ip in pool.ips if ip != ip_dst and ip not in taken]
    if ip_dst == pool.ips[0]:
        return candidates[:n]
    return candidates[-n:]


def apply_event(state: EngineState, ev: OrchestratorEvent) -> None:
    d = ev.detail
    if ev.kind is EventKind.DEPLOY:
        template = state.catalog[d["template"]]
        iid = d["instance"]
        if d["ip"] in state.by_ip:
            raise OrchestratorError(f"{d['ip']} already hosts {state.by_ip[d['ip']]}")
        state.instances[iid] = HoneypotInstance(
            iid, template, d["ip"], State.DEPLOYING, ev.ts, ev.ts, d.get("decision", 0))
        state.by_ip[d["ip"]] = iid
        state.next_instance = max(state.next_instance, int(iid[2:]) + 1)
        state.decisions = max(state.decisions, d.get("decision", 0))
    elif ev.kind is EventKind.READY:
        inst = state.instances[d["instance"]]
        if inst.state is not State.DEPLOYING:
            raise OrchestratorError(f"{inst.id} is {inst.state.value}, cannot become ACTIVE")
        inst.state = State.ACTIVE
    elif ev.kind is EventKind.TOUCH:
        inst = state.instances[d["instance"]]
        inst.last_activity = max(inst.last_activity, ev.ts)
    elif ev.kind is EventKind.REAP:
        inst = state.instances[d["instance"]]
        if inst.state is not State.ACTIVE:
            raise OrchestratorError(f"{inst.id} is {inst.state.value}, cannot be reaped")
        inst.state = State.REAPED
        inst.reaped_at = ev.ts
        inst.backup_id = d.get("backup_id")
        del state.by_ip[inst.ip]
    elif ev.kind is EventKind.NOTIFY and d.get("reason") == "deploy-failed":
        # the backend never brought the instance up; release its address
        inst = state.instances[d["instance"]]
        if inst.state is not State.DEPLOYING:
            raise OrchestratorError(f"{inst.id} is {inst.state.value}, cannot fail to deploy")
        inst.state = State.REAPED
        inst.reaped_at = ev.ts
        del state.by_ip[inst.ip]
    state.seq = max(state.seq, ev.seq + 1)


def _emit(state: EngineState, events: list, ev: OrchestratorEvent) -> None:
    apply_event(state, ev)
    events.append(ev)


def _deploy(state: EngineState, events: list, ts: float, template: HoneypotTemplate, ip: str,
            decision: int, reason: str, src: str | None, dst: str | None = None) -> None:
    iid = state.new_id()
    _emit(state, events, state.event(
        ts, EventKind.DEPLOY, [iid], instance=iid, template=template.service.value, ip=ip,
        port=template.port, image=template.image_id, decision=decision, reason=reason, src=src, dst=dst))


def _touch(state: EngineState, events: list, ts: float, inst: HoneypotInstance, p: Packet | None,
           direct: bool) -> None:
    _emit(state, events, state.event(
        ts, EventKind.TOUCH, [inst.id], instance=inst.id, ip=inst.ip, port=inst.template.port,
        src=p.ip_src if p else None, dst=p.ip_dst if p else None, direct=direct))


def on_packet(p: Packet, state: EngineState) -> list[OrchestratorEvent]:
    """React to a packet addressed to a reserved IP."""
    if not state.pool.contains(p.ip_dst):
        raise DstNotInPool(p.ip_dst)
    events: list[OrchestratorEvent] = []
    here = state.live_at(p.ip_dst)
    if here is not None and here.template.port == p.dst_port:
        _touch(state, events, p.ts, here, p, direct=True)
        return events

    template = state.catalog.for_port(p.dst_port)
    if template is None:
        _emit(state, events, state.event(p.ts, EventKind.NOTIFY, [p.ip_dst], reason="unknown-port-probe",
                                         ip=p.ip_dst, port=p.dst_port, src=p.ip_src))
        return events

    running = state.live_of(template.service)
    if running:
        _touch(state, events, p.ts, running[0], p, direct=False)
        return events

    probed_free = here is None
    if state.deploy_ahead or not probed_free:
        occupied = state.occupied() | ({p.ip_dst} if probed_free else set())
        ahead = select_ips(p.ip_dst, 1, state.pool, occupied)
    else:
        ahead = []
    if not probed_free and not ahead:
        _emit(state, events, state.event(p.ts, EventKind.NOTIFY, [p.ip_dst], reason="pool-exhausted",
                                         ip=p.ip_dst, port=p.dst_port, src=p.ip_src,
                                         template=template.service.value))
        return events

    state.decisions += 1
    decision = state.decisions
    if probed_free:
        _deploy(state, events, p.ts, template, p.ip_dst, decision, "probe", p.ip_src, p.ip_dst)
    if ahead:
        _deploy(state, events, p.ts, template, ahead[0], decision, "ahead", p.ip_src, p.ip_dst)
    elif state.deploy_ahead:
        _emit(state, events, state.event(p.ts, EventKind.NOTIFY, [p.ip_dst], reason="pool-exhausted",
                                         ip=p.ip_dst, port=p.dst_port, src=p.ip_src,
                                         template=template.service.value))
    return events


def mark_ready(instance_id: str, ts: float, state: EngineState) -> OrchestratorEvent:
    ev = state.event(ts, EventKind.READY, [instance_id], instance=instance_id)
    apply_event(state, ev)
    return ev


def reap_idle(now: float, state: EngineState) -> list[OrchestratorEvent]:
    """Reap every ACTIVE instance idle for at least the timeout.

    The REAP detail carries ``backup`` set to "requested"; the engine fills in
    the backup outcome after the backend has run.
    """
    events: list[OrchestratorEvent] = []
    for inst in state.live():
        # compared as now >= last + timeout so the deadline from next_reap_deadline always fires
        if inst.state is State.ACTIVE and now >= inst.last_activity + state.idle_timeout:
            _emit(state, events, state.event(
                now, EventKind.REAP, [inst.id], instance=inst.id, ip=inst.ip,
                template=inst.template.service.value, idle=now - inst.last_activity,
                backup="requested", backup_id=None))
    return events


def next_reap_deadline(state: EngineState) -> float | None:
    deadlines = [i.last_activity + state.idle_timeout for i in state.live() if i.state is State.ACTIVE]
    return min(deadlines) if deadlines else None


def on_ids_alert(label: str, ip: str, ts: float, state: EngineState, src: str | None = None,
                 follow_up: bool = True) -> list[OrchestratorEvent]:
    """Deploy the vulnerable variant matching an IDS verdict on an HTTP decoy.

    With ``follow_up`` false only the alert itself is logged (static baseline).
    """
    if label not in ATTACK_LABELS:
        raise ValueError(f"unknown attack label {label}")
    host = state.live_at(ip)
    if host is None or host.state is not State.ACTIVE or not host.template.is_http:
        raise OrchestratorError(f"no ACTIVE HTTP honeypot at {ip}")
    events: list[OrchestratorEvent] = []
    _emit(state, events, state.event(ts, EventKind.ALERT_FOLLOWUP, [host.id], label=label, ip=ip,
                                     instance=host.id, src=src))
    template = state.catalog.follow_up(label) if follow_up else None
    if template is None:
        return events
    running = state.live_of(template.service)
    if running:
        _touch(state, events, ts, running[0], None, direct=False)
        return events
    ahead = select_ips(ip, 1, state.pool, state.occupied())
    if not ahead:
        _emit(state, events, state.event(ts, EventKind.NOTIFY, [host.id], reason="pool-exhausted", ip=ip,
                                         template=template.service.value, label=label))
        return events
    state.decisions += 1
    _deploy(state, events, ts, template, ahead[0], state.decisions, f"followup:{label}", src)
    return events


def replay(events: Iterable[OrchestratorEvent], pool: ReservedIpPool, catalog: Catalog = DEFAULT_CATALOG,
           idle_timeout: float = DEFAULT_IDLE_TIMEOUT) -> EngineState:
    """Rebuild the instance table from an event log."""
    state = EngineState(pool=pool, catalog=catalog, idle_timeout=idle_timeout)
    for ev in events:
        apply_event(state, ev)
    return state
