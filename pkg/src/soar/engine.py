"""The engine loop: orchestrator, backend, detectors and storage in virtual time.

One owner drives everything in timestamp order. Packets arrive through
:meth:`Engine.process`; timers (decoys becoming ready, idle deadlines, flow
window boundaries, file polls) fire from :meth:`Engine.advance` at their exact
virtual times, so the same packet stream always produces the same event log.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

from .backend import BackendError, BackupFailed, Handle, SimulatedBackend
from .botnet import BOTNET, FlowAggregator, FlowRecord, classify_flow
from .ddos import DDOS, DdosDetector
from .http_ids import HttpIds
from .learners import ClassifierModel
from .orchestrator import (
    DEFAULT_CATALOG, DEFAULT_IDLE_TIMEOUT, Catalog, EngineState, EventKind, HoneypotInstance,
    OrchestratorEvent, ReservedIpPool, State, apply_event, mark_ready, next_reap_deadline, on_ids_alert,
    on_packet, reap_idle,
)
from .packets import Packet, reassemble_http
from .storage import EventLog, Vault

logger = logging.getLogger(__name__)

INF = math.inf


@dataclass
class EngineCounters:
    packets: int = 0
    reserved_packets: int = 0
    ddos_packets: int = 0
    botnet_flows: int = 0
    flows: int = 0
    http_requests: int = 0
    ids_alerts: int = 0
    samples: int = 0


@dataclass
class Engine:
    pool: ReservedIpPool
    catalog: Catalog = DEFAULT_CATALOG
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT
    deploy_ahead: bool = True
    backend: object = None
    log: EventLog = None
    vault: Vault = None
    ids: HttpIds | None = None
    ddos_model: ClassifierModel | None = None
    botnet_model: ClassifierModel | None = None
    static: bool = False
    poll_interval: float = 1.0
    counters: EngineCounters = field(default_factory=EngineCounters)

    def __post_init__(self):
        if self.vault is None:
            self.vault = getattr(self.backend, "vault", None) or Vault()
        if self.backend is None:
            self.backend = SimulatedBackend(vault=self.vault)
        if self.log is None:
            self.log = EventLog()
        timeout = INF if self.static else self.idle_timeout
        self.state = EngineState(self.pool, self.catalog, timeout, self.deploy_ahead)
        self.clock = -INF
        self.handles: dict[str, Handle] = {}
        self._ready: list[tuple[float, str]] = []
        self._poll_mark = -INF
        self._next_poll = INF
        self.ddos = DdosDetector(self.ddos_model) if self.ddos_model is not None else None
        self.flows = FlowAggregator() if self.botnet_model is not None else None
        self.flagged_flows: list[FlowRecord] = []
        self._started = False

    # -- event plumbing ------------------------------------------------------

    def _new(self, ts: float, kind: EventKind, subjects, **detail) -> OrchestratorEvent:
        ev = self.state.event(ts, kind, subjects, **detail)
        apply_event(self.state, ev)
        return ev

    def _commit(self, events: list[OrchestratorEvent]) -> None:
        self.log.extend(events)
        followups = []
        for ev in events:
            if ev.kind is EventKind.DEPLOY:
                followups.extend(self._start(ev))
        if followups:
            self._commit(followups)

    def _start(self, ev: OrchestratorEvent) -> list[OrchestratorEvent]:
        d = ev.detail
        template = self.catalog[d["template"]]
        try:
            handle = self.backend.start(template, d["ip"], now=ev.ts, instance_id=d["instance"])
        except BackendError as exc:
            logger.warning("deploy of %s at %s failed: %s", d["template"], d["ip"], exc)
            return [self._new(ev.ts, EventKind.NOTIFY, [d["instance"]], reason="deploy-failed",
                              instance=d["instance"], ip=d["ip"], error=type(exc).__name__)]
        self.handles[d["instance"]] = handle
        # a backend on wall time reports its own clock; only the start-up delay carries over
        heapq.heappush(self._ready, (ev.ts + max(0.0, handle.ready_at - handle.started_at), d["instance"]))
        if self._next_poll == INF:
            self._poll_mark = ev.ts
            self._next_poll = ev.ts + self.poll_interval
        return []

    # -- timers --------------------------------------------------------------

    def advance(self, now: float) -> None:
        """Fire every timer due at or before ``now``, in time order."""
        while True:
            t_ready = self._ready[0][0] if self._ready else INF
            deadline = next_reap_deadline(self.state)
            t_reap = INF if deadline is None else deadline
            boundary = self.flows.next_boundary() if self.flows is not None else None
            t_win = INF if boundary is None else boundary
            # a poll at T only runs once time has moved past T, so every file planted at T is visible
            t_poll = self._next_poll if self._next_poll < now else INF
            t = min(t_ready, t_reap, t_win, t_poll)
            if t > now or t == INF:
                break
            self.clock = max(self.clock, t)
            if t_ready == t:
                batch = []
                while self._ready and self._ready[0][0] == t:
                    _, iid = heapq.heappop(self._ready)
                    if self.state.instances[iid].state is State.DEPLOYING:
                        batch.append(mark_ready(iid, t, self.state))
                self._commit(batch)
            elif t_poll == t:
                self._poll(t)
            elif t_win == t:
                self._close_flows(self.flows.flush())
            else:
                self._reap(t)
        self.clock = max(self.clock, now)

    def _poll(self, t: float) -> None:
        events = []
        for inst in self.state.live():
            handle = self.handles.get(inst.id)
            if handle is not None and inst.state is State.ACTIVE:
                events.extend(self._collect(inst, handle, self._poll_mark, t))
        self._poll_mark = t
        self._next_poll = t + self.poll_interval if self.state.by_ip else INF
        self._commit(events)

    def _collect(self, inst: HoneypotInstance, handle: Handle, since: float, t: float
                 ) -> list[OrchestratorEvent]:
        events = []
        for path, data, digest in self.backend.list_new_files(handle, since, t):
            if not data or digest in self.vault.samples:
                continue
            sample = self.vault.store_sample(data, t, inst.id, path)
            self.counters.samples += 1
            events.append(self._new(t, EventKind.NOTIFY, [inst.id], reason="sample", instance=inst.id,
                                    ip=inst.ip, path=path, sha256=sample.sha256, size=sample.size))
        return events

    def _reap(self, t: float) -> None:
        due = [i for i in self.state.live()
               if i.state is State.ACTIVE and t >= i.last_activity + self.state.idle_timeout]
        found = []
        for inst in due:
            handle = self.handles.get(inst.id)
            if handle is not None:
                found.extend(self._collect(inst, handle, self._poll_mark, t))
        events = reap_idle(t, self.state)
        for ev in events:
            handle = self.handles.pop(ev.detail["instance"], None)
            if handle is None:
                continue
            try:
                ev.detail["backup_id"] = self.backend.stop_with_backup(handle, t)
                ev.detail["backup"] = "ok"
            except BackupFailed as exc:
                ev.detail["backup"] = "failed"
                ev.detail["error"] = str(exc)
        # backup ids are assigned after apply_event ran, so copy them onto the instances too
        for ev in events:
            self.state.instances[ev.detail["instance"]].backup_id = ev.detail.get("backup_id")
        self._commit(found + events)
        if not self.state.by_ip:
            self._next_poll = INF

    def _close_flows(self, flows: list[FlowRecord]) -> None:
        events = []
        for f in flows:
            self.counters.flows += 1
            if classify_flow(f, self.botnet_model) == BOTNET:
                self.counters.botnet_flows += 1
                self.flagged_flows.append(f)
                ip_src, ip_dst, sport, dport, proto = f.key
                events.append(self._new(self.clock, EventKind.NOTIFY, [ip_src], reason="botnet", src=ip_src,
                                        dst=ip_dst, src_port=sport, dst_port=dport, proto=int(proto),
                                        window=f.window_id, packets=f.total_packets, bytes=f.total_bytes))
        self._commit(events)

    # -- packets -------------------------------------------------------------

    def start(self, ts: float = 0.0) -> None:
        """Begin operation; in static mode every base template comes up on the pool at once."""
        if self._started:
            return
        self._started = True
        self.advance(ts)
        if not self.static:
            return
        bases = self.catalog.base_templates()
        if len(bases) > len(self.pool):
            raise ValueError("pool too small for the static baseline")
        events = []
        for k, template in enumerate(bases):
            self.state.decisions += 1
            iid = self.state.new_id()
            events.append(self._new(ts, EventKind.DEPLOY, [iid], instance=iid, template=template.service.value,
                                    ip=self.pool.ips[k], port=template.port, image=template.image_id,
                                    decision=self.state.decisions, reason="static", src=None, dst=None))
        self._commit(events)
        self.advance(ts)

    def process(self, p: Packet) -> None:
        if not self._started:
            self.start(min(0.0, p.ts))
        if p.ts < self.clock:
            raise ValueError(f"packet at {p.ts} precedes engine clock {self.clock}")
        self.advance(p.ts)
        self.counters.packets += 1
        if self.pool.contains(p.ip_dst):
            self.counters.reserved_packets += 1
            self._commit(self._orchestrate(p))
            self.advance(p.ts)
            self._inspect_http(p)
        if self.ddos is not None and self.ddos.observe(p) == DDOS:
            self.counters.ddos_packets += 1
            self._commit([self._new(p.ts, EventKind.NOTIFY, [p.ip_dst], reason="ddos", src=p.ip_src,
                                    dst=p.ip_dst, dst_port=p.dst_port, proto=int(p.proto))])
        if self.flows is not None:
            self._close_flows(self.flows.add(p))

    def _orchestrate(self, p: Packet) -> list[OrchestratorEvent]:
        if not self.static:
            return on_packet(p, self.state)
        here = self.state.live_at(p.ip_dst)
        if here is not None and here.template.port == p.dst_port:
            return [self._new(p.ts, EventKind.TOUCH, [here.id], instance=here.id, ip=here.ip,
                              port=here.template.port, src=p.ip_src, dst=p.ip_dst, direct=True)]
        return [self._new(p.ts, EventKind.NOTIFY, [p.ip_dst], reason="closed-port", ip=p.ip_dst,
                          port=p.dst_port, src=p.ip_src)]

    def _inspect_http(self, p: Packet) -> None:
        if self.ids is None or not p.payload:
            return
        here = self.state.live_at(p.ip_dst)
        if here is None or here.state is not State.ACTIVE or not here.template.is_http \
                or here.template.port != p.dst_port:
            return
        for req in reassemble_http([p]):
            self.counters.http_requests += 1
            for label in sorted(self.ids.classify(req)):
                self.counters.ids_alerts += 1
                events = on_ids_alert(label, p.ip_dst, p.ts, self.state, p.ip_src, follow_up=not self.static)
                self._commit(events)
                self.advance(p.ts)

    # -- queries used by the simulator ---------------------------------------

    def responder(self, ip: str, port: int | None, now: float) -> HoneypotInstance | None:
        """The ACTIVE decoy answering at (ip, port) at ``now``; any port when ``port`` is None."""
        self.advance(now)
        inst = self.state.live_at(ip)
        if inst is None or inst.state is not State.ACTIVE:
            return None
        if port is not None and inst.template.port != port:
            return None
        return inst

    def plant_file(self, ip: str, path: str, data: bytes, now: float) -> bool:
        inst = self.responder(ip, None, now)
        if inst is None or inst.id not in self.handles:
            return False
        self.backend.plant_file(self.handles[inst.id], path, data, now)
        return True

    def finish(self, horizon: float) -> None:
        """Run timers to ``horizon``, close the last flow window and collect outstanding files."""
        if not self._started:
            self.start(0.0)
        self.advance(horizon)
        if self.flows is not None:
            self._close_flows(self.flows.flush())
        events = []
        for inst in self.state.live():
            handle = self.handles.get(inst.id)
            if handle is not None and inst.state is State.ACTIVE:
                events.extend(self._collect(inst, handle, self._poll_mark, horizon))
        self._poll_mark = horizon
        self._commit(events)
        self.log.flush()
