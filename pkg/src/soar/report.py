"""Reports computed purely from the event log.

Counting rules:

* a *deployment* is one deployment decision; a probe that brings a decoy up at
  the probed address and another one ahead of the scanner counts once;
* an *attack* on a decoy is an IDS-positive request to it, a DDoS-positive
  packet addressed to it, or a botnet-positive flow to or from it while it was
  live.
"""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .orchestrator import DEFAULT_CATALOG, Catalog, EventKind, OrchestratorEvent, ReservedIpPool
from .storage import (
    DEFAULT_SESSION_GAP, CpuSaving, EngagementRecord, Lifetime, UptimeLedger, compute_engagements,
    cpu_saving_report, hits_from_log, lifetimes,
)


@dataclass(frozen=True)
class RaceOutcome:
    instance_id: str
    ip: str
    scanner: str
    deploy_ts: float
    active_ts: float | None
    arrival_ts: float

    @property
    def win(self) -> bool:
        return self.active_ts is not None and self.active_ts < self.arrival_ts

    @property
    def margin(self) -> float | None:
        return None if self.active_ts is None else self.arrival_ts - self.active_ts


@dataclass
class ScenarioReport:
    name: str
    mode: str
    horizon: float
    events: int
    deployments: dict[str, int]
    instances: dict[str, int]
    reaps: dict[str, int]
    attacks: dict[str, Counter]
    instance_template: dict[str, str]
    engagements: list[EngagementRecord]
    ddos_packets: int
    botnet_flows: int
    samples: list[dict]
    races: list[RaceOutcome]
    cpu: CpuSaving
    top: int = 10
    notes: list[str] = field(default_factory=list)

    @property
    def total_uptime(self) -> float:
        return sum(self.cpu.uptime.values())

    @property
    def mean_engagement(self) -> float:
        if not self.engagements:
            return 0.0
        return sum(r.duration for r in self.engagements) / len(self.engagements)

    def attacks_by_template(self) -> dict[str, int]:
        out: Counter = Counter()
        for iid, c in self.attacks.items():
            out[self.instance_template[iid]] += sum(c.values())
        return dict(sorted(out.items()))

    # -- rendering -----------------------------------------------------------

    def rows(self) -> list[tuple[str, str, str, str]]:
        """Long-format (section, key, field, value) rows."""
        r: list[tuple[str, str, str, str]] = [
            ("meta", "name", "value", self.name), ("meta", "mode", "value", self.mode),
            ("meta", "horizon_s", "value", _num(self.horizon)), ("meta", "events", "value", str(self.events)),
        ]
        for t in sorted(self.cpu.uptime):
            r.append(("deployments", t, "decisions", str(self.deployments.get(t, 0))))
            r.append(("deployments", t, "instances", str(self.instances.get(t, 0))))
            r.append(("deployments", t, "reaps", str(self.reaps.get(t, 0))))
        for t in sorted(self.cpu.uptime):
            r.append(("cpu", t, "uptime_s", _num(self.cpu.uptime[t])))
            r.append(("cpu", t, "saved_pct", _num(self.cpu.per_template[t])))
        r.append(("cpu", "TOTAL", "uptime_s", _num(self.total_uptime)))
        r.append(("cpu", "TOTAL", "saved_pct", _num(self.cpu.total)))
        for iid in sorted(self.attacks):
            c = self.attacks[iid]
            for kind in ("ids", "ddos", "botnet"):
                r.append(("attacks", iid, kind, str(c.get(kind, 0))))
            r.append(("attacks", iid, "template", self.instance_template[iid]))
        for t, n in self.attacks_by_template().items():
            r.append(("attacks_by_template", t, "total", str(n)))
        for k, e in enumerate(self.engagements[: self.top], 1):
            key = str(k)
            r.append(("engagement", key, "attacker", e.attacker_ip))
            r.append(("engagement", key, "instance", e.instance_id))
            r.append(("engagement", key, "template", self.instance_template.get(e.instance_id, "")))
            r.append(("engagement", key, "start_ts", _num(e.start_ts)))
            r.append(("engagement", key, "duration_s", _num(e.duration)))
        r.append(("engagement", "ALL", "sessions", str(len(self.engagements))))
        r.append(("engagement", "ALL", "mean_s", _num(self.mean_engagement)))
        r.append(("detectors", "ddos", "packets", str(self.ddos_packets)))
        r.append(("detectors", "botnet", "flows", str(self.botnet_flows)))
        for s in self.samples:
            r.append(("samples", s["sha256"], "instance", s["instance"]))
            r.append(("samples", s["sha256"], "path", s["path"]))
            r.append(("samples", s["sha256"], "size", str(s["size"])))
        for race in self.races:
            r.append(("races", race.instance_id, "outcome", "WIN" if race.win else "LOSE"))
            r.append(("races", race.instance_id, "margin_s", "" if race.margin is None else _num(race.margin)))
        return r

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "key", "field", "value"])
        w.writerows(self.rows())
        return buf.getvalue()

    def engagement_table(self) -> str:
        lines = [f"{'rank':>4}  {'attacker':<16} {'honeypot':<10} {'template':<10} {'engagement (s)':>14}"]
        for k, e in enumerate(self.engagements[: self.top], 1):
            lines.append(f"{k:>4}  {e.attacker_ip:<16} {e.instance_id:<10} "
                         f"{self.instance_template.get(e.instance_id, ''):<10} {e.duration:>14.1f}")
        return "\n".join(lines)

    def to_text(self) -> str:
        out = [f"scenario {self.name} ({self.mode}), horizon {self.horizon:.0f} s, {self.events} events", ""]
        out.append("deployments per template (decisions / instances / reaps)")
        for t in sorted(self.cpu.uptime):
            out.append(f"  {t:<10} {self.deployments.get(t, 0):>4} {self.instances.get(t, 0):>4} "
                       f"{self.reaps.get(t, 0):>4}")
        out.append("")
        out.append("attacks per honeypot (IDS-positive requests + DDoS packets + botnet flows)")
        if not self.attacks:
            out.append("  none")
        for iid in sorted(self.attacks):
            c = self.attacks[iid]
            out.append(f"  {iid:<8} {self.instance_template[iid]:<10} ids={c.get('ids', 0)} "
                       f"ddos={c.get('ddos', 0)} botnet={c.get('botnet', 0)}")
        out.append("")
        out.append(f"top {self.top} engagement times (session gap rule)")
        out.append(self.engagement_table())
        out.append(f"  sessions={len(self.engagements)} mean={self.mean_engagement:.1f} s")
        out.append("")
        out.append(f"CPU time saved vs always-on: {self.cpu.total:.2f}% "
                   f"(uptime {self.total_uptime:.0f} s of {len(self.cpu.uptime) * self.horizon:.0f} s)")
        out.append(f"DDoS packets flagged: {self.ddos_packets}")
        out.append(f"botnet flows flagged: {self.botnet_flows}")
        out.append(f"malware samples collected: {len(self.samples)}")
        for s in self.samples:
            out.append(f"  {s['sha256'][:16]}  {s['size']:>6} B  {s['instance']}  {s['path']}")
        if self.races:
            wins = sum(r.win for r in self.races)
            out.append(f"deploy-ahead races won: {wins}/{len(self.races)}")
        out.extend(self.notes)
        return "\n".join(out) + "\n"


def _num(v: float) -> str:
    v = float(v)
    if v.is_integer():
        return str(int(v))
    return f"{v:.6f}".rstrip("0").rstrip(".")


def _live_at(by_ip: dict[str, list[Lifetime]], ip: str, ts: float) -> Lifetime | None:
    for life in by_ip.get(ip, ()):
        if life.deploy_ts <= ts and (life.reap_ts is None or ts < life.reap_ts):
            return life
    return None


def race_outcomes(events: list[OrchestratorEvent]) -> list[RaceOutcome]:
    """Decoys placed ahead of a scanner versus when that scanner reached their address."""
    ready = {ev.detail["instance"]: ev.ts for ev in events if ev.kind is EventKind.READY}
    reaped = {ev.detail["instance"]: ev.ts for ev in events if ev.kind is EventKind.REAP}
    contacts: dict[tuple[str, str], list[float]] = defaultdict(list)
    for ev in events:
        d = ev.detail
        src = d.get("src")
        if not src:
            continue
        if ev.kind in (EventKind.TOUCH, EventKind.DEPLOY) and d.get("dst"):
            contacts[(src, d["dst"])].append(ev.ts)
        elif ev.kind is EventKind.NOTIFY and d.get("reason") in ("unknown-port-probe", "pool-exhausted",
                                                                   "closed-port"):
            contacts[(src, d["ip"])].append(ev.ts)
    out = []
    for ev in events:
        d = ev.detail
        if ev.kind is not EventKind.DEPLOY or d.get("reason") != "ahead":
            continue
        iid = d["instance"]
        end = reaped.get(iid, float("inf"))
        arrivals = [t for t in contacts.get((d["src"], d["ip"]), ()) if ev.ts <= t < end]
        if arrivals:
            out.append(RaceOutcome(iid, d["ip"], d["src"], ev.ts, ready.get(iid), min(arrivals)))
    return out


def build_report(events: list[OrchestratorEvent], horizon: float, catalog: Catalog = DEFAULT_CATALOG, *,
                 name: str = "", mode: str = "dynamic", gap: float = DEFAULT_SESSION_GAP, top: int = 10,
                 pool: ReservedIpPool | None = None) -> ScenarioReport:
    lives = lifetimes(events)
    by_ip: dict[str, list[Lifetime]] = defaultdict(list)
    for life in lives:
        by_ip[life.ip].append(life)
    template_of = {life.instance_id: life.template for life in lives}

    decisions: dict[str, set] = defaultdict(set)
    instances: Counter = Counter()
    for life in lives:
        decisions[life.template].add(life.decision)
        instances[life.template] += 1
    reaped_decisions: dict[str, set] = defaultdict(set)
    for ev in events:
        if ev.kind is EventKind.REAP:
            life = next(lf for lf in lives if lf.instance_id == ev.detail["instance"])
            reaped_decisions[life.template].add(life.decision)

    attacks: dict[str, Counter] = defaultdict(Counter)
    ddos_total = botnet_total = 0
    samples = []
    for ev in events:
        d = ev.detail
        if ev.kind is EventKind.ALERT_FOLLOWUP:
            attacks[d["instance"]]["ids"] += 1
        elif ev.kind is EventKind.NOTIFY and d.get("reason") == "ddos":
            ddos_total += 1
            life = _live_at(by_ip, d["dst"], ev.ts)
            if life is not None:
                attacks[life.instance_id]["ddos"] += 1
        elif ev.kind is EventKind.NOTIFY and d.get("reason") == "botnet":
            botnet_total += 1
            life = _live_at(by_ip, d["dst"], ev.ts) or _live_at(by_ip, d["src"], ev.ts)
            if life is not None:
                attacks[life.instance_id]["botnet"] += 1
        elif ev.kind is EventKind.NOTIFY and d.get("reason") == "sample":
            samples.append({"sha256": d["sha256"], "size": d["size"], "instance": d["instance"],
                            "path": d["path"], "ts": ev.ts})

    ledger = UptimeLedger.from_events(events, horizon)
    names = sorted(t.service.value for t in catalog)
    cpu = cpu_saving_report(ledger, horizon, names)
    return ScenarioReport(
        name=name, mode=mode, horizon=horizon, events=len(events),
        deployments={t: len(v) for t, v in sorted(decisions.items())},
        instances=dict(sorted(instances.items())),
        reaps={t: len(v) for t, v in sorted(reaped_decisions.items())},
        attacks=dict(attacks), instance_template=template_of,
        engagements=compute_engagements(hits_from_log(events), gap),
        ddos_packets=ddos_total, botnet_flows=botnet_total, samples=samples,
        races=race_outcomes(events), cpu=cpu, top=top,
        notes=["", "engagement = session-gap rule over decoy contacts "
                   f"(a gap of {gap:.0f} s or more starts a new session)"],
    )


@dataclass(frozen=True)
class Comparison:
    dynamic: ScenarioReport
    static: ScenarioReport

    @property
    def uptime_ratio(self) -> float:
        return self.dynamic.total_uptime / self.static.total_uptime if self.static.total_uptime else 0.0

    @property
    def saved_vs_static_pct(self) -> float:
        return 100.0 * (1.0 - self.uptime_ratio)

    def rows(self) -> list[tuple[str, str, str]]:
        d, s = self.dynamic, self.static
        r = [("total_uptime_s", _num(d.total_uptime), _num(s.total_uptime)),
             ("mean_engagement_s", _num(d.mean_engagement), _num(s.mean_engagement)),
             ("sessions", str(len(d.engagements)), str(len(s.engagements))),
             ("max_engagement_s", _num(d.engagements[0].duration if d.engagements else 0),
              _num(s.engagements[0].duration if s.engagements else 0)),
             ("ids_alerts", str(sum(c.get("ids", 0) for c in d.attacks.values())),
              str(sum(c.get("ids", 0) for c in s.attacks.values())))]
        templates = sorted(set(d.cpu.uptime) | set(s.cpu.uptime))
        for t in templates:
            r.append((f"uptime_s:{t}", _num(d.cpu.uptime.get(t, 0)), _num(s.cpu.uptime.get(t, 0))))
        return r

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "dynamic", "static"])
        w.writerows(self.rows())
        w.writerow(["uptime_saved_vs_static_pct", _num(self.saved_vs_static_pct), ""])
        return buf.getvalue()
