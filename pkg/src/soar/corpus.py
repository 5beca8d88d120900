"""Synthetic labeled corpora for the three detection tasks.

Labels are exact by construction: every row is generated by a known process
(benign browsing, a payload family, a flood burst, a beacon), never inferred.
"""

from __future__ import annotations

import csv
import random
from pathlib import Path

from . import ddos
from .botnet import CSV_HEADER, FlowRecord, aggregate_flows, flow_key, write_flow_csv
from .http_ids import dataset_for
from .learners import Dataset
from .packets import Packet, Proto
from .traffic import (
    Background, attack_request, beacon, benign_request, default_lan, flood, scan_sweep, syn, tcp,
)

TASKS = ("httpids", "ddos", "botnet")
HTTP_CLASSES = ("benign", "xss", "sqli", "osc")
DEFAULT_SIZES = {
    "httpids": {"benign": 2000, "xss": 1000, "sqli": 1000, "osc": 1000},
    "ddos": {"normal": 3000, "ddos": 2000},
    "botnet": {"normal": 3500, "botnet": 1500},
}
MIN_PER_CLASS = 100
C2_PORTS = (443, 4444, 6667, 8443, 1604, 9001)


class CorpusError(ValueError):
    pass


def _check_sizes(task: str, sizes: dict[str, int]) -> dict[str, int]:
    expected = set(DEFAULT_SIZES[task])
    if set(sizes) != expected:
        raise CorpusError(f"{task} sizes need exactly the classes {sorted(expected)}")
    small = {k: v for k, v in sizes.items() if v < MIN_PER_CLASS}
    if small:
        raise CorpusError(f"fewer than {MIN_PER_CLASS} rows requested for {sorted(small)}")
    return dict(sizes)


# -- http ------------------------------------------------------------------


def http_rows(seed: int, sizes: dict[str, int] | None = None) -> list[tuple[str, str]]:
    """(label, raw request) rows in a seeded shuffled order."""
    sizes = _check_sizes("httpids", sizes or DEFAULT_SIZES["httpids"])
    rng = random.Random(f"httpids:{seed}")
    rows = []
    for label in HTTP_CLASSES:
        for _ in range(sizes[label]):
            raw = benign_request(rng) if label == "benign" else attack_request(rng, label.upper())
            rows.append((label, raw))
    rng.shuffle(rows)
    return rows


def write_http_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "raw"])
        w.writerows(rows)


def read_http_csv(path) -> list[tuple[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"label", "raw"} <= set(reader.fieldnames or []):
            raise CorpusError("HTTP corpus needs label and raw columns")
        return [(r["label"].strip().lower(), r["raw"]) for r in reader]


def http_dataset(rows, attack: str) -> Dataset:
    return dataset_for([raw for _, raw in rows], [label for label, _ in rows], attack.upper())


# -- packet streams --------------------------------------------------------


_SERVICE_PORTS = [22, 25, 80, 502, 3306, 8080]


def _slow_session(rng: random.Random, t: float, src: str, dst: str, port: int, span: float) -> list[Packet]:
    """An attacker-paced interactive session: a packet every few seconds to minutes."""
    sport = rng.randint(32768, 60999)
    out = [syn(t, src, dst, sport, port)]
    end = t + span
    while t < end:
        out.append(tcp(t, src, dst, sport, port, b"x" * rng.randint(10, 300)))
        t += rng.uniform(5.0, 120.0)
    return out


def _probe(rng: random.Random, t: float, src: str, dst: str, port: int) -> list[Packet]:
    """A connection attempt, sometimes followed by a banner or request."""
    sport = rng.randint(32768, 60999)
    out = [syn(t, src, dst, sport, port)]
    if rng.random() < 0.7:
        out.append(tcp(t + rng.uniform(0.0, 0.01), src, dst, sport, port, b"x" * rng.randint(10, 400)))
    return out


def normal_stream(rng: random.Random, span: float, rate: float) -> list[Packet]:
    """Background LAN chatter with occasional scans, probes and slow interactive sessions."""
    hosts, servers = default_lan()
    bg = Background(hosts, servers, rng)
    out: list[Packet] = []
    t = 0.0
    while t < span:
        t += rng.expovariate(rate)
        out.extend(bg.session(t))
        r = rng.random()
        attacker = f"10.13.37.{rng.randint(2, 250)}"
        target = f"172.26.233.{rng.randint(1, 254)}"
        if r < 0.004:
            base = rng.randint(1, 200)
            targets = [f"172.26.233.{h}" for h in range(base, min(254, base + rng.randint(5, 40)))]
            out.extend(scan_sweep(t, attacker, targets, rng.sample(_SERVICE_PORTS, rng.randint(1, 3)),
                                  rng.choice([0.5, 1.0, 1.5, 3.0]), rng.randint(30000, 60000)))
        elif r < 0.08:
            out.extend(_slow_session(rng, t, attacker, target, rng.choice(_SERVICE_PORTS), rng.uniform(60, 900)))
        elif r < 0.10:
            out.extend(_probe(rng, t, attacker, target, rng.choice(_SERVICE_PORTS)))
    out.sort(key=lambda p: p.ts)
    return out


def ddos_packets(seed: int, sizes: dict[str, int] | None = None) -> tuple[list[Packet], list[int]]:
    """Background traffic with spoofed flood bursts; exact per-class packet counts."""
    sizes = _check_sizes("ddos", sizes or DEFAULT_SIZES["ddos"])
    rng = random.Random(f"ddos:{seed}")
    n_norm, n_ddos = sizes["normal"], sizes["ddos"]
    span = 60.0
    normal: list[Packet] = []
    while len(normal) < n_norm:
        span *= 2
        normal = normal_stream(random.Random(f"ddos-bg:{seed}:{span}"), span, rng.uniform(0.3, 2.0))
    normal = normal[:n_norm]
    horizon = normal[-1].ts
    hosts, servers = default_lan()
    bursts: list[Packet] = []
    left = n_ddos
    while left:
        size = min(left, rng.randint(100, 400))
        target = rng.choice(hosts + list(servers.values()))
        port = rng.choice([80, 53, 443, 22, 8080])
        proto = rng.choice([Proto.UDP, Proto.TCP])
        pps = rng.choice([200, 500, 1000, 2000])
        bursts.extend(flood(rng, rng.uniform(0, horizon), target, port, size, 1.0 / pps, proto))
        left -= size
    tagged = [(p.ts, 0, k, p) for k, p in enumerate(normal)] + [(p.ts, 1, k, p) for k, p in enumerate(bursts)]
    tagged.sort(key=lambda x: (x[0], x[1], x[2]))
    return [x[3] for x in tagged], [x[1] for x in tagged]


def ddos_dataset_from_packets(packets, labels) -> Dataset:
    st = ddos.LookbackState()
    rows = [ddos.update_and_extract(p, st) for p in packets]
    return Dataset(list(ddos.FEATURE_NAMES), list(ddos.FEATURE_KINDS), rows, labels)


def ddos_dataset(seed: int, sizes: dict[str, int] | None = None) -> Dataset:
    return ddos_dataset_from_packets(*ddos_packets(seed, sizes))


def botnet_flows(seed: int, sizes: dict[str, int] | None = None) -> tuple[list[FlowRecord], list[int]]:
    """Windowed flows from background traffic and fixed-period beacons; exact per-class counts."""
    sizes = _check_sizes("botnet", sizes or DEFAULT_SIZES["botnet"])
    rng = random.Random(f"botnet:{seed}")
    n_norm, n_bot = sizes["normal"], sizes["botnet"]
    span = 600.0
    while True:
        normal = normal_stream(random.Random(f"botnet-bg:{seed}:{span}"), span, 0.8)
        beacons: list[Packet] = []
        for b in range(40):
            # each bot re-dials its C2 every few minutes, so source ports vary
            period = rng.choice([5, 10, 15, 20, 30, 45, 60])
            c2, c2_port, size = f"203.0.113.{rng.randint(1, 254)}", rng.choice(C2_PORTS), rng.randint(66, 400)
            t = rng.uniform(0, period)
            while t < span:
                count = int(rng.uniform(60, 900) / period) + 1
                beacons.extend(beacon(t, f"172.26.233.{10 + b % 24}", c2, c2_port, rng.randint(32768, 60999),
                                      period, size, count))
                t += count * period + rng.uniform(1, 30)
        beacons = [p for p in beacons if p.ts < span]
        bot_keys = {flow_key(p) for p in beacons}
        flows = aggregate_flows(sorted(normal + beacons, key=lambda p: p.ts))
        pos = [f for f in flows if f.key in bot_keys]
        neg = [f for f in flows if f.key not in bot_keys]
        if len(pos) >= n_bot and len(neg) >= n_norm:
            break
        span *= 2
    keep_pos = set(rng.sample(range(len(pos)), n_bot))
    keep_neg = set(rng.sample(range(len(neg)), n_norm))
    chosen = [(f, 1) for k, f in enumerate(pos) if k in keep_pos] + [(f, 0) for k, f in enumerate(neg)
                                                                     if k in keep_neg]
    chosen.sort(key=lambda x: (x[0].window_id, x[0].first_ts, x[0].key[0], x[0].key[2]))
    return [f for f, _ in chosen], [lab for _, lab in chosen]


# -- files -----------------------------------------------------------------


def gen_corpus(task: str, seed: int, out_path, sizes: dict[str, int] | None = None) -> Path:
    """Write the corpus for ``task`` to ``out_path`` (CSV) and return the path."""
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if task == "httpids":
        write_http_csv(out, http_rows(seed, sizes))
    elif task == "ddos":
        ddos_dataset(seed, sizes).to_csv(out)
    elif task == "botnet":
        flows, labels = botnet_flows(seed, sizes)
        write_flow_csv(out, flows, labels)
    else:
        raise CorpusError(f"unknown task {task!r}; expected one of {TASKS}")
    return out


def load_ddos_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:-1] != list(ddos.FEATURE_NAMES) or header[-1] != "label":
            raise CorpusError("DDoS corpus header does not match the 16-feature layout")
        rows, labels = [], []
        for r in reader:
            rows.append([float(v) for v in r[:-1]])
            labels.append(int(r[-1]))
    return Dataset(list(ddos.FEATURE_NAMES), list(ddos.FEATURE_KINDS), rows, labels)


def sniff_task(path) -> str:
    """Guess a corpus's task from its header row."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if header == ["label", "raw"]:
        return "httpids"
    if header == CSV_HEADER:
        return "botnet"
    if header[:-1] == list(ddos.FEATURE_NAMES):
        return "ddos"
    raise CorpusError(f"unrecognized corpus header in {path}")
