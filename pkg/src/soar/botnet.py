"""Netflow aggregation into 60 s tumbling windows and per-flow botnet classification."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .learners import ClassifierModel, Dataset, UntrainedModel
from .packets import ACK, FIN, PSH, RST, SYN, Packet, Proto

WINDOW = 60.0
BOTNET, NORMAL = "BOTNET", "NORMAL"


class FlowState(enum.IntEnum):
    SYN_ONLY = 0
    ESTABLISHED = 1
    FIN_RST = 2
    NON_TCP = 3


FEATURE_NAMES = ["duration", "proto_tcp", "proto_udp", "proto_icmp", "src_port", "dst_port",
                 "bytes_per_min", "pkts_per_min", "state"]
FEATURE_KINDS = ["numeric"] * 8 + ["categorical"]

# CSV layout for flow corpora; follows the column spirit of common netflow exports
CSV_HEADER = ["start_ts", "duration", "proto", "src_ip", "src_port", "dst_ip", "dst_port", "state",
              "total_packets", "total_bytes", "label"]


@dataclass(frozen=True)
class FlowRecord:
    key: tuple[str, str, int, int, Proto]
    first_ts: float
    last_ts: float
    total_bytes: int
    total_packets: int
    state: FlowState
    window_id: int

    @property
    def duration(self) -> float:
        return self.last_ts - self.first_ts

    @property
    def ip_src(self) -> str:
        return self.key[0]

    @property
    def ip_dst(self) -> str:
        return self.key[1]


def flow_key(p: Packet) -> tuple[str, str, int, int, Proto]:
    return (p.ip_src, p.ip_dst, p.src_port, p.dst_port, p.proto)


def _key_order(key):
    ip_src, ip_dst, sport, dport, proto = key
    return (tuple(int(x) for x in ip_src.split(".")), tuple(int(x) for x in ip_dst.split(".")),
            sport, dport, int(proto))


def derive_state(proto: Proto, flags_seen: int) -> FlowState:
    # without any flag information the state is unknown and folded into NON_TCP
    if proto != Proto.TCP or not flags_seen:
        return FlowState.NON_TCP
    if flags_seen & (FIN | RST):
        return FlowState.FIN_RST
    if flags_seen & (ACK | PSH):
        return FlowState.ESTABLISHED
    return FlowState.SYN_ONLY


class _Acc:
    __slots__ = ("first", "last", "nbytes", "npkts", "flags")

    def __init__(self, p: Packet):
        self.first = self.last = p.ts
        self.nbytes = self.npkts = 0
        self.flags = 0

    def add(self, p: Packet) -> None:
        self.last = p.ts
        self.nbytes += p.length
        self.npkts += 1
        self.flags |= p.tcp_flags


def _records(window_id: int, accs: dict) -> list[FlowRecord]:
    return [FlowRecord(k, a.first, a.last, a.nbytes, a.npkts, derive_state(k[4], a.flags), window_id)
            for k, a in sorted(accs.items(), key=lambda kv: _key_order(kv[0]))]


def window_of(ts: float, window: float = WINDOW) -> int:
    return math.floor(ts / window)


def aggregate_flows(packets: Iterable[Packet], window: float = WINDOW) -> list[FlowRecord]:
    """Partition packets by (window, key); output ordered by (window_id, key)."""
    windows: dict[int, dict] = {}
    for p in packets:
        accs = windows.setdefault(window_of(p.ts, window), {})
        acc = accs.get(flow_key(p))
        if acc is None:
            acc = accs[flow_key(p)] = _Acc(p)
        acc.add(p)
    out = []
    for w in sorted(windows):
        out.extend(_records(w, windows[w]))
    return out


class FlowAggregator:
    """Streaming variant of :func:`aggregate_flows` that yields closed windows."""

    def __init__(self, window: float = WINDOW):
        self.window = window
        self.current: int | None = None
        self.accs: dict = {}

    def next_boundary(self) -> float | None:
        return None if self.current is None else (self.current + 1) * self.window

    def add(self, p: Packet) -> list[FlowRecord]:
        """Add a packet; returns flows of a window closed by it (if any)."""
        w = window_of(p.ts, self.window)
        closed = []
        if self.current is not None and w != self.current:
            closed = self.flush()
        self.current = w
        acc = self.accs.get(flow_key(p))
        if acc is None:
            acc = self.accs[flow_key(p)] = _Acc(p)
        acc.add(p)
        return closed

    def flush(self) -> list[FlowRecord]:
        if self.current is None:
            return []
        out = _records(self.current, self.accs)
        self.accs = {}
        self.current = None
        return out


def per_minute(total: float, duration: float) -> float:
    """Totals over spans longer than a minute are expressed per minute."""
    return total * 60.0 / duration if duration > 60.0 else float(total)


def flow_features(duration: float, proto: Proto, src_port: int, dst_port: int, total_bytes: int,
                  total_packets: int, state: FlowState) -> list[float]:
    return [float(duration), float(proto == Proto.TCP), float(proto == Proto.UDP),
            float(proto == Proto.ICMP), float(src_port), float(dst_port),
            per_minute(total_bytes, duration), per_minute(total_packets, duration), float(int(state))]


def features_of(f: FlowRecord) -> list[float]:
    return flow_features(f.duration, f.key[4], f.key[2], f.key[3], f.total_bytes, f.total_packets, f.state)


def classify_flow(f: FlowRecord, model: ClassifierModel | None) -> str:
    if model is None or not model.trained:
        raise UntrainedModel("botnet model not trained")
    model.check_schema(FEATURE_NAMES)
    return BOTNET if model.predict_one(features_of(f)) == 1 else NORMAL


# -- CSV corpora -------------------------------------------------------------

_PROTO_NAMES = {"tcp": Proto.TCP, "udp": Proto.UDP, "icmp": Proto.ICMP}


def write_flow_csv(path, flows: Sequence[FlowRecord], labels: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for f, label in zip(flows, labels):
            w.writerow([repr(f.first_ts), repr(f.duration), f.key[4].name.lower(), f.key[0], f.key[2],
                        f.key[1], f.key[3], f.state.name, f.total_packets, f.total_bytes, int(label)])


def read_flow_csv(path) -> Dataset:
    """Load a flow CSV (our header) into a feature dataset.

    ``label`` may be 0/1 or a text label; anything containing "botnet" is positive.
    """
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"flow CSV missing columns {sorted(missing)}")
        for r in reader:
            proto = _PROTO_NAMES.get(r["proto"].strip().lower(), Proto.OTHER)
            state = FlowState[r["state"]] if r["state"] in FlowState.__members__ else FlowState.NON_TCP
            rows.append(flow_features(float(r["duration"]), proto, int(r["src_port"] or 0),
                                      int(r["dst_port"] or 0), int(float(r["total_bytes"])),
                                      int(float(r["total_packets"])), state))
            lab = r["label"].strip().lower()
            labels.append(1 if lab == "1" or "botnet" in lab else 0)
    return Dataset(list(FEATURE_NAMES), list(FEATURE_KINDS), rows, labels)
