"""Per-packet DDoS features from occurrence lookback rings and timestamp history."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

from .learners import ClassifierModel, UntrainedModel
from .packets import Packet

ADDRESS_FIELDS = ("eth_src", "eth_dst", "ip_src", "ip_dst")
LOOKBACKS = (100, 1000)
DT_STEPS = (1, 10, 100, 1000)

FEATURE_NAMES = (
    [f"{f}_occ_{n}" for n in LOOKBACKS for f in ADDRESS_FIELDS]
    + ["dt_prev", "dt_10", "dt_100", "dt_1000", "proto_code", "src_port", "dst_port", "length"]
)
FEATURE_KINDS = ["numeric"] * 12 + ["categorical"] + ["numeric"] * 3

DDOS, NORMAL = "DDOS", "NORMAL"


class _Ring:
    """Fixed-capacity window of address tuples with per-field occurrence counters."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: deque[tuple[str, ...]] = deque()
        self.counters = [Counter() for _ in ADDRESS_FIELDS]

    def push(self, addrs: tuple[str, ...]) -> None:
        if len(self.items) == self.capacity:
            old = self.items.popleft()
            for c, a in zip(self.counters, old):
                c[a] -= 1
                if c[a] == 0:
                    del c[a]
        self.items.append(addrs)
        for c, a in zip(self.counters, addrs):
            c[a] += 1

    def occurrences(self, addrs: tuple[str, ...]) -> list[int]:
        return [c.get(a, 0) for c, a in zip(self.counters, addrs)]


@dataclass
class LookbackState:
    rings: dict[int, _Ring] = field(default_factory=lambda: {n: _Ring(n) for n in LOOKBACKS})
    ts_history: deque = field(default_factory=lambda: deque(maxlen=max(DT_STEPS)))
    first_ts: float | None = None


def update_and_extract(p: Packet, st: LookbackState) -> list[float]:
    """Features over the history *before* ``p``; then ``p`` is pushed into the history."""
    addrs = (p.eth_src, p.eth_dst, p.ip_src, p.ip_dst)
    occ = []
    for n in LOOKBACKS:
        occ.extend(st.rings[n].occurrences(addrs))
    hist = st.ts_history
    dts = []
    for m in DT_STEPS:
        if not hist:
            dts.append(0.0)
        elif len(hist) >= m:
            dts.append(p.ts - hist[-m])
        else:
            dts.append(p.ts - st.first_ts)
    vec = [float(v) for v in occ] + dts + [float(int(p.proto)), float(p.src_port), float(p.dst_port),
                                           float(p.length)]
    for ring in st.rings.values():
        ring.push(addrs)
    if st.first_ts is None:
        st.first_ts = p.ts
    hist.append(p.ts)
    return vec


def classify_packet(vec, model: ClassifierModel | None) -> str:
    if model is None or not model.trained:
        raise UntrainedModel("DDoS model not trained")
    return DDOS if model.predict_one(vec) == 1 else NORMAL


@dataclass
class DdosDetector:
    model: ClassifierModel
    state: LookbackState = field(default_factory=LookbackState)
    total: int = 0

    def __post_init__(self):
        self.model.check_schema(FEATURE_NAMES)

    def observe(self, p: Packet) -> str:
        label = classify_packet(update_and_extract(p, self.state), self.model)
        if label == DDOS:
            self.total += 1
        return label
