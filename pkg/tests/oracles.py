"""Independent reference implementations used as test oracles.

Each one is written the slow, obvious way and shares no code with the package
beyond plain data types.
"""

from __future__ import annotations

import math


def select_ips_oracle(dst: str, n: int, pool_ips, occupied) -> list[str]:
    """Set arithmetic over the pool, then take from the front or back by direction."""
    if dst not in pool_ips:
        raise KeyError(dst)
    blocked = set(occupied) | {dst}
    candidates = [ip for ip in pool_ips if ip not in blocked]
    if n <= 0:
        return []
    if dst == pool_ips[0]:
        return candidates[:n]
    return candidates[-n:] if n <= len(candidates) else candidates


def percent_decode(text: str) -> str:
    """One pass of %XX decoding into UTF-8 with replacement, written byte by byte."""
    out = bytearray()
    i = 0
    while i < len(text):
        c = text[i]
        pair = text[i + 1:i + 3]
        if c == "%" and len(pair) == 2 and all(h in "0123456789abcdefABCDEF" for h in pair):
            out.append(int(pair, 16))
            i += 3
        else:
            out.extend(c.encode("utf-8"))
            i += 1
    return out.decode("utf-8", errors="replace")


def count_substring(text: str, token: str) -> int:
    """Non-overlapping left-to-right occurrences, scanning one position at a time."""
    count = i = 0
    while i <= len(text) - len(token):
        if text[i:i + len(token)] == token:
            count += 1
            i += len(token)
        else:
            i += 1
    return count


def http_counts_oracle(raw: str, tokens) -> list[int]:
    text = percent_decode(raw).lower()
    return [count_substring(text, t) for t in tokens]


def ddos_features_oracle(packets) -> list[list[float]]:
    """Recount every feature from the full history list for every packet."""
    out = []
    history = []
    for p in packets:
        addrs = (p.eth_src, p.eth_dst, p.ip_src, p.ip_dst)
        row = []
        for n in (100, 1000):
            window = history[-n:]
            for k in range(4):
                row.append(float(sum(1 for h in window if h[0][k] == addrs[k])))
        for m in (1, 10, 100, 1000):
            if not history:
                row.append(0.0)
            elif len(history) >= m:
                row.append(p.ts - history[-m][1])
            else:
                row.append(p.ts - history[0][1])
        row += [float(int(p.proto)), float(p.src_port), float(p.dst_port), float(p.length)]
        out.append(row)
        history.append((addrs, p.ts))
    return out


def window_totals_oracle(packets, window: float = 60.0) -> dict[int, tuple[int, int]]:
    """Per window: (packet count, byte total) straight from the packets."""
    totals: dict[int, list[int]] = {}
    for p in packets:
        w = int(math.floor(p.ts / window))
        acc = totals.setdefault(w, [0, 0])
        acc[0] += 1
        acc[1] += p.length
    return {w: (a[0], a[1]) for w, a in totals.items()}


def confusion_oracle(y_true, y_pred) -> dict[str, float]:
    tp = fp = fn = tn = 0
    for t, p in zip(y_true, y_pred):
        if t == 1 and p == 1:
            tp += 1
        elif t == 0 and p == 1:
            fp += 1
        elif t == 1 and p == 0:
            fn += 1
        else:
            tn += 1
    n = tp + fp + fn + tn
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "accuracy": 100.0 * (tp + tn) / n if n else 0.0,
            "precision": precision, "recall": recall, "f_score": f}

