"""Regenerate smoke.pcap: 100 packets of LAN chatter, a short sweep over reserved addresses and one SQLi request."""

import random
from pathlib import Path

from soar.orchestrator import ReservedIpPool
from soar.packets import capture_bytes
from soar.traffic import Background, attack_request, default_lan, http_packet, scan_sweep

EPOCH_US = 1_700_000_000_000_000


def smoke_packets() -> list:
    rng = random.Random("smoke")
    pool = ReservedIpPool.evenly_spaced("172.26.233.4", 20, 7)
    hosts, servers = default_lan(reserved=set(pool.ips))
    bg = Background(hosts, servers, rng)
    pkts = []
    t = 0.0
    while len(pkts) < 59:
        t += rng.expovariate(2.0)
        pkts.extend(bg.session(t))
    pkts = sorted(pkts, key=lambda p: p.ts)[:59]
    targets = [f"172.26.233.{h}" for h in range(1, 21)]
    pkts += scan_sweep(5.0, "10.13.37.11", targets, [22, 80], 1.5)
    pkts.append(http_packet(40.0, "10.13.37.11", "172.26.233.4", 51000, attack_request(rng, "SQLI")))
    pkts.sort(key=lambda p: p.ts)
    return pkts[:100]


if __name__ == "__main__":
    pkts = smoke_packets()
    assert len(pkts) == 100
    Path(__file__).with_name("smoke.pcap").write_bytes(capture_bytes(pkts, EPOCH_US))
