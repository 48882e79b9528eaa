"""Seeded generator of labeled packet traces.

Layout: a long attack-free prefix (``y0``) followed by three attack stages.
Each stage window opens with a short run of normal traffic and then mixes
attack packets into normal traffic at ``interleave_ratio`` normals per
attack. Normal traffic is a fixed set of client/server exchanges drawn
with skewed frequencies, plus rare benign events: recurring DNS/NTP/SNMP
packets everywhere, and inside ``y0`` only, one-off packets of the same
kinds the attacks use (pings, portmap lookups, sadmind calls). After
``y0`` a share of normal traffic comes from clients that ``y0`` never saw.

All randomness comes from one ``numpy.random.Generator`` (PCG64) seeded
with ``ScenarioConfig.seed``; draws happen in a fixed order, so a seed
reproduces the trace exactly on any platform numpy supports.
"""

from dataclasses import dataclass, field

import numpy as np

from .features import PacketRecord

ATTACK_KINDS = ("ip_sweep", "port_probe", "exploit")
SADMIND_PORT = 600  # RPC-assigned port sadmind listens on in the trace


@dataclass(frozen=True)
class StageSpec:
    kind: str
    attack_packets: int
    interleave_ratio: float = 4.0


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 7
    n_hosts_internal: int = 12
    n_hosts_external: int = 6
    nominal_packets: int = 3000
    rare_benign_rate: float = 0.04
    stage_specs: tuple = (
        StageSpec("ip_sweep", 60),
        StageSpec("port_probe", 60),
        StageSpec("exploit", 40),
    )
    services: tuple = ((80, "HTTP"), (23, "TELNET"), (21, "FTP"), (25, "TCP"), (20, "FTP"))
    n_flows: int = 10
    gap_packets: int = 100
    # share of rare events in y0 that are one-off stray packets
    stray_fraction: float = 0.15
    # benign clients that first appear after y0, and their share of stage-window normals
    n_new_hosts: int = 3
    new_host_rate: float = 0.1

    def __post_init__(self):
        for name in ("n_hosts_internal", "n_hosts_external", "nominal_packets", "n_flows"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_hosts_internal < 2:
            raise ValueError("need at least two internal hosts")
        if self.n_new_hosts < 0:
            raise ValueError("n_new_hosts must be >= 0")
        for name in ("rare_benign_rate", "stray_fraction", "new_host_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.gap_packets < 0:
            raise ValueError("gap_packets must be >= 0")
        if not self.services:
            raise ValueError("need at least one service")
        for st in self.stage_specs:
            if st.kind not in ATTACK_KINDS:
                raise ValueError(f"unknown attack kind {st.kind!r}")
            if st.attack_packets < 1 or st.interleave_ratio < 0:
                raise ValueError("stage needs >= 1 attack packet and a nonnegative interleave ratio")

    def to_dict(self):
        return {
            "seed": self.seed,
            "n_hosts_internal": self.n_hosts_internal,
            "n_hosts_external": self.n_hosts_external,
            "nominal_packets": self.nominal_packets,
            "rare_benign_rate": self.rare_benign_rate,
            "stage_specs": [[s.kind, s.attack_packets, s.interleave_ratio] for s in self.stage_specs],
            "services": [list(s) for s in self.services],
            "n_flows": self.n_flows,
            "gap_packets": self.gap_packets,
            "stray_fraction": self.stray_fraction,
            "n_new_hosts": self.n_new_hosts,
            "new_host_rate": self.new_host_rate,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "stage_specs" in d:
            d["stage_specs"] = tuple(StageSpec(k, int(a), float(r)) for k, a, r in d["stage_specs"])
        if "services" in d:
            d["services"] = tuple((int(p), str(proto)) for p, proto in d["services"])
        return cls(**d)


@dataclass
class Trace:
    records: list
    labels: np.ndarray
    windows: dict = field(default_factory=dict)  # name -> (start, stop)


def internal_ip(i):
    return f"172.16.112.{10 + i}"


def external_ip(i):
    return f"197.182.91.{20 + i}"


ATTACKER_IP = "202.77.162.213"


class _Emitter:
    """Holds the network layout and draws packets from the shared stream."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        n_int, n_ext = cfg.n_hosts_internal, cfg.n_hosts_external
        self.internal = [internal_ip(i) for i in range(n_int)]
        self.external = [external_ip(i) for i in range(n_ext)]
        n_servers = max(1, n_int // 3)
        self.servers = self.internal[:n_servers]
        clients = self.internal[n_servers:] + self.external
        self.flows = []
        for _ in range(cfg.n_flows):
            c = clients[rng.integers(len(clients))]
            s = self.servers[rng.integers(n_servers)]
            port, proto = cfg.services[rng.integers(len(cfg.services))]
            req = float(rng.uniform(60, 400))
            resp = float(rng.uniform(200, 1500))
            self.flows.append((c, s, port, proto, req, resp))
        # Zipf-like popularity
        w = 1.0 / np.arange(1, cfg.n_flows + 1) ** 1.1
        self.flow_p = w / w.sum()
        self.newcomers = [internal_ip(n_int + j) for j in range(cfg.n_new_hosts)]
        self.admin = self.internal[-1]
        self.resolver = self.external[0]
        self.timeserver = self.external[-1]

    def _ephemeral(self):
        return int(self.rng.integers(1025, 65536))

    def _len(self, mean, spread=0.05):
        return max(40, int(round(mean * (1 + spread * self.rng.standard_normal()))))

    def nominal(self, newcomer=False):
        c, s, port, proto, req, resp = self.flows[self.rng.choice(len(self.flows), p=self.flow_p)]
        if newcomer:
            c = self.newcomers[self.rng.integers(len(self.newcomers))]
        eph = self._ephemeral()
        if self.rng.random() < 0.5:
            return PacketRecord(0.0, c, s, eph, port, proto, self._len(req))
        return PacketRecord(0.0, s, c, port, eph, proto, self._len(resp))

    def rare(self):
        """Benign but infrequent: DNS lookups, time sync and SNMP polls."""
        kind = self.rng.integers(4)
        srv = self.servers[self.rng.integers(len(self.servers))]
        if kind == 0:
            return PacketRecord(0.0, srv, self.resolver, self._ephemeral(), 53, "DNS", self._len(80, 0.2))
        if kind == 1:
            return PacketRecord(0.0, self.resolver, srv, 53, self._ephemeral(), "DNS", self._len(160, 0.2))
        if kind == 2:
            return PacketRecord(0.0, srv, self.timeserver, 123, 123, "NTP", 90)
        return PacketRecord(0.0, self.admin, srv, self._ephemeral(), 161, "SNMP", self._len(120, 0.1))

    def stray(self):
        """A one-off benign packet of a kind attackers also use."""
        hosts = self.internal + self.external
        src = hosts[self.rng.integers(len(hosts))]
        dst = self.internal[self.rng.integers(len(self.internal))]
        kind = self.rng.integers(3)
        if kind == 0:
            return PacketRecord(0.0, src, dst, None, None, "ICMP", int(self.rng.integers(60, 120)))
        if kind == 1:
            return PacketRecord(0.0, src, dst, self._ephemeral(), 111, "Portmap",
                                int(self.rng.integers(60, 200)))
        return PacketRecord(0.0, src, dst, self._ephemeral(), SADMIND_PORT, "sadmind",
                            int(self.rng.integers(200, 1500)))

    def normal(self, after_y0):
        if self.rng.random() >= self.cfg.rare_benign_rate:
            newcomer = after_y0 and self.newcomers and self.rng.random() < self.cfg.new_host_rate
            return self.nominal(bool(newcomer))
        if not after_y0 and self.rng.random() < self.cfg.stray_fraction:
            return self.stray()
        return self.rare()

    def attack(self, kind, i):
        if kind == "ip_sweep":
            # walks the internal /24 including addresses with no live host
            dst = f"172.16.112.{1 + (i * 7) % 250}"
            return PacketRecord(0.0, ATTACKER_IP, dst, None, None, "ICMP", 60)
        live = self.internal
        if kind == "port_probe":
            dst = live[i % len(live)]
            return PacketRecord(0.0, ATTACKER_IP, dst, self._ephemeral(), 111, "Portmap", self._len(84, 0.1))
        dst = live[i % len(live)]
        return PacketRecord(0.0, ATTACKER_IP, dst, self._ephemeral(), SADMIND_PORT, "sadmind",
                            self._len(1800, 0.1))


def generate(config=None):
    """Build a labeled trace; returns a ``Trace`` with named windows."""
    cfg = config or ScenarioConfig()
    rng = np.random.default_rng(cfg.seed)
    em = _Emitter(cfg, rng)

    records, labels, windows = [], [], {}
    for _ in range(cfg.nominal_packets):
        records.append(em.normal(after_y0=False))
        labels.append(False)
    windows["y0"] = (0, len(records))

    for k, st in enumerate(cfg.stage_specs, start=1):
        start = len(records)
        for _ in range(cfg.gap_packets):
            records.append(em.normal(after_y0=True))
            labels.append(False)
        n_norm = int(round(st.attack_packets * st.interleave_ratio))
        is_attack = np.zeros(st.attack_packets + n_norm, dtype=bool)
        is_attack[rng.permutation(is_attack.size)[:st.attack_packets]] = True
        i = 0
        for flag in is_attack:
            if flag:
                records.append(em.attack(st.kind, i))
                i += 1
            else:
                records.append(em.normal(after_y0=True))
            labels.append(bool(flag))
        windows[f"stage{k}"] = (start, len(records))

    t = np.cumsum(rng.exponential(0.05, len(records)))
    stamped = [
        PacketRecord(round(float(ts), 6), r.src_ip, r.dst_ip, r.src_port, r.dst_port, r.protocol, r.length)
        for ts, r in zip(t, records)
    ]
    return Trace(stamped, np.asarray(labels, dtype=bool), windows)
