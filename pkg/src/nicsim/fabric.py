"""Topology construction: host+NIC nodes wired point-to-point through lossy links."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

from .kernel import Simulator
from .rdma import NicConfig, RdmaNic
from .transport import LossyLink, Transport


class ConfigError(ValueError):
    pass


@dataclass
class Topology:
    sim: Simulator
    nodes: dict[str, RdmaNic]
    roles: dict[str, str]
    links: list[tuple[str, str, LossyLink, LossyLink]] = field(default_factory=list)
    digest: str = ""

    def by_role(self, role: str) -> RdmaNic:
        for name, r in self.roles.items():
            if r == role:
                return self.nodes[name]
        raise KeyError(role)


def config_digest(conf: dict) -> str:
    blob = json.dumps(conf, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def nic_config(overrides: dict | None) -> NicConfig:
    overrides = dict(overrides or {})
    known = {f.name for f in fields(NicConfig)}
    bad = sorted(set(overrides) - known)
    if bad:
        raise ConfigError(f"nic.{bad[0]}: unknown key")
    return NicConfig(**overrides)


def build_topology(conf: dict, sim: Simulator | None = None) -> Topology:
    """Build nodes and links from a topology dict.

    ``{"nodes": [{"name", "role"}...], "links": [{"a", "b", "latency_ns",
    "bandwidth_gbps", "loss_rate", "seed", "loss_model"}...], "nic": {...},
    "transport": {...}}``.  A link with ``a == b`` is a loopback.
    """
    node_confs = conf.get("nodes") or []
    link_confs = conf.get("links") or []
    if not node_confs:
        raise ConfigError("topology.nodes: at least one node required")
    if not link_confs:
        raise ConfigError("topology.links: at least one link required")
    cfg = nic_config(conf.get("nic"))
    sim = sim or Simulator(clock_hz=cfg.clock_hz)
    tcfg = dict(conf.get("transport") or {})
    names = [n["name"] for n in node_confs]
    if len(set(names)) != len(names):
        raise ConfigError("topology.nodes: duplicate node name")
    ports: dict[str, int] = {n: 0 for n in names}
    for i, l in enumerate(link_confs):
        for end in ("a", "b"):
            if l.get(end) not in ports:
                raise ConfigError(f"topology.links[{i}].{end}: dangling endpoint {l.get(end)!r}")
        ports[l["a"]] += 1
        if l["b"] != l["a"]:
            ports[l["b"]] += 1
    for n, k in ports.items():
        if k != 1:
            raise ConfigError(f"topology: node {n!r} has {k} links, expected exactly 1")

    nodes: dict[str, RdmaNic] = {}
    transports: dict[str, Transport] = {}
    links = []
    for i, l in enumerate(link_confs):
        latency = int(round(l.get("latency_ns", 500) * 1000))
        bw = l.get("bandwidth_gbps", 102.4) * 1e9
        ser = int(round((cfg.mtu + 64) * 8e12 / bw))
        rtt = 2 * latency + ser
        for end in {l["a"], l["b"]}:
            transports[end] = Transport(sim, rtt_estimate=rtt, name=f"{end}.ts", **tcfg)
        kw = dict(bandwidth=bw, loss_rate=l.get("loss_rate", 0.0),
                  loss_model=l.get("loss_model", "bernoulli"))
        seed = l.get("seed", 0)
        fwd = LossyLink(sim, latency, seed=seed, name=f"{l['a']}->{l['b']}", **kw)
        ta, tb = transports[l["a"]], transports[l["b"]]
        ta.attach_link(fwd)
        fwd.connect(tb.receive)
        if l["a"] == l["b"]:
            rev = fwd
        else:
            rev = LossyLink(sim, latency, seed=seed + 1, name=f"{l['b']}->{l['a']}", **kw)
            tb.attach_link(rev)
            rev.connect(ta.receive)
        links.append((l["a"], l["b"], fwd, rev))
    roles = {}
    for n in node_confs:
        ncfg = nic_config({**(conf.get("nic") or {}), **(n.get("nic") or {})}) if n.get("nic") else cfg
        nodes[n["name"]] = RdmaNic(sim, ncfg, transports[n["name"]], name=n["name"])
        roles[n["name"]] = n.get("role", "requester")
    return Topology(sim, nodes, roles, links, config_digest(conf))


def two_node_config(latency_ns: float = 500, loss_rate: float = 0.0, seed: int = 0, **extra) -> dict:
    conf = {"nodes": [{"name": "req", "role": "requester"}, {"name": "resp", "role": "responder"}],
            "links": [{"a": "req", "b": "resp", "latency_ns": latency_ns, "loss_rate": loss_rate,
                       "seed": seed}]}
    conf.update(extra)
    return conf
