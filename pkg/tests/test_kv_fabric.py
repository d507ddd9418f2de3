import pytest

from nicsim.bench.kv_bench import kv_point
from nicsim.fabric import ConfigError, build_topology, config_digest, nic_config, two_node_config
from nicsim.formats import Opcode, Status, Wqe
from nicsim.kernel import Simulator
from nicsim.kv import HASH_CYCLES, KvConfig, KvNic, kv_hash


def test_kv_hash_matches_sha256_prefix():
    assert kv_hash(b"") == 0xE3B0C44298FC1C14
    assert kv_hash(b"abc") == kv_hash(b"abc")


def kv_rig(cores=1, table=1024):
    sim = Simulator()
    out = []
    kv = KvNic(sim, KvConfig(n_hash_cores=cores, table_size=table), on_response=out.append)
    return sim, kv, out


def test_put_then_get_and_missing_key():
    sim, kv, out = kv_rig()
    kv.kv_put(b"alpha", b"one")
    sim.run()
    q = kv.create_client_queue(64)
    kv.post_get(q, b"alpha", 1)
    kv.post_get(q, b"beta", 2)
    sim.run()
    by_id = {r.req_id: r for r in out}
    assert by_id[1].status == Status.SUCCESS and by_id[1].value.rstrip(b"\0") == b"one"
    assert by_id[2].status == Status.NOT_FOUND
    # 14 B Ethernet header outside the status byte and value
    assert len(by_id[1].packet.headers[-1]) == 14


def test_collision_overwrites_and_misses():
    sim, kv, out = kv_rig(table=1)
    kv.kv_put(b"a", b"1")
    kv.kv_put(b"b", b"2")
    sim.run()
    assert kv.collisions == 1
    q = kv.create_client_queue(64)
    kv.post_get(q, b"a", 1)
    kv.post_get(q, b"b", 2)
    sim.run()
    by_id = {r.req_id: r for r in out}
    assert by_id[1].status == Status.NOT_FOUND and by_id[2].status == Status.SUCCESS


def test_single_core_emits_one_digest_per_64_cycles():
    sim, kv, out = kv_rig()
    kv.kv_put(b"k", b"v")
    sim.run()
    kv.warm()
    q = kv.create_client_queue(256)
    for i in range(20):
        kv.post_get(q, b"k", i, ring=False)
    kv.driver.ring_doorbell(q)
    sim.run()
    gaps = {out[i + 1].time - out[i].time for i in range(5, 19)}
    assert gaps == {sim.cycles(HASH_CYCLES)}
    assert kv.digests == 20
    with pytest.raises(ValueError):
        KvNic(Simulator(), KvConfig(n_hash_cores=0))


@pytest.mark.parametrize("n,expect", [(1, 3.125), (4, 12.5)])
def test_kv_scaling_small(n, expect):
    m = kv_point(n, n_requests=3000)
    assert m.throughput_mops == pytest.approx(expect, rel=0.1)
    assert m.extra["wrong"] == 0


def test_config_errors_carry_key_path():
    with pytest.raises(ConfigError, match="nic.bogus"):
        nic_config({"bogus": 1})
    conf = two_node_config()
    conf["links"][0]["b"] = "nowhere"
    with pytest.raises(ConfigError, match=r"links\[0\].b"):
        build_topology(conf)
    with pytest.raises(ConfigError, match="nodes"):
        build_topology({"nodes": [], "links": []})
    conf = two_node_config()
    conf["nodes"].append({"name": "lonely"})
    with pytest.raises(ConfigError, match="lonely"):
        build_topology(conf)


def test_digest_is_canonical():
    a = {"x": 1, "y": [1, 2]}
    b = {"y": [1, 2], "x": 1}
    assert config_digest(a) == config_digest(b) and len(config_digest(a)) == 16
    assert config_digest(a) != config_digest({"x": 2, "y": [1, 2]})


def test_per_node_overrides():
    conf = two_node_config(nic={"cache_mode": "all_miss"})
    conf["nodes"][1]["nic"] = {"cache_mode": "all_hit"}
    topo = build_topology(conf)
    assert topo.nodes["req"].cfg.cache_mode == "all_miss"
    assert topo.nodes["resp"].cfg.cache_mode == "all_hit"
    assert topo.by_role("responder") is topo.nodes["resp"]


def test_loopback_write():
    topo = build_topology({"nodes": [{"name": "solo"}], "links": [{"a": "solo", "b": "solo", "latency_ns": 50}]})
    nic = topo.nodes["solo"]
    a = nic.create_qp(0, 1)
    nic.create_qp(1, 0)
    src, dst = nic.reg_mr(8192), nic.reg_mr(8192)
    nic.pool.write(src.pa, bytes(range(256)) * 8)
    nic.warm_caches()
    cqes = []
    nic.on_cqe = lambda qp, cqe, t: cqes.append(cqe)
    nic.post(a, Wqe(Opcode.RDMA_WRITE, 1, [(src.va, 2048, src.lkey)], dst.va, dst.rkey))
    topo.sim.run()
    assert cqes[0].status == Status.SUCCESS
    assert nic.pool.read(dst.pa, 2048) == nic.pool.read(src.pa, 2048)
