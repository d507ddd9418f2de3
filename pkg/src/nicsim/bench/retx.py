"""Loss-rate sweep of the transport alone: GBN vs SR goodput and retransmitted bytes."""
from __future__ import annotations

from ..formats import RDMA_HEADER_BYTES
from ..kernel import Simulator
from ..transport import LossyLink, Transport
from .metrics import Completion, RunMetrics, steady_rate


def retx_point(algorithm: str, loss_rate: float, n_packets: int = 60000, payload: int = 4096,
               latency_us: float = 125.0, bandwidth_gbps: float = 102.4, window: int = 4096,
               seed: int = 0, loss_model: str = "stratified") -> RunMetrics:
    sim = Simulator()
    lat = int(round(latency_us * 1e6))
    size = payload + RDMA_HEADER_BYTES
    bw = bandwidth_gbps * 1e9
    rtt = 2 * lat + int(round(size * 8e12 / bw))
    tx = Transport(sim, algorithm=algorithm, window=window, rtt_estimate=rtt, name="tx")
    rx = Transport(sim, algorithm=algorithm, window=window, rtt_estimate=rtt, name="rx")
    fwd = LossyLink(sim, lat, bw, loss_rate, seed=seed, loss_model=loss_model)
    rev = LossyLink(sim, lat, bw, loss_rate, seed=seed + 1, loss_model=loss_model)
    tx.attach_link(fwd)
    fwd.connect(rx.receive)
    rx.attach_link(rev)
    rev.connect(tx.receive)
    commits: list[Completion] = []
    state = {"next": 0, "expect": 0}

    def fill(_=None):
        while state["next"] < n_packets and tx.tx_inject(0, state["next"], size):
            state["next"] += 1

    def commit(conn, seq):
        if seq != state["expect"]:
            raise AssertionError(f"out-of-order commit {seq}, expected {state['expect']}")
        state["expect"] += 1
        commits.append(Completion(0, sim.now, payload))

    tx.open(0, 0, on_space=fill)
    rx.open(0, 0, on_commit=commit)
    fill()
    sim.run()
    if len(commits) != n_packets:
        raise AssertionError(f"{len(commits)} of {n_packets} packets committed")
    bps, pps = steady_rate(commits)
    return RunMetrics(bps * 8 / 1e9, pps / 1e6, retx_bytes=tx.retx_bytes,
                      extra={"dropped": fwd.dropped + rev.dropped, "timeouts": tx.conns[0].timeouts})
