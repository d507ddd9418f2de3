import math

import pytest

from nicsim.kernel import Simulator
from nicsim.transport import DATA, Frame, LossyLink, Transport, psn_add, psn_diff, psn_lt

LAT = 1_000_000  # 1 us
SIZE = 1024


class DropLink(LossyLink):
    """Drops the first transmission of chosen PSNs (or every data frame)."""

    def __init__(self, sim, drop=(), drop_all=False, **kw):
        super().__init__(sim, LAT, **kw)
        self.drop = set(drop)
        self.drop_all = drop_all
        self.data_log = []

    def transmit(self, frame: Frame) -> bool:
        if frame.kind == DATA:
            self.data_log.append((frame.psn, frame.retx, self.sim.now))
            if self.drop_all or (not frame.retx and frame.psn in self.drop):
                self.drop.discard(frame.psn)
                self.free_at = max(self.sim.now, self.free_at) + int(round(frame.size * self._ps_per_byte))
                self.sent += 1
                self.dropped += 1
                return False
        return super().transmit(frame)


def pair(algorithm, n, drop=(), drop_all=False, window=32, reliable=True, initial_psn=0):
    sim = Simulator()
    rtt = 2 * LAT + int(SIZE * 8e12 / 102.4e9)
    tx = Transport(sim, algorithm=algorithm, window=window, rtt_estimate=rtt, initial_psn=initial_psn)
    rx = Transport(sim, algorithm=algorithm, window=window, rtt_estimate=rtt, initial_psn=initial_psn)
    fwd = DropLink(sim, drop, drop_all)
    rev = LossyLink(sim, LAT)
    tx.attach_link(fwd)
    fwd.connect(rx.receive)
    rx.attach_link(rev)
    rev.connect(tx.receive)
    got, errs = [], []
    state = {"next": 0}

    def fill(_=None):
        while state["next"] < n and tx.tx_inject(0, state["next"], SIZE):
            state["next"] += 1

    tx.open(0, 0, reliable=reliable, on_space=fill, on_error=errs.append)
    rx.open(0, 0, reliable=reliable, on_commit=lambda c, p: got.append(p))
    fill()
    sim.run()
    return sim, tx, fwd, got, errs


def test_psn_arithmetic_wraps():
    top = (1 << 24) - 1
    assert psn_add(top, 1) == 0
    assert psn_diff(0, top) == 1 and psn_diff(top, 0) == -1
    assert psn_lt(top, 2) and not psn_lt(2, top)


def test_first_packet_psn_and_no_loss():
    _, tx, fwd, got, _ = pair("gbn", 8)
    assert fwd.data_log[0][0] == 0
    assert got == list(range(8)) and tx.retx_bytes == 0


def test_gbn_drop_third_retransmits_six():
    _, tx, fwd, got, _ = pair("gbn", 8, drop={2})
    assert got == list(range(8))
    assert sorted(p for p, retx, _ in fwd.data_log if retx) == [2, 3, 4, 5, 6, 7]
    assert tx.retx_bytes == 6 * SIZE


def test_sr_drop_third_retransmits_one():
    _, tx, fwd, got, _ = pair("sr", 8, drop={2})
    assert got == list(range(8))
    assert [p for p, retx, _ in fwd.data_log if retx] == [2]


def test_psn_wrap_end_to_end():
    _, _, _, got, _ = pair("sr", 40, drop={(1 << 24) - 1, 3}, initial_psn=(1 << 24) - 10)
    assert got == list(range(40))


def test_window_backpressure():
    sim = Simulator()
    tx = Transport(sim, window=4, rtt_estimate=3 * LAT)
    link = LossyLink(sim, LAT)
    tx.attach_link(link)
    tx.open(0, 0)
    assert all(tx.tx_inject(0, i, 64) for i in range(4))
    assert not tx.can_inject(0) and not tx.tx_inject(0, 4, 64)


def test_single_loss_recovered_by_timeout():
    _, tx, fwd, got, _ = pair("sr", 1, drop={0})
    assert got == [0]
    assert tx.conns[0].timeouts == 1
    first, retx = fwd.data_log[0][2], fwd.data_log[1][2]
    assert retx - first >= tx.base_rto


def test_rto_backoff_and_unrecoverable_error():
    sim, tx, fwd, got, errs = pair("gbn", 1, drop_all=True)
    assert got == [] and errs == [0]
    times = [t for _, _, t in fwd.data_log]
    assert len(times) == 1 + 7  # original + max_retries
    gaps = [b - a for a, b in zip(times, times[1:])]
    assert gaps[3] == pytest.approx(8 * gaps[0], rel=0.01)  # three losses of the same PSN
    assert tx.conns[0].failed


def test_unreliable_bypasses_retransmission():
    _, tx, fwd, got, _ = pair("sr", 8, drop={2}, reliable=False)
    assert got == [0, 1, 3, 4, 5, 6, 7]
    assert tx.retx_bytes == 0


@pytest.mark.parametrize("p,n", [(0.0, 2000), (1.0, 500)])
def test_link_extremes(p, n):
    sim = Simulator()
    link = LossyLink(sim, LAT, loss_rate=p)
    out = []
    link.connect(lambda f: out.append(f.psn))
    for i in range(n):
        link.transmit(Frame(DATA, 0, i, 64))
    sim.run()
    assert out == (list(range(n)) if p == 0 else [])


def test_bernoulli_drops_within_three_sigma():
    sim = Simulator()
    n, p = 1_000_000, 1e-3
    link = LossyLink(sim, 0, loss_rate=p, seed=11)
    drops = sum(link._drop() for _ in range(n))
    assert abs(drops - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_stratified_drops_exact_rate():
    sim = Simulator()
    link = LossyLink(sim, 0, loss_rate=1e-3, seed=3, loss_model="stratified")
    assert sum(link._drop() for _ in range(100_000)) == 100


def test_bad_parameters():
    sim = Simulator()
    with pytest.raises(ValueError):
        LossyLink(sim, 0, loss_rate=1.5)
    with pytest.raises(ValueError):
        Transport(sim, algorithm="tcp")
