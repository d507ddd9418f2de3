import pytest

from nicsim.kernel import Feeder, Pipeline, Server, SimulationError, Simulator, Stage, beats, percentile


def test_schedule_fires_at_time():
    sim = Simulator()
    seen = []
    sim.schedule(5, lambda: seen.append(sim.now))
    sim.run()
    assert seen == [5]


def test_same_time_fires_in_insertion_order():
    sim = Simulator()
    seen = []
    sim.schedule(7, seen.append, "a")
    sim.schedule(7, seen.append, "b")
    sim.schedule(3, seen.append, "c")
    sim.run()
    assert seen == ["c", "a", "b"]


def test_schedule_in_past_is_fatal():
    sim = Simulator()
    sim.run_until(10)
    with pytest.raises(SimulationError):
        sim.schedule(9, lambda: None)


def test_cancel_and_run_until():
    sim = Simulator()
    seen = []
    ev = sim.schedule(4, seen.append, 1)
    sim.schedule(6, seen.append, 2)
    Simulator.cancel(ev)
    assert sim.run_until(5) == 5
    assert seen == []
    sim.run()
    assert seen == [2]


def test_time_helpers():
    sim = Simulator()
    assert sim.period == 5000
    assert sim.cycles(3) == 15000
    assert beats(64) == 1 and beats(65) == 2 and beats(1) == 1
    assert sim.beats(4096) == 64
    with pytest.raises(ValueError):
        Simulator(bus_bits=12)


def test_server_reservation_is_serial():
    s = Server("x")
    assert s.reserve(0, 10) == 0
    assert s.reserve(3, 10) == 10
    assert s.reserve(50, 5) == 50
    assert s.utilization(100) == pytest.approx(0.25)


def _run_trace(seed_items):
    sim = Simulator(trace=True)
    pipe = Pipeline(sim)
    a = pipe.add(Stage(sim, "a", overhead=2))
    b = pipe.add(Stage(sim, "b", overhead=0))
    pipe.connect(a, b, capacity=2)
    src = pipe.source(a, capacity=4)
    out = []
    b.sink = lambda item, t: out.append((len(item), t))
    Feeder(sim, src, (bytes(n) for n in seed_items))
    sim.run()
    return out, sim.trace


def test_pipeline_fifo_and_throughput():
    out, _ = _run_trace([64] * 10)
    assert [n for n, _ in out] == [64] * 10
    gaps = {out[i + 1][1] - out[i][1] for i in range(len(out) - 1)}
    assert gaps == {3 * 5000}  # 1 beat + 2 overhead cycles at the slower stage


def test_pipeline_deterministic_trace():
    sizes = [64, 128, 1, 4096, 300] * 5
    assert _run_trace(sizes) == _run_trace(sizes)


def test_channel_capacity_respected():
    sim = Simulator()
    pipe = Pipeline(sim)
    a = pipe.add(Stage(sim, "a", overhead=0))
    slow = pipe.add(Stage(sim, "slow", overhead=20))
    ch = pipe.connect(a, slow, capacity=2)
    src = pipe.source(a, capacity=8)
    out = []
    slow.sink = lambda item, t: out.append(t)
    Feeder(sim, src, (bytes(64) for _ in range(20)))
    sim.run()
    assert len(out) == 20
    assert ch.max_occupancy == 2
    assert a.stalled_time > 0


def test_percentile():
    assert percentile([4, 1, 3, 2], 50) == 2
    assert percentile([1, 2, 3, 4], 100) == 4
    assert percentile([5], 99) == 5
