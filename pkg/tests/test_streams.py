import numpy as np
import pytest

from sgn_lab.errors import ConfigurationError
from sgn_lab.streams import Event, EventKind, RenewalClock, EventQueue, schedule_init, write_trace


def pop_until(q, t_end):
    out = []
    while len(q) and q.peek().time <= t_end:
        out.append(q.pop())
    return out


def test_beta_zero_has_no_sync():
    q = schedule_init([1.0, 2.0], 0.0, np.random.default_rng(0))
    assert all(e.kind == EventKind.GRADIENT for e in pop_until(q, 50))


def test_fixed_interval_schedule():
    q = schedule_init([2.0, 1.0], 0.0, np.random.default_rng(0), "fixed")
    evs = pop_until(q, 1.0)
    assert [(e.time, e.node) for e in evs] == [(0.5, 0), (1.0, 0), (1.0, 1)]


def test_exponential_rate():
    c = RenewalClock(2.0, np.random.default_rng(3))
    n = c.arrivals_until(1e4).size
    assert abs(n / 1e4 - 2) <= 3 * np.sqrt(2 / 1e4) * 2


def test_uniform_clock_mean():
    c = RenewalClock(4.0, np.random.default_rng(3), "uniform", 1.0, 3.0)
    assert c.intervals(100_000).mean() == pytest.approx(0.25, rel=0.01)


def test_sync_before_gradient_on_tie():
    q = EventQueue([RenewalClock(1.0, np.random.default_rng(0), "fixed")],
                   RenewalClock(1.0, np.random.default_rng(1), "fixed"))
    first, second = q.pop(), q.pop()
    assert first.time == second.time == 1.0
    assert first.kind == EventKind.SYNC and second.kind == EventKind.GRADIENT


def test_gap_mean():
    q = EventQueue([RenewalClock(5.0, np.random.default_rng(8))], None)
    t = np.array([q.pop().time for _ in range(20000)])
    gaps = np.diff(np.concatenate([[0], t]))
    assert abs(gaps.mean() - 0.2) < 4 * 0.2 / np.sqrt(gaps.size)


def test_empty_queue_errors():
    q = EventQueue([], None)
    with pytest.raises(IndexError):
        q.pop()
    with pytest.raises(IndexError):
        q.peek()


def test_drain_equals_pop():
    a = schedule_init([1.0, 3.0, 0.5], 2.0, np.random.default_rng(11))
    b = schedule_init([1.0, 3.0, 0.5], 2.0, np.random.default_rng(11))
    popped = pop_until(a, 30.0) + pop_until(a, 70.0)
    t1, k1, n1 = b.drain(30.0)
    t2, k2, n2 = b.drain(70.0)
    times = np.concatenate([t1, t2])
    np.testing.assert_array_equal(times, [e.time for e in popped])
    np.testing.assert_array_equal(np.concatenate([k1, k2]), [int(e.kind) for e in popped])
    np.testing.assert_array_equal(np.concatenate([n1, n2]), [e.node for e in popped])
    assert a.peek() == b.peek()


def test_invalid_inputs(tmp_path):
    with pytest.raises(ConfigurationError):
        schedule_init([0.0], 1.0, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        schedule_init([1.0], -1.0, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        RenewalClock(1.0, np.random.default_rng(0), "weibull")
    write_trace(tmp_path / "t.csv", [0.5], [1], [0])
    assert (tmp_path / "t.csv").read_text().splitlines()[1] == "0.5,gradient,0"


def test_event_ordering():
    assert Event(1.0, EventKind.SYNC) < Event(1.0, EventKind.GRADIENT, 0)
