import numpy as np
import pytest

from voxelvio import events as ev


def _batch(rows):
    arr = np.array(rows, dtype=float)
    return ev.EventBatch(arr[:, 0], arr[:, 1].astype(np.int64),
                         arr[:, 2].astype(np.int64), arr[:, 3].astype(np.int64))


def test_single_event_ingest():
    m = ev.LastEventMap(8, 8)
    ev.ingest_events(m, _batch([[1.0, 3, 4, 1]]))
    assert m.t_last[4, 3] == 1.0
    mask = np.ones((8, 8), dtype=bool)
    mask[4, 3] = False
    assert np.all(np.isneginf(m.t_last[mask]))


def test_overwrite_by_max():
    m = ev.LastEventMap(8, 8)
    ev.ingest_events(m, _batch([[1.0, 3, 4, 1]]))
    ev.ingest_events(m, _batch([[2.0, 3, 4, -1]]))
    assert m.t_last[4, 3] == 2.0


def test_reingest_idempotent():
    m = ev.LastEventMap(8, 8)
    b = _batch([[1.0, 3, 4, 1], [1.5, 2, 2, -1]])
    ev.ingest_events(m, b)
    before = m.t_last.copy()
    ev.ingest_events(m, b)
    assert np.array_equal(before, m.t_last)


def test_random_ingest_matches_bruteforce():
    rng = np.random.default_rng(0)
    w, h, n = 32, 24, 10_000
    t = np.sort(rng.uniform(0, 5, n))
    u = rng.integers(0, w, n)
    v = rng.integers(0, h, n)
    p = rng.choice([-1, 1], n)
    m = ev.LastEventMap(w, h)
    ev.ingest_events(m, ev.EventBatch(t, u, v, p))
    brute = np.full((h, w), ev.SENTINEL)
    for i in range(n):
        brute[v[i], u[i]] = max(brute[v[i], u[i]], t[i])
    assert np.array_equal(m.t_last, brute)


def test_rejects_out_of_bounds_with_position():
    m = ev.LastEventMap(8, 8)
    with pytest.raises(ValueError, match="event 1"):
        ev.ingest_events(m, _batch([[1.0, 3, 4, 1], [2.0, 9, 4, 1]]))
    # rejected batches must not mutate
    assert np.all(np.isneginf(m.t_last))


def test_rejects_decreasing_timestamps():
    m = ev.LastEventMap(8, 8)
    with pytest.raises(ValueError, match="decreasing"):
        ev.ingest_events(m, _batch([[2.0, 3, 4, 1], [1.0, 3, 4, 1]]))


def test_render_exact_decay_values():
    m = ev.LastEventMap(4, 4)
    eta = 0.03
    ev.ingest_events(m, _batch([[1.0, 0, 0, 1], [1.0, 1, 0, 1], [1.0, 2, 0, 1]]))
    ts = ev.render_time_surface(m, 1.0, eta)
    assert ts.values[0, 0] == pytest.approx(1.0, abs=1e-12)
    ts = ev.render_time_surface(m, 1.0 + eta, eta)
    assert ts.values[0, 1] == pytest.approx(np.exp(-1.0), abs=1e-12)
    ts = ev.render_time_surface(m, 1.0 + 3 * eta, eta)
    assert ts.values[0, 2] == pytest.approx(np.exp(-3.0), abs=1e-12)
    assert ts.values[3, 3] == 0.0


def test_render_errors():
    m = ev.LastEventMap(4, 4)
    with pytest.raises(ValueError, match="positive"):
        ev.render_time_surface(m, 1.0, 0.0)
    ev.ingest_events(m, _batch([[2.0, 1, 1, 1]]))
    with pytest.raises(ValueError, match="precedes"):
        ev.render_time_surface(m, 1.0, 0.03)


def test_render_monotone_and_bounded():
    rng = np.random.default_rng(5)
    m = ev.LastEventMap(16, 16)
    n = 500
    t = np.sort(rng.uniform(0, 2, n))
    ev.ingest_events(m, ev.EventBatch(t, rng.integers(0, 16, n),
                                      rng.integers(0, 16, n), rng.choice([-1, 1], n)))
    prev = None
    for q in [2.0, 2.1, 2.5, 3.0]:
        ts = ev.render_time_surface(m, q, 0.05)
        assert ts.values.min() >= 0.0 and ts.values.max() <= 1.0
        if prev is not None:
            assert np.all(ts.values <= prev + 1e-15)
        prev = ts.values


def test_eta_scale_relation():
    m = ev.LastEventMap(8, 8)
    ev.ingest_events(m, _batch([[0.0, 2, 2, 1]]))
    a = ev.render_time_surface(m, 0.05, 0.03).values[2, 2]
    b = ev.render_time_surface(m, 0.05, 0.06).values[2, 2]
    assert b == pytest.approx(np.sqrt(a), rel=1e-12)


def test_stereo_frame_componentwise_and_errors():
    rng = np.random.default_rng(11)
    lm, rm = ev.LastEventMap(16, 12), ev.LastEventMap(16, 12)
    n = 200
    for m in (lm, rm):
        t = np.sort(rng.uniform(0, 1, n))
        ev.ingest_events(m, ev.EventBatch(t, rng.integers(0, 16, n),
                                          rng.integers(0, 12, n), rng.choice([-1, 1], n)))
    fr = ev.make_stereo_frame(lm, rm, 1.0, 0.03, 7)
    assert np.array_equal(fr.left.values, ev.render_time_surface(lm, 1.0, 0.03).values)
    assert np.array_equal(fr.right.values, ev.render_time_surface(rm, 1.0, 0.03).values)
    assert fr.frame_id == 7 and fr.left.t == fr.right.t == 1.0
    with pytest.raises(ValueError, match="resolution"):
        ev.make_stereo_frame(lm, ev.LastEventMap(8, 8), 1.0, 0.03, 0)


def test_empty_maps_render_zero():
    fr = ev.make_stereo_frame(ev.LastEventMap(8, 8), ev.LastEventMap(8, 8),
                              1.0, 0.03, 0)
    assert not fr.left.values.any() and not fr.right.values.any()


def test_event_file_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    n = 1000
    b = ev.EventBatch(np.sort(rng.uniform(0, 1, n)), rng.integers(0, 64, n),
                      rng.integers(0, 48, n), rng.choice([-1, 1], n))
    txt = tmp_path / "events.txt"
    ev.save_events_text(txt, b)
    b2 = ev.load_events(txt)
    assert np.allclose(b2.t, b.t, atol=1e-9)
    assert np.array_equal(b2.u, b.u) and np.array_equal(b2.v, b.v)
    assert np.array_equal(b2.p, b.p)

    binp = tmp_path / "events.evt"
    ev.save_events_binary(binp, b)
    with open(binp, "rb") as f:
        assert f.read(4) == b"EVT1"
    b3 = ev.load_events(binp)
    assert np.array_equal(b3.t, b.t)
    assert np.array_equal(b3.u, b.u) and np.array_equal(b3.v, b.v)
    assert np.array_equal(b3.p, b.p)
