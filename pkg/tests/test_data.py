import hashlib

import numpy as np
import pytest

from timerec import data as dp


def sess(sid, items_and_ts):
    return dp.Session(str(sid), [dp.Event(i, t) for i, t in items_and_ts])


# ---------------------------------------------------------------------------
# parse_events


def test_parse_empty():
    assert dp.parse_events([]) == []


def test_parse_sorts_out_of_order_rows():
    rows = [("s1", "a", 30), ("s1", "b", 10), ("s1", "c", 20)]
    sessions = dp.parse_events(rows)
    assert len(sessions) == 1
    assert [e.item_id for e in sessions[0].events] == ["b", "c", "a"]
    assert [e.timestamp for e in sessions[0].events] == [10, 20, 30]


def test_parse_matches_group_and_sort_oracle():
    rows = [("s2", "x", 5), ("s1", "a", 9), ("s3", "q", 1), ("s1", "b", 2),
            ("s2", "y", 4), ("s1", "a", 7), ("s3", "r", 3)]
    # brute-force oracle: dict group, then sort each group by timestamp
    expected = {}
    for sid, item, ts in rows:
        expected.setdefault(sid, []).append((ts, item))
    for sid in expected:
        expected[sid].sort()
    sessions = dp.parse_events(rows)
    assert len(sessions) == 3
    for s in sessions:
        assert [(e.timestamp, e.item_id) for e in s.events] == expected[s.session_id]


def test_parse_rejects_malformed_rows_with_reasons():
    log = dp.RejectLog()
    rows = [("s1", "a", 1), ("s1", "", 2), ("s1", "b", "zzz"), ("s1", "c", -5),
            ("s1",), ("s1", "d", 3)]
    sessions = dp.parse_events(rows, log)
    assert [e.item_id for e in sessions[0].events] == ["a", "d"]
    reasons = [r for r, _ in log.entries]
    assert reasons == ["missing_item", "bad_timestamp", "negative_timestamp", "bad_row"]


# ---------------------------------------------------------------------------
# filter_corpus


def test_filter_drops_short_sessions():
    sessions = [sess("s1", [("a", 1)]),
                sess("s2", [("a", 1), ("b", 2)]) ]
    # make supports pass: a appears 3 times, b 5 times elsewhere
    extra = [sess(f"e{i}", [("a", 1), ("b", 2)]) for i in range(4)]
    out = dp.filter_corpus(sessions + extra, min_item_support=5)
    assert all(len(s.events) >= 2 for s in out)
    assert "s1" not in {s.session_id for s in out}


def test_filter_cascades_to_fixed_point():
    # item "r" appears 4 times; removing it shortens s5 below 2 events
    sessions = [sess("s1", [("a", 1), ("b", 2)]),
                sess("s2", [("a", 1), ("b", 2)]),
                sess("s3", [("a", 1), ("b", 2)]),
                sess("s4", [("a", 1), ("b", 2), ("r", 3)]),
                sess("s5", [("r", 1), ("r", 2), ("r", 3), ("b", 9)])]
    # support: a=4 -> rare! so also exercise double cascade: bump a
    sessions.append(sess("s6", [("a", 1), ("b", 2)]))
    out = dp.filter_corpus(sessions, min_item_support=5)
    items = {e.item_id for s in out for e in s.events}
    assert "r" not in items
    ids = {s.session_id for s in out}
    assert "s5" not in ids  # shrunk to a single event after "r" was removed
    assert {"s1", "s2", "s3", "s4", "s6"} <= ids


def _filter_oracle(sessions, min_support, min_len):
    """Independent fixed-point filter: repeated full scans until stable."""
    cur = [(s.session_id, [(e.item_id, e.timestamp) for e in s.events]) for s in sessions]
    while True:
        cur = [(sid, ev) for sid, ev in cur if len(ev) >= min_len]
        support = {}
        for _, ev in cur:
            for item, _ in ev:
                support[item] = support.get(item, 0) + 1
        rare = {i for i, c in support.items() if c < min_support}
        if not rare:
            return cur
        cur = [(sid, [(i, t) for i, t in ev if i not in rare]) for sid, ev in cur]
        cur = [(sid, ev) for sid, ev in cur if ev]


def test_filter_matches_fixed_point_oracle_on_synthetic_corpus():
    rng = np.random.default_rng(10)
    for trial in range(30):
        sessions = []
        for s in range(10):
            n = int(rng.integers(1, 8))
            items = [f"i{int(rng.integers(0, 6))}" for _ in range(n)]
            sessions.append(sess(f"s{s}", [(it, 10 * k) for k, it in enumerate(items)]))
        expected = _filter_oracle(sessions, 5, 2)
        if not expected:
            with pytest.raises(dp.EmptyCorpusError):
                dp.filter_corpus(sessions)
            continue
        got = dp.filter_corpus(sessions)
        assert [(s.session_id, [(e.item_id, e.timestamp) for e in s.events]) for s in got] \
            == expected


def test_filter_output_respects_both_rules():
    rng = np.random.default_rng(11)
    sessions = []
    for s in range(60):
        n = int(rng.integers(2, 9))
        sessions.append(sess(f"s{s}", [(f"i{int(rng.integers(0, 20))}", 5 * k)
                                       for k in range(n)]))
    out = dp.filter_corpus(sessions)
    support = {}
    for s in out:
        assert len(s.events) >= 2
        for e in s.events:
            support[e.item_id] = support.get(e.item_id, 0) + 1
    assert all(c >= 5 for c in support.values())


def test_filter_empty_corpus_error():
    with pytest.raises(dp.EmptyCorpusError):
        dp.filter_corpus([sess("s1", [("a", 1), ("b", 2)])], min_item_support=5)


# ---------------------------------------------------------------------------
# split_chronological


def _day_sessions(day_starts, seed=0):
    rng = np.random.default_rng(seed)
    sessions = []
    for idx, day in enumerate(day_starts):
        t0 = day * dp.SECONDS_PER_DAY + int(rng.integers(0, 50000))
        sessions.append(sess(f"s{idx}", [(f"i{idx % 4}", t0), (f"i{(idx + 1) % 4}", t0 + 60)]))
    return sessions


def test_split_all_on_one_day_errors():
    sessions = _day_sessions([100, 100, 100])
    with pytest.raises(dp.EmptyCorpusError):
        dp.split_chronological(sessions, dp.SECONDS_PER_DAY)


def test_split_matches_date_partition_oracle():
    rng = np.random.default_rng(12)
    for trial in range(20):
        days = list(rng.integers(200, 210, size=30))
        sessions = _day_sessions(days, seed=trial)
        train, test = dp.split_chronological(sessions, dp.SECONDS_PER_DAY)
        last_day = max(days)
        expect_test = {s.session_id for s in sessions
                       if s.start_time // dp.SECONDS_PER_DAY == last_day}
        assert {s.session_id for s in test} <= expect_test
        assert {s.session_id for s in train} == {s.session_id for s in sessions} - expect_test


def test_split_week_boundary():
    days = [50, 51, 52, 53, 54, 55, 56, 57, 58, 59]
    sessions = _day_sessions(days)
    train, test = dp.split_chronological(sessions, 7 * dp.SECONDS_PER_DAY)
    test_days = {s.start_time // dp.SECONDS_PER_DAY for s in test}
    train_days = {s.start_time // dp.SECONDS_PER_DAY for s in train}
    assert test_days <= {53, 54, 55, 56, 57, 58, 59}
    assert train_days == {50, 51, 52}


def test_split_excludes_test_only_items():
    sessions = [sess("tr1", [("a", 0), ("b", 10)]),
                sess("tr2", [("a", 20), ("b", 30)]),
                sess("te1", [("a", 5 * dp.SECONDS_PER_DAY), ("z", 5 * dp.SECONDS_PER_DAY + 9),
                             ("b", 5 * dp.SECONDS_PER_DAY + 20)]),
                sess("te2", [("z", 5 * dp.SECONDS_PER_DAY + 40),
                             ("q", 5 * dp.SECONDS_PER_DAY + 50)])]
    train, test = dp.split_chronological(sessions, dp.SECONDS_PER_DAY)
    train_items = {e.item_id for s in train for e in s.events}
    assert all(e.item_id in train_items for s in test for e in s.events)
    ids = {s.session_id for s in test}
    assert ids == {"te1"}  # te2 shrinks below two events and is dropped


# ---------------------------------------------------------------------------
# split_validation


def test_validation_last_session_of_ten():
    sessions = [sess(f"s{i}", [("a", 100 * i), ("b", 100 * i + 5)]) for i in range(10)]
    fit, valid = dp.split_validation(sessions, 0.10)
    assert len(valid) == 1
    assert valid[0].session_id == "s9"
    assert len(fit) == 9


def test_validation_matches_sort_and_slice_oracle():
    rng = np.random.default_rng(13)
    starts = rng.integers(0, 10_000_000, size=1000)
    sessions = [sess(f"s{i:04d}", [("a", int(t)), ("b", int(t) + 3)])
                for i, t in enumerate(starts)]
    fit, valid = dp.split_validation(sessions, 0.10)
    ordered = sorted(sessions, key=lambda s: (s.start_time, s.session_id))
    assert [s.session_id for s in valid] == [s.session_id for s in ordered[-100:]]
    assert len(fit) == 900


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
def test_validation_fraction_bounds(fraction):
    sessions = [sess("s1", [("a", 0), ("b", 5)])]
    with pytest.raises(ValueError):
        dp.split_validation(sessions, fraction)


# ---------------------------------------------------------------------------
# expand_sequences


def test_expand_two_event_session():
    s = sess("s", [(3, 100), (7, 160)])
    samples = dp.expand_sequences(s)
    assert len(samples) == 1
    smp = samples[0]
    assert smp.prefix == [3] and smp.target == 7
    assert smp.before_intervals == [None]
    assert smp.after_intervals == [None]


def test_expand_three_event_session_hand_enumerated():
    s = sess("s", [("a", 100), ("b", 160), ("c", 400)])
    samples = dp.expand_sequences(s)
    assert len(samples) == 2
    first, second = samples
    assert first.prefix == ["a"] and first.target == "b"
    assert first.before_intervals == [None] and first.after_intervals == [None]
    assert second.prefix == ["a", "b"] and second.target == "c"
    assert second.before_intervals == [None, 60]
    assert second.after_intervals == [60, None]


def test_expand_counts_and_interval_recomputation():
    rng = np.random.default_rng(14)
    sessions = []
    for i in range(50):
        n = int(rng.integers(2, 10))
        ts = np.cumsum(rng.integers(0, 500, size=n)).tolist()
        sessions.append(sess(f"s{i}", [(int(rng.integers(0, 30)), int(t)) for t in ts]))
    samples = dp.expand_corpus(sessions)
    assert len(samples) == sum(len(s.events) - 1 for s in sessions)
    for s in sessions:
        ts = [e.timestamp for e in s.events]
        for k, smp in enumerate(dp.expand_sequences(s), start=1):
            assert len(smp.prefix) == k
            for j in range(k):
                expect_before = None if j == 0 else ts[j] - ts[j - 1]
                expect_after = None if j == k - 1 else ts[j + 1] - ts[j]
                assert smp.before_intervals[j] == expect_before
                assert smp.after_intervals[j] == expect_after
                if smp.before_intervals[j] is not None:
                    assert smp.before_intervals[j] >= 0


def test_expand_rejects_short_session():
    with pytest.raises(ValueError):
        dp.expand_sequences(sess("s", [("a", 1)]))


# ---------------------------------------------------------------------------
# corpus stats, vocabulary, canonical file


def test_corpus_stats_identity():
    sessions = [sess("s1", [(0, 0), (1, 5), (0, 9)]), sess("s2", [(2, 0), (1, 4)])]
    st = dp.CorpusStats.from_sessions(sessions)
    assert st.n_clicks == 5
    assert st.n_sessions == 2
    assert st.n_sequences == st.n_clicks - st.n_sessions == 3
    assert st.n_items == 3
    assert st.avg_session_length == 2.5
    assert st.avg_samples_per_session == 1.5


def test_vocabulary_roundtrip_and_reindex():
    sessions = [sess("s1", [("b", 0), ("a", 5)]), sess("s2", [("c", 0), ("a", 3)])]
    vocab = dp.Vocabulary.build(sessions)
    assert len(vocab) == 3
    assert vocab.index("a") == 0  # sorted raw ids
    assert dp.Vocabulary.from_dict(vocab.as_dict()).as_dict() == vocab.as_dict()
    indexed = dp.reindex_sessions(sessions, vocab)
    assert [e.item_id for e in indexed[0].events] == [vocab.index("b"), vocab.index("a")]


def test_canonical_roundtrip_and_determinism(tmp_path):
    sessions = [sess("s2", [(1, 50), (0, 80)]), sess("s1", [(2, 10), (1, 20), (0, 35)])]
    p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
    dp.write_canonical(sessions, p1)
    dp.write_canonical(list(reversed(sessions)), p2)
    assert p1.read_bytes() == p2.read_bytes()  # sorted by (session, time)
    loaded = dp.read_canonical(p1)
    assert {s.session_id for s in loaded} == {"s1", "s2"}
    by_id = {s.session_id: s for s in loaded}
    assert [e.item_id for e in by_id["s1"].events] == [2, 1, 0]


def test_pipeline_determinism_hash():
    rng = np.random.default_rng(15)
    rows = []
    for s in range(40):
        day = int(rng.integers(0, 6))
        t = day * dp.SECONDS_PER_DAY + int(rng.integers(0, 1000))
        for k in range(int(rng.integers(2, 6))):
            rows.append((f"s{s}", f"i{int(rng.integers(0, 8))}", t + 30 * k))

    def run():
        sessions = dp.parse_events(rows)
        sessions = dp.filter_corpus(sessions, min_item_support=2)
        train, test = dp.split_chronological(sessions, dp.SECONDS_PER_DAY)
        blob = repr([(s.session_id, [(e.item_id, e.timestamp) for e in s.events])
                     for s in train + test]).encode()
        return hashlib.sha256(blob).hexdigest()

    assert run() == run()


# ---------------------------------------------------------------------------
# adapters


def test_yoochoose_adapter(tmp_path):
    path = tmp_path / "clicks.dat"
    path.write_text(
        "1,2014-04-07T10:51:09.277Z,214536502,0\n"
        "1,2014-04-07T10:54:09.868Z,214536500,0\n"
        "2,2014-04-07T13:56:37.614Z,214662742,0\n"
        "bad row\n",
        encoding="utf-8")
    log = dp.RejectLog()
    rows = list(dp.yoochoose_rows(path, log))
    assert len(rows) == 3
    assert rows[0][0] == "1" and rows[0][1] == "214536502"
    # 2014-04-07T10:51:09Z == 1396867869, sub-second truncated
    assert rows[0][2] == 1396867869
    assert rows[1][2] - rows[0][2] == 180
    assert len(log) == 1 and log.entries[0][0] == "short_row"


def test_diginetica_adapter(tmp_path):
    path = tmp_path / "views.csv"
    path.write_text(
        "sessionId;userId;itemId;timeframe;eventdate\n"
        "1;NA;81766;526309;2016-05-09\n"
        "1;NA;31331;1031018;2016-05-09\n"
        "2;NA;32118;243569;2016-05-31\n",
        encoding="utf-8")
    rows = list(dp.diginetica_rows(path))
    assert len(rows) == 3
    day_epoch = 1462752000  # 2016-05-09 UTC midnight
    assert rows[0] == ("1", "81766", day_epoch + 526)
    assert rows[1] == ("1", "31331", day_epoch + 1031)
    # ordering within the session follows timeframe
    assert rows[1][2] > rows[0][2]
