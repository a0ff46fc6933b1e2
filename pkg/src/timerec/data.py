"""Click-log preprocessing: sessions, filters, splits, and prefix samples.

The pipeline is parse -> filter -> chronological split -> vocabulary ->
prefix expansion.  Its output contract is the canonical event file: one
``session_id<TAB>item_index<TAB>epoch_seconds`` line per event, sorted by
(session_id, epoch_seconds).  Everything downstream (pretraining, model
training, evaluation) consumes only that format.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

SECONDS_PER_DAY = 86400


class EmptyCorpusError(ValueError):
    """Raised when a filter or split leaves no usable sessions."""


@dataclass(frozen=True)
class Event:
    item_id: int | str
    timestamp: int  # epoch seconds, UTC


@dataclass
class Session:
    session_id: str
    events: list[Event]

    @property
    def start_time(self) -> int:
        return self.events[0].timestamp

    def item_ids(self) -> list:
        return [e.item_id for e in self.events]


@dataclass
class SequenceSample:
    """One training instance: a session prefix and the item that followed.

    Interval lists run parallel to the prefix; ``None`` marks the positions
    where no interval exists (before the first event, after the last).
    """
    prefix: list[int]
    before_intervals: list[int | None]
    after_intervals: list[int | None]
    target: int

    def __post_init__(self):
        m = len(self.prefix)
        assert len(self.before_intervals) == m and len(self.after_intervals) == m


@dataclass
class CorpusStats:
    n_clicks: int
    n_sequences: int
    n_items: int
    avg_session_length: float  # clicks per session
    n_sessions: int
    avg_samples_per_session: float

    @classmethod
    def from_sessions(cls, sessions: list[Session]) -> "CorpusStats":
        n_sessions = len(sessions)
        n_clicks = sum(len(s.events) for s in sessions)
        n_sequences = n_clicks - n_sessions
        items = set()
        for s in sessions:
            items.update(e.item_id for e in s.events)
        return cls(
            n_clicks=n_clicks,
            n_sequences=n_sequences,
            n_items=len(items),
            avg_session_length=n_clicks / n_sessions if n_sessions else 0.0,
            n_sessions=n_sessions,
            avg_samples_per_session=n_sequences / n_sessions if n_sessions else 0.0,
        )

    def as_dict(self) -> dict:
        return {
            "n_clicks": self.n_clicks,
            "n_sequences": self.n_sequences,
            "n_items": self.n_items,
            "avg_session_length": self.avg_session_length,
            "n_sessions": self.n_sessions,
            "avg_samples_per_session": self.avg_samples_per_session,
        }


@dataclass
class RejectLog:
    """Audit trail for raw rows dropped during parsing."""
    entries: list[tuple[str, str]] = field(default_factory=list)

    def add(self, reason: str, raw: str) -> None:
        self.entries.append((reason, raw))

    def __len__(self) -> int:
        return len(self.entries)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for reason, raw in self.entries:
                fh.write(f"{reason}\t{raw}\n")


class Vocabulary:
    """Raw item id -> dense index map, built from train data only."""

    def __init__(self, raw_ids: list[str]):
        self._index = {raw: i for i, raw in enumerate(raw_ids)}
        self._raw = list(raw_ids)

    @classmethod
    def build(cls, sessions: list[Session]) -> "Vocabulary":
        raw = sorted({str(e.item_id) for s in sessions for e in s.events})
        return cls(raw)

    def __len__(self) -> int:
        return len(self._raw)

    def __contains__(self, raw_id) -> bool:
        return str(raw_id) in self._index

    def index(self, raw_id) -> int:
        return self._index[str(raw_id)]

    def raw(self, index: int) -> str:
        return self._raw[index]

    def as_dict(self) -> dict[str, int]:
        return dict(self._index)

    @classmethod
    def from_dict(cls, mapping: dict[str, int]) -> "Vocabulary":
        raw = [None] * len(mapping)
        for k, v in mapping.items():
            raw[v] = k
        return cls(raw)


# ---------------------------------------------------------------------------
# parsing and filtering


def parse_events(raw_rows, reject_log: RejectLog | None = None) -> list[Session]:
    """Group (session_id, item_id, timestamp) rows into time-sorted sessions.

    Rows may arrive unsorted.  Malformed rows go to the reject log with a
    reason code instead of being dropped silently.  Item ids are kept raw
    (strings); re-indexing happens against a train Vocabulary later.
    """
    groups: dict[str, list[Event]] = {}
    order: list[str] = []
    for row in raw_rows:
        try:
            sid, item, ts = row
        except (TypeError, ValueError):
            if reject_log is not None:
                reject_log.add("bad_row", repr(row))
            continue
        if item is None or str(item) == "":
            if reject_log is not None:
                reject_log.add("missing_item", repr(row))
            continue
        try:
            ts = int(ts)
        except (TypeError, ValueError):
            if reject_log is not None:
                reject_log.add("bad_timestamp", repr(row))
            continue
        if ts < 0:
            if reject_log is not None:
                reject_log.add("negative_timestamp", repr(row))
            continue
        sid = str(sid)
        if sid not in groups:
            groups[sid] = []
            order.append(sid)
        groups[sid].append(Event(str(item), ts))
    sessions = []
    for sid in order:
        events = sorted(groups[sid], key=lambda e: e.timestamp)
        sessions.append(Session(sid, events))
    return sessions


def filter_corpus(sessions: list[Session], min_item_support: int = 5,
                  min_session_len: int = 2) -> list[Session]:
    """Drop rare items and short sessions, iterated to a fixed point.

    Removing a rare item can shorten a session below the length floor, and
    dropping that session lowers other items' support, so both rules are
    re-applied until nothing changes.
    """
    current = [Session(s.session_id, list(s.events)) for s in sessions]
    while True:
        current = [s for s in current if len(s.events) >= min_session_len]
        support: dict = {}
        for s in current:
            for e in s.events:
                support[e.item_id] = support.get(e.item_id, 0) + 1
        rare = {i for i, c in support.items() if c < min_item_support}
        if not rare:
            break
        changed = False
        kept = []
        for s in current:
            events = [e for e in s.events if e.item_id not in rare]
            if len(events) != len(s.events):
                changed = True
            if events:
                kept.append(Session(s.session_id, events))
            else:
                changed = True
        current = kept
        if not changed:
            break
    current = [s for s in current if len(s.events) >= min_session_len]
    if not current:
        raise EmptyCorpusError("filtering removed every session")
    return current


def split_chronological(sessions: list[Session], test_boundary_seconds: int):
    """Split sessions into (train, test) by UTC calendar day of session start.

    Sessions starting within the final `test_boundary_seconds // 86400` UTC
    days of the corpus form the test set.  Test items unseen in train are
    removed, and test sessions dropping below two events are discarded.
    """
    if not sessions:
        raise EmptyCorpusError("no sessions to split")
    days = test_boundary_seconds // SECONDS_PER_DAY
    if days < 1:
        raise ValueError(f"test boundary must cover at least one day, got {test_boundary_seconds}s")
    last_start = max(s.start_time for s in sessions)
    cutoff = (last_start // SECONDS_PER_DAY - days + 1) * SECONDS_PER_DAY
    train = [s for s in sessions if s.start_time < cutoff]
    test = [s for s in sessions if s.start_time >= cutoff]
    if not train:
        raise EmptyCorpusError(
            f"test boundary of {days} day(s) covers the whole corpus; train would be empty")
    train_items = {e.item_id for s in train for e in s.events}
    test = restrict_to_items(test, train_items)
    return train, test


def restrict_to_items(sessions: list[Session], allowed: set) -> list[Session]:
    """Remove events whose item is not in `allowed`; drop sessions under 2 events."""
    kept = []
    for s in sessions:
        events = [e for e in s.events if e.item_id in allowed]
        if len(events) >= 2:
            kept.append(Session(s.session_id, events))
    return kept


def split_validation(train: list[Session], fraction: float = 0.10):
    """Hold out the last `fraction` of train sessions by start time."""
    if not train:
        raise EmptyCorpusError("cannot split an empty train set")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"validation fraction must be in (0, 1), got {fraction}")
    ordered = sorted(train, key=lambda s: (s.start_time, s.session_id))
    n_val = int(round(len(ordered) * fraction))
    n_val = min(max(n_val, 1), len(ordered) - 1)
    cut = len(ordered) - n_val
    return ordered[:cut], ordered[cut:]


def take_last_fraction(train: list[Session], denominator: int) -> list[Session]:
    """Keep the most recent 1/denominator of train sessions (chronological)."""
    if denominator <= 1:
        return list(train)
    ordered = sorted(train, key=lambda s: (s.start_time, s.session_id))
    n_keep = max(1, len(ordered) // denominator)
    return ordered[-n_keep:]


def reindex_sessions(sessions: list[Session], vocab: Vocabulary) -> list[Session]:
    """Map raw item ids through the vocabulary; callers must pre-filter unknowns."""
    out = []
    for s in sessions:
        events = [Event(vocab.index(e.item_id), e.timestamp) for e in s.events]
        out.append(Session(s.session_id, events))
    return out


# ---------------------------------------------------------------------------
# prefix expansion


def expand_sequences(session: Session) -> list[SequenceSample]:
    """Emit one sample per non-initial click: prefix of length k, target k+1.

    A session of length m yields m-1 samples.  Interval lists are computed
    inside the prefix only; the gap to the target is never observed.
    """
    events = session.events
    m = len(events)
    if m < 2:
        raise ValueError(f"session {session.session_id!r} too short to expand: {m}")
    deltas = [events[j + 1].timestamp - events[j].timestamp for j in range(m - 1)]
    samples = []
    for k in range(1, m):
        prefix = [events[j].item_id for j in range(k)]
        before = [None] + deltas[:k - 1]
        after = deltas[:k - 1] + [None]
        samples.append(SequenceSample(prefix, before, after, events[k].item_id))
    return samples


def expand_corpus(sessions: list[Session]) -> list[SequenceSample]:
    out = []
    for s in sessions:
        out.extend(expand_sequences(s))
    return out


# ---------------------------------------------------------------------------
# canonical event file

def write_canonical(sessions: list[Session], path: str | Path) -> None:
    rows = []
    for s in sessions:
        for e in s.events:
            rows.append((str(s.session_id), int(e.item_id), int(e.timestamp)))
    rows.sort(key=lambda r: (r[0], r[2]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, item, ts in rows:
            fh.write(f"{sid}\t{item}\t{ts}\n")


def read_canonical(path: str | Path) -> list[Session]:
    groups: dict[str, list[Event]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            sid, item, ts = line.split("\t")
            if sid not in groups:
                groups[sid] = []
                order.append(sid)
            groups[sid].append(Event(int(item), int(ts)))
    return [Session(sid, sorted(groups[sid], key=lambda e: e.timestamp)) for sid in order]


# ---------------------------------------------------------------------------
# dataset adapters


def _parse_iso8601(text: str) -> int:
    # truncates sub-second precision; naive stamps are taken as UTC
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def yoochoose_rows(path: str | Path, reject_log: RejectLog | None = None):
    """Yield (session_id, item_id, epoch_seconds) from a click-event CSV.

    Expected columns: session_id, iso8601 timestamp, item_id, category.
    The category column is ignored; purchase-event files are simply not read.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if len(row) < 3:
                if reject_log is not None:
                    reject_log.add("short_row", ",".join(row))
                continue
            sid, ts_text, item = row[0], row[1], row[2]
            try:
                ts = _parse_iso8601(ts_text)
            except ValueError:
                if reject_log is not None:
                    reject_log.add("bad_timestamp", ",".join(row))
                continue
            yield sid, item, ts


def diginetica_rows(path: str | Path, reject_log: RejectLog | None = None):
    """Yield (session_id, item_id, epoch_seconds) from a semicolon-separated log.

    Expected columns: sessionId;userId;itemId;timeframe;eventdate.  userId is
    ignored.  Events order within a session by timeframe (milliseconds), and
    the session date comes from eventdate, so the synthesized timestamp is
    eventdate midnight UTC plus whole seconds of timeframe.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        header = next(reader, None)
        if header is not None and header and header[0] != "sessionId":
            # no header row in this file; treat the first row as data
            rows = [header]
        else:
            rows = []
        for row in rows + list(reader):
            if len(row) < 5:
                if reject_log is not None:
                    reject_log.add("short_row", ";".join(row))
                continue
            sid, _user, item, timeframe, eventdate = row[0], row[1], row[2], row[3], row[4]
            try:
                frame_ms = int(timeframe)
                day = datetime.strptime(eventdate.strip(), "%Y-%m-%d").replace(tzinfo=timezone.utc)
            except ValueError:
                if reject_log is not None:
                    reject_log.add("bad_timestamp", ";".join(row))
                continue
            ts = int(day.timestamp()) + frame_ms // 1000
            yield sid, item, ts
