"""Raw event-log ingestion: CSV rows to per-session token corpora.

Raw activity labels are aggregated into the 15-event taxonomy, durations are
filtered and discretized into time bins, and mouse-plus-keyboard counts are
discretized into interaction levels. Everything here is deterministic and
pure over its inputs; re-running on the same files is byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .core import Corpus, Schema, Token, Trace

OTHER_EVENT_INDEX = 14

_TIMESTAMP_FORMATS = (
    "%d.%m.%Y %H:%M:%S",
    "%d/%m/%Y %H:%M:%S",
    "%Y-%m-%d %H:%M:%S.%f",
    "%Y-%m-%d %H:%M:%S",
)


@dataclass(frozen=True, slots=True)
class RawEvent:
    """One parsed log row; timestamps are epoch seconds."""

    session: str
    student_id: str
    activity: str
    start_time: float
    end_time: float
    mouse_clicks: int
    keystrokes: int

    @property
    def duration_s(self) -> float:
        return self.end_time - self.start_time

    @property
    def interaction_total(self) -> int:
        return self.mouse_clicks + self.keystrokes


@dataclass(frozen=True, slots=True)
class RejectedRow:
    row_number: int  # 1-based data-row number, header excluded
    reason: str


@dataclass(frozen=True, slots=True)
class MappingRule:
    kind: str  # "exact" or "prefix"
    pattern: str
    event_index: int


@dataclass(frozen=True)
class ActivityMapping:
    """Ordered first-match-wins rules from raw activity labels to event indices."""

    rules: tuple[MappingRule, ...]
    default_index: int = OTHER_EVENT_INDEX

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        for rule in self.rules:
            if rule.kind not in ("exact", "prefix"):
                raise ValueError(f"unknown rule kind {rule.kind!r}")
            if rule.event_index < 0:
                raise ValueError("rule event_index must be nonnegative")
        if self.default_index < 0:
            raise ValueError("default_index must be nonnegative")

    @classmethod
    def default(cls) -> "ActivityMapping":
        """Rules for the digital-electronics course logs' activity families.

        Longer patterns are listed before their prefixes so that, e.g., an
        exercise-specific simulator label wins over the bare simulator label.
        """
        rules = (
            MappingRule("prefix", "Study_Es", 0),
            MappingRule("prefix", "Deeds_Es_", 1),
            MappingRule("exact", "Deeds_Es", 2),
            MappingRule("prefix", "Deeds", 3),
            MappingRule("prefix", "TextEditor_Es_", 4),
            MappingRule("exact", "TextEditor_Es", 5),
            MappingRule("prefix", "TextEditor", 6),
            MappingRule("prefix", "Diagram", 7),
            MappingRule("prefix", "Properties", 8),
            MappingRule("prefix", "Study_Materials", 9),
            MappingRule("prefix", "FSM_Es", 10),
            MappingRule("prefix", "FSM", 11),
            MappingRule("prefix", "Aulaweb", 12),
            MappingRule("exact", "Blank", 13),
            MappingRule("prefix", "Other", 14),
        )
        return cls(rules, OTHER_EVENT_INDEX)

    def to_dict(self) -> dict:
        return {
            "rules": [[r.kind, r.pattern, r.event_index] for r in self.rules],
            "default_index": self.default_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityMapping":
        rules = tuple(MappingRule(kind, pattern, int(idx)) for kind, pattern, idx in d["rules"])
        return cls(rules, int(d.get("default_index", OTHER_EVENT_INDEX)))

    @classmethod
    def load(cls, path) -> "ActivityMapping":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


@dataclass(frozen=True)
class FilterConfig:
    """Admissible duration window in seconds.

    The defaults drop sub-second transients and anything beyond the top time
    bin edge. A stricter 1200 s cap (drop everything over 20 minutes) is a
    documented variant; with it the top duration bin is never populated.
    """

    min_duration_s: float = 1.0
    max_duration_s: float = 14000.0

    def __post_init__(self):
        if not self.min_duration_s > 0:
            raise ValueError("min_duration_s must be positive")
        if not self.min_duration_s < self.max_duration_s:
            raise ValueError("min_duration_s must be below max_duration_s")


def map_activity(label: str, mapping: ActivityMapping) -> int:
    """First matching rule wins; unmatched labels get the default index."""
    for rule in mapping.rules:
        if rule.kind == "exact":
            if label == rule.pattern:
                return rule.event_index
        elif label.startswith(rule.pattern):
            return rule.event_index
    return mapping.default_index


def discretize_duration(seconds: float, schema: Schema, filt: FilterConfig) -> int | None:
    """Time-bin index for an admitted duration, or None when filtered out.

    Bins are left-open/right-closed between consecutive schema edges. Returns
    None when the duration falls outside the filter window or outside the
    binned range (only possible when the window is wider than the edges).
    """
    if not seconds > 0:
        raise ValueError(f"duration must be positive, got {seconds}")
    if seconds < filt.min_duration_s or seconds > filt.max_duration_s:
        return None
    edges = schema.time_bin_edges
    idx = bisect_left(edges, seconds) - 1
    if idx < 0 or idx >= schema.num_time_bins:
        return None
    return idx


def discretize_interaction(total_count: int, schema: Schema) -> int:
    """Interaction-level index; counts at or above the top edge clamp to the top level.

    Bins are left-closed/right-open; the top edge reads as an observed
    maximum, not a cap, so larger totals land in the highest level.
    """
    if total_count < 0:
        raise ValueError(f"interaction count must be nonnegative, got {total_count}")
    edges = schema.interaction_bin_edges
    idx = bisect_right(edges, total_count) - 1
    top = schema.num_interaction_levels - 1
    if idx < 0:
        return 0
    return min(idx, top)


def _epoch(dt: datetime) -> float:
    # naive stamps are pinned to UTC so results never depend on the host zone
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_timestamp(raw: str, fmt: str | None) -> float:
    raw = raw.strip()
    if fmt:
        return _epoch(datetime.strptime(raw, fmt))
    try:
        return _epoch(datetime.fromisoformat(raw))
    except ValueError:
        pass
    for candidate in _TIMESTAMP_FORMATS:
        try:
            return _epoch(datetime.strptime(raw, candidate))
        except ValueError:
            continue
    return float(raw)  # plain epoch seconds; raises ValueError if not numeric


def _count_columns(spec) -> list[str]:
    if isinstance(spec, str):
        return [spec]
    return list(spec)


def parse_raw_log(csv_source, column_map: dict) -> tuple[list[RawEvent], list[RejectedRow]]:
    """Read raw events from a CSV with a header row.

    ``column_map`` names the source column for each RawEvent field; the
    ``mouse_clicks`` and ``keystrokes`` entries may name several columns,
    which are summed. An optional ``timestamp_format`` entry supplies a
    strptime pattern. Malformed rows land in the rejects list with a reason
    instead of being dropped; a missing mapped column is a configuration
    error and raises ValueError.
    """
    required = ("session", "student_id", "activity", "start_time", "end_time",
                "mouse_clicks", "keystrokes")
    missing = [f for f in required if f not in column_map]
    if missing:
        raise ValueError(f"column_map missing entries for: {', '.join(missing)}")
    ts_format = column_map.get("timestamp_format")

    if isinstance(csv_source, (str, Path)):
        fh = open(csv_source, newline="")
        close = True
    else:
        fh = csv_source
        close = False
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], []
        mapped_cols = (
            [column_map[f] for f in ("session", "student_id", "activity",
                                     "start_time", "end_time")]
            + _count_columns(column_map["mouse_clicks"])
            + _count_columns(column_map["keystrokes"])
        )
        absent = [c for c in mapped_cols if c not in reader.fieldnames]
        if absent:
            raise ValueError(f"mapped columns not in CSV header: {', '.join(absent)}")

        events: list[RawEvent] = []
        rejects: list[RejectedRow] = []
        for row_number, row in enumerate(reader, start=1):
            if any(row.get(c) is None for c in mapped_cols):
                rejects.append(RejectedRow(row_number, "short row"))
                continue
            try:
                start = _parse_timestamp(row[column_map["start_time"]], ts_format)
                end = _parse_timestamp(row[column_map["end_time"]], ts_format)
            except (ValueError, TypeError):
                rejects.append(RejectedRow(row_number, "bad timestamp"))
                continue
            if end < start:
                rejects.append(RejectedRow(row_number, "negative duration"))
                continue
            try:
                mouse = sum(int(float(row[c])) for c in _count_columns(column_map["mouse_clicks"]))
                keys = sum(int(float(row[c])) for c in _count_columns(column_map["keystrokes"]))
            except (ValueError, TypeError):
                rejects.append(RejectedRow(row_number, "bad interaction count"))
                continue
            if mouse < 0 or keys < 0:
                rejects.append(RejectedRow(row_number, "negative interaction count"))
                continue
            events.append(
                RawEvent(
                    session=row[column_map["session"]].strip(),
                    student_id=row[column_map["student_id"]].strip(),
                    activity=row[column_map["activity"]].strip(),
                    start_time=start,
                    end_time=end,
                    mouse_clicks=mouse,
                    keystrokes=keys,
                )
            )
        return events, rejects
    finally:
        if close:
            fh.close()


@dataclass
class IngestResult:
    """Per-session corpora plus the bookkeeping needed for conservation checks.

    For every parsed event: tokenized + filtered == len(raw input). Traces
    whose events were all filtered are dropped and listed.
    """

    corpora: dict[str, Corpus]
    tokenized: int
    filtered: int
    dropped_traces: list[str]
    event_counts: list[int]
    time_bin_counts: list[int]
    interaction_counts: list[int]

    def summary_dict(self) -> dict:
        return {
            "sessions": {s: c.num_traces for s, c in self.corpora.items()},
            "tokenized": self.tokenized,
            "filtered": self.filtered,
            "dropped_traces": list(self.dropped_traces),
            "event_counts": list(self.event_counts),
            "time_bin_counts": list(self.time_bin_counts),
            "interaction_counts": list(self.interaction_counts),
        }


def build_corpora(
    raw: list[RawEvent],
    mapping: ActivityMapping,
    schema: Schema,
    filt: FilterConfig,
) -> IngestResult:
    """Group events into per-session corpora of per-student traces.

    Trace ids are ``<student_id>_<session>``; traces keep file order within
    themselves and appear in order of first appearance. Events outside the
    duration window are filtered; traces left empty are dropped and reported.
    """
    for rule in mapping.rules:
        if rule.event_index >= schema.num_events:
            raise ValueError(
                f"mapping rule {rule.pattern!r} targets event {rule.event_index}, "
                f"schema has only {schema.num_events}"
            )
    if mapping.default_index >= schema.num_events:
        raise ValueError("mapping default_index outside schema")

    # session -> trace_id -> token list; insertion order is first appearance
    per_session: dict[str, dict[str, list[Token]]] = {}
    filtered = 0
    event_counts = [0] * schema.num_events
    time_counts = [0] * schema.num_time_bins
    level_counts = [0] * schema.num_interaction_levels

    for ev in raw:
        traces = per_session.setdefault(ev.session, {})
        trace_id = f"{ev.student_id}_{ev.session}"
        bucket = traces.setdefault(trace_id, [])
        duration = ev.duration_s
        if duration < filt.min_duration_s or duration > filt.max_duration_s:
            filtered += 1
            continue
        t_bin = discretize_duration(duration, schema, filt)
        if t_bin is None:
            filtered += 1
            continue
        e_idx = map_activity(ev.activity, mapping)
        i_lvl = discretize_interaction(ev.interaction_total, schema)
        bucket.append(Token(e_idx, t_bin, i_lvl))
        event_counts[e_idx] += 1
        time_counts[t_bin] += 1
        level_counts[i_lvl] += 1

    corpora: dict[str, Corpus] = {}
    dropped: list[str] = []
    tokenized = 0
    for session, traces in per_session.items():
        kept = []
        for trace_id, tokens in traces.items():
            if not tokens:
                dropped.append(trace_id)
                continue
            kept.append(Trace(trace_id, tuple(tokens)))
            tokenized += len(tokens)
        if kept:
            corpora[session] = Corpus(schema, tuple(kept))
    return IngestResult(
        corpora=corpora,
        tokenized=tokenized,
        filtered=filtered,
        dropped_traces=dropped,
        event_counts=event_counts,
        time_bin_counts=time_counts,
        interaction_counts=level_counts,
    )


def write_rejects_csv(rejects: list[RejectedRow], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["row_number", "reason"])
    for rej in rejects:
        writer.writerow([rej.row_number, rej.reason])
    Path(path).write_text(buf.getvalue())
