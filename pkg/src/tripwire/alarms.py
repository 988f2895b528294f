"""Alarm store: raw alarms condensed by (placement, accessor, time bucket)."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import NotFoundError, ValidationError

DEFAULT_BUCKET_MS = 1000


@dataclass(frozen=True)
class RawAlarm:
    placement_id: str
    dm_id: str
    accessor: str
    observables: Mapping[str, str] = field(default_factory=dict)
    timestamp: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "placement_id": self.placement_id,
            "dm_id": self.dm_id,
            "accessor": self.accessor,
            "observables": dict(sorted(self.observables.items())),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RawAlarm:
        """Strict parse; raises ValidationError on anything malformed."""
        if not isinstance(data, Mapping):
            raise ValidationError("alarm is not a mapping")
        missing = {"placement_id", "dm_id", "accessor", "timestamp"} - set(data)
        if missing:
            raise ValidationError(f"alarm is missing {sorted(missing)}")
        ts = data["timestamp"]
        if isinstance(ts, bool) or not isinstance(ts, int):
            raise ValidationError(f"alarm timestamp {ts!r} is not an integer")
        obs = data.get("observables") or {}
        if not isinstance(obs, Mapping) or not all(isinstance(v, str) for v in obs.values()):
            raise ValidationError("alarm observables must map names to strings")
        for key in ("placement_id", "dm_id", "accessor"):
            if not isinstance(data[key], str) or not data[key]:
                raise ValidationError(f"alarm {key} must be a non-empty string")
        return cls(data["placement_id"], data["dm_id"], data["accessor"], dict(obs), ts)


@dataclass
class CondensedAlarm:
    alarm_id: str
    placement_id: str
    accessor: str
    time_bucket: int
    count: int
    first_ts: int
    last_ts: int
    observables: dict[str, str]
    dm_id: str = ""

    @property
    def secret(self) -> str | None:
        return self.observables.get("secret")

    def to_dict(self) -> dict[str, Any]:
        return {
            "alarm_id": self.alarm_id,
            "placement_id": self.placement_id,
            "accessor": self.accessor,
            "time_bucket": self.time_bucket,
            "count": self.count,
            "first_ts": self.first_ts,
            "last_ts": self.last_ts,
            "observables": dict(sorted(self.observables.items())),
            "dm_id": self.dm_id,
        }


@dataclass(frozen=True)
class StoreStats:
    raw_ingested: int
    condensed_stored: int
    dead_lettered: int

    def to_dict(self) -> dict[str, int]:
        return {
            "raw_ingested": self.raw_ingested,
            "condensed_stored": self.condensed_stored,
            "dead_lettered": self.dead_lettered,
        }


class AlarmStore:
    """Append-only condensed alarm store.

    ``instance_of`` maps a placement id to its tripwire instance id; it backs
    the instance filter of :meth:`query`. ``log_path`` turns on the
    line-delimited raw alarm log used for crash replay.
    """

    def __init__(
        self,
        bucket_ms: int = DEFAULT_BUCKET_MS,
        instance_of: Callable[[str], str | None] | None = None,
        log_path: str | Path | None = None,
    ):
        if bucket_ms <= 0:
            raise ValidationError("bucket width must be positive")
        self.bucket_ms = bucket_ms
        self.instance_of = instance_of
        self._lock = threading.Lock()
        self._records: dict[str, CondensedAlarm] = {}
        self._by_key: dict[tuple[str, str, int], str] = {}
        self._raw = 0
        self.dead_letters: list[Any] = []
        self._log_path = Path(log_path) if log_path else None

    def __len__(self) -> int:
        return len(self._records)

    def ingest(self, raw: RawAlarm | Mapping[str, Any]) -> str | None:
        """Merge one raw alarm; returns the condensed id, or None if dead-lettered."""
        with self._lock:
            self._raw += 1
            try:
                alarm = raw if isinstance(raw, RawAlarm) else RawAlarm.from_dict(raw)
                if alarm.timestamp < 0:
                    raise ValidationError("negative timestamp")
            except ValidationError:
                self.dead_letters.append(raw)
                self._append_log(raw)
                return None
            self._append_log(alarm.to_dict())
            return self._merge(alarm)

    def ingest_many(self, raws: Iterable[RawAlarm]) -> list[str | None]:
        """Linearize a batch by (timestamp, arrival order) before merging."""
        ordered = sorted(enumerate(raws), key=lambda pair: (_ts_key(pair[1]), pair[0]))
        return [self.ingest(r) for _, r in ordered]

    def _merge(self, alarm: RawAlarm) -> str:
        bucket = alarm.timestamp // self.bucket_ms
        key = (alarm.placement_id, alarm.accessor, bucket)
        rec_id = self._by_key.get(key)
        if rec_id is not None:
            rec = self._records[rec_id]
            rec.count += 1
            rec.first_ts = min(rec.first_ts, alarm.timestamp)
            rec.last_ts = max(rec.last_ts, alarm.timestamp)
            return rec_id
        rec_id = f"a{len(self._records) + 1}"
        self._records[rec_id] = CondensedAlarm(
            alarm_id=rec_id,
            placement_id=alarm.placement_id,
            accessor=alarm.accessor,
            time_bucket=bucket,
            count=1,
            first_ts=alarm.timestamp,
            last_ts=alarm.timestamp,
            observables=dict(alarm.observables),
            dm_id=alarm.dm_id,
        )
        self._by_key[key] = rec_id
        return rec_id

    def _append_log(self, record: Any) -> None:
        if self._log_path is None:
            return
        with self._log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, default=str) + "\n")

    def get(self, alarm_id: str) -> CondensedAlarm:
        try:
            return self._records[alarm_id]
        except KeyError:
            raise NotFoundError(f"unknown alarm {alarm_id!r}") from None

    def __contains__(self, alarm_id: object) -> bool:
        return alarm_id in self._records

    def all(self) -> list[CondensedAlarm]:
        return sorted(self._records.values(), key=_order)

    def query(
        self,
        t0: int | None = None,
        t1: int | None = None,
        *,
        placement_id: str | None = None,
        accessor: str | None = None,
        instance_id: str | None = None,
    ) -> list[CondensedAlarm]:
        if t0 is not None and t1 is not None and t0 > t1:
            raise ValidationError(f"invalid range [{t0}, {t1}]")
        if instance_id is not None and self.instance_of is None:
            raise ValidationError("store has no placement-to-instance mapping")
        out = []
        for rec in self._records.values():
            if t0 is not None and rec.first_ts < t0:
                continue
            if t1 is not None and rec.first_ts > t1:
                continue
            if placement_id is not None and rec.placement_id != placement_id:
                continue
            if accessor is not None and rec.accessor != accessor:
                continue
            if instance_id is not None and self.instance_of(rec.placement_id) != instance_id:
                continue
            out.append(rec)
        return sorted(out, key=_order)

    def stats(self) -> StoreStats:
        return StoreStats(self._raw, len(self._records), len(self.dead_letters))

    def restore(self, log_path: str | Path) -> int:
        """Re-ingest every record of ``log_path`` without appending to any log; returns lines read."""
        saved, self._log_path = self._log_path, None
        n = 0
        try:
            with Path(log_path).open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError:
                        record = line
                    self.ingest(record)
                    n += 1
        finally:
            self._log_path = saved
        return n

    @classmethod
    def replay(cls, log_path: str | Path, **kwargs: Any) -> AlarmStore:
        """Rebuild a store from an append-only log; the log itself is never rewritten."""
        store = cls(**kwargs)
        store.restore(log_path)
        return store

def _order(rec: CondensedAlarm) -> tuple[int, int]:
    return (rec.first_ts, int(rec.alarm_id[1:]))


def _ts_key(raw: Any) -> int:
    if isinstance(raw, RawAlarm):
        return raw.timestamp
    ts = raw.get("timestamp") if isinstance(raw, Mapping) else None
    return ts if isinstance(ts, int) and not isinstance(ts, bool) else -1
