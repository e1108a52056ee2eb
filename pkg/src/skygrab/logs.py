"""Run logs: newline-delimited JSON with a schema header line.

Records are serialized with sorted keys and compact separators so that a
run's log is a deterministic function of (config, seed); no wall-clock
timestamps appear anywhere. The first line is the header (schema
version, fully resolved config, multirate bookkeeping); every following
line is one record with a "kind" discriminator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_NAME = "skygrab-log"
SCHEMA_VERSION = 1


def coerce_jsonable(obj):
    """Recursively convert numpy scalars/arrays so json can emit them."""
    if isinstance(obj, dict):
        return {k: coerce_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [coerce_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [coerce_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(coerce_jsonable(obj), sort_keys=True, separators=(",", ":"))


@dataclass
class SimLog:
    """One scenario run: header plus the time-ordered record list."""

    header: dict
    records: list = field(default_factory=list)

    def append(self, record: dict):
        self.records.append(record)

    def iter_kind(self, kind: str):
        return (r for r in self.records if r["kind"] == kind)

    def first_kind(self, kind: str):
        return next(self.iter_kind(kind), None)

    @property
    def verdict_record(self) -> dict | None:
        return self.first_kind("verdict")

    @property
    def verdict(self) -> str | None:
        rec = self.verdict_record
        return rec["verdict"] if rec else None

    def phase_transitions(self, drone_id: str) -> list:
        return [
            (r["from"], r["to"]) for r in self.iter_kind("phase") if r["drone"] == drone_id
        ]

    def events(self, name: str | None = None) -> list:
        return [
            r for r in self.iter_kind("event") if name is None or r["event"] == name
        ]

    def to_bytes(self) -> bytes:
        lines = [_dumps(self.header)]
        lines.extend(_dumps(r) for r in self.records)
        return ("\n".join(lines) + "\n").encode("utf-8")

    def write(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "SimLog":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line.strip()]
        if not lines:
            raise ValueError(f"{path}: empty log file")
        header = json.loads(lines[0])
        if header.get("schema") != SCHEMA_NAME:
            raise ValueError(f"{path}: not a {SCHEMA_NAME} file")
        return cls(header=header, records=[json.loads(l) for l in lines[1:]])


def validate_log(log: SimLog) -> None:
    """Structural checks every run log must satisfy.

    Validates phase traces against the declared graphs, per-stream time
    monotonicity, message conservation (delivered is a subset of sent,
    in per-sender send order), the single-verdict rule, and that
    grab_confirmed is sent at most once.
    """
    from .coordination import MissionPhase, validate_phase_trace

    verdicts = list(log.iter_kind("verdict"))
    if len(verdicts) != 1:
        raise ValueError(f"expected exactly one verdict record, found {len(verdicts)}")

    roles = {d["id"]: d["role"] for d in log.header["config"]["drones"]}
    for drone_id, role in roles.items():
        transitions = [
            (MissionPhase(a), MissionPhase(b)) for a, b in log.phase_transitions(drone_id)
        ]
        validate_phase_trace(transitions, role)

    last_t: dict = {}
    for r in log.records:
        if "t" not in r:
            continue
        key = (r["kind"], r.get("drone"))
        if key in last_t and r["t"] < last_t[key] - 1e-12:
            raise ValueError(f"timestamps regress in stream {key}")
        last_t[key] = r["t"]

    sent: dict = {}
    delivered: dict = {}
    confirms_sent = 0
    for r in log.iter_kind("message"):
        key = (r["sender"], r["msg_kind"])
        if r["status"] == "sent":
            sent.setdefault(key, []).append(r["t_sent"])
            if r["msg_kind"] == "grab_confirmed":
                confirms_sent += 1
        elif r["status"] == "delivered":
            delivered.setdefault(key, []).append(r["t_sent"])
    if confirms_sent > 1:
        raise ValueError("grab_confirmed sent more than once")
    for key, times in delivered.items():
        pool = sent.get(key, [])
        if sorted(times) != times:
            raise ValueError(f"out-of-order delivery for {key}")
        pool_iter = iter(pool)
        for t in times:
            for p in pool_iter:
                if p == t:
                    break
            else:
                raise ValueError(f"delivered message never sent for {key}")
