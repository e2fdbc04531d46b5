from collections import defaultdict
from pathlib import Path
import json
import logging
import math
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from custom_types import (
    Matrix2, ObjectObservation, Recording, RecordingFormatError, Role, Track, Violation, time_key,
)

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("t", "id", "cls", "x", "y", "l", "w", "yaw")
OPTIONAL_KEYS = ("vx", "vy", "cov", "p_exist", "p_cls")
HEADER_KEYS = ("role", "meta", "frame_times")

PSD_TOLERANCE = 1e-12
SYMMETRY_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def build_recording(
    role: Role,
    observations: Iterable[ObjectObservation],
    sensor_meta: Optional[Mapping[str, Any]] = None,
    frame_times: Optional[Sequence[float]] = None,
) -> Recording:
    """
    Groups *observations* into tracks by id. Tracks are sorted by id and their
    observations by timestamp; duplicates are kept so validation can report them.
    """
    by_id: Dict[str, List[ObjectObservation]] = defaultdict(list)
    for obs in observations:
        by_id[obs.track_id].append(obs)
    tracks = tuple(
        Track(track_id=tid, observations=tuple(sorted(obs_list, key=lambda o: o.timestamp)))
        for tid, obs_list in sorted(by_id.items())
    )
    return Recording(
        role=role,
        tracks=tracks,
        sensor_meta=dict(sensor_meta or {}),
        frame_times=None if frame_times is None else tuple(float(t) for t in frame_times),
    )


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def _number(record: Mapping[str, Any], key: str, where: str) -> float:
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RecordingFormatError(f"{where}: '{key}' must be a number, got {value!r}")
    return float(value)


def _parse_cov(value: Any, where: str) -> Matrix2:
    if not isinstance(value, list) or len(value) != 4 or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise RecordingFormatError(f"{where}: 'cov' must be 4 numbers in row-major order, got {value!r}")
    a, b, c, d = (float(v) for v in value)
    return ((a, b), (c, d))


def _parse_class_confs(value: Any, where: str) -> Dict[str, float]:
    if not isinstance(value, dict):
        raise RecordingFormatError(f"{where}: 'p_cls' must be an object of class -> confidence")
    confs: Dict[str, float] = {}
    for cls, conf in sorted(value.items()):
        if isinstance(conf, bool) or not isinstance(conf, (int, float)):
            raise RecordingFormatError(f"{where}: 'p_cls.{cls}' must be a number, got {conf!r}")
        confs[cls] = float(conf)
    return confs


def parse_observation(record: Any, where: str) -> ObjectObservation:
    """Converts one decoded recording line into an ObjectObservation."""
    if not isinstance(record, dict):
        raise RecordingFormatError(f"{where}: expected an object, got {type(record).__name__}")
    missing = [k for k in REQUIRED_KEYS if k not in record]
    if missing:
        raise RecordingFormatError(f"{where}: missing required key(s) {missing}")
    unknown = sorted(set(record) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS))
    if unknown:
        raise RecordingFormatError(f"{where}: unknown key(s) {unknown}")
    if not isinstance(record["id"], (str, int)) or isinstance(record["id"], bool):
        raise RecordingFormatError(f"{where}: 'id' must be a string, got {record['id']!r}")
    if not isinstance(record["cls"], str):
        raise RecordingFormatError(f"{where}: 'cls' must be a string, got {record['cls']!r}")

    p_exist = record.get("p_exist")
    return ObjectObservation(
        timestamp=_number(record, "t", where),
        track_id=str(record["id"]),
        class_label=record["cls"],
        x=_number(record, "x", where),
        y=_number(record, "y", where),
        length=_number(record, "l", where),
        width=_number(record, "w", where),
        yaw=_number(record, "yaw", where),
        vx=_number(record, "vx", where) if "vx" in record else 0.0,
        vy=_number(record, "vy", where) if "vy" in record else 0.0,
        pos_cov=_parse_cov(record["cov"], where) if record.get("cov") is not None else None,
        existence_conf=None if p_exist is None else _number(record, "p_exist", where),
        class_confs=_parse_class_confs(record["p_cls"], where) if record.get("p_cls") is not None else None,
    )


def _parse_header(header: Any, where: str) -> Dict[str, Any]:
    if not isinstance(header, dict):
        raise RecordingFormatError(f"{where}: 'header' must be an object")
    unknown = sorted(set(header) - set(HEADER_KEYS))
    if unknown:
        raise RecordingFormatError(f"{where}: unknown header key(s) {unknown}")
    if "meta" in header and not isinstance(header["meta"], dict):
        raise RecordingFormatError(f"{where}: header 'meta' must be an object")
    frame_times = header.get("frame_times")
    if frame_times is not None and (not isinstance(frame_times, list) or any(
            isinstance(t, bool) or not isinstance(t, (int, float)) for t in frame_times)):
        raise RecordingFormatError(f"{where}: header 'frame_times' must be a list of numbers")
    return header


def load_recording(path: Path, role: Role) -> Recording:
    """
    Reads a JSONL recording. The optional first line may be a header object
    {"header": {"role", "meta", "frame_times"}}; every other line is one observation.

    Raises FileNotFoundError if *path* does not exist and RecordingFormatError for
    malformed lines, missing required keys or unknown keys.
    """
    if not path.exists():
        raise FileNotFoundError(f"Recording not found: {path}")

    header: Dict[str, Any] = {}
    observations: List[ObjectObservation] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            where = f"{path}:{line_no}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordingFormatError(f"{where}: malformed line: {e}") from e
            if isinstance(record, dict) and "header" in record:
                if observations or header:
                    raise RecordingFormatError(f"{where}: header is only allowed on the first line")
                if len(record) != 1:
                    raise RecordingFormatError(f"{where}: header line must hold only the 'header' key")
                header = _parse_header(record["header"], where)
                continue
            observations.append(parse_observation(record, where))

    declared = header.get("role")
    if declared is not None and declared != role.value:
        logger.warning("Recording %s declares role %s but is used as %s.", path, declared, role.value)

    recording = build_recording(role, observations, header.get("meta"), header.get("frame_times"))
    logger.debug("Loaded %s recording %s: %d tracks, %d observations",
                 role.value, path, len(recording.tracks), recording.n_observations)
    return recording


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def observation_to_record(obs: ObjectObservation) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "t": obs.timestamp, "id": obs.track_id, "cls": obs.class_label,
        "x": obs.x, "y": obs.y, "l": obs.length, "w": obs.width, "yaw": obs.yaw,
        "vx": obs.vx, "vy": obs.vy,
    }
    if obs.pos_cov is not None:
        record["cov"] = [obs.pos_cov[0][0], obs.pos_cov[0][1], obs.pos_cov[1][0], obs.pos_cov[1][1]]
    if obs.existence_conf is not None:
        record["p_exist"] = obs.existence_conf
    if obs.class_confs is not None:
        record["p_cls"] = dict(sorted(obs.class_confs.items()))
    return record


def save_recording(rec: Recording, path: Path) -> None:
    """Writes *rec* as JSONL: a header line, then tracks by id, observations by time, keys sorted."""
    path.parent.mkdir(parents=True, exist_ok=True)
    header: Dict[str, Any] = {"role": rec.role.value, "meta": dict(rec.sensor_meta)}
    if rec.frame_times is not None:
        header["frame_times"] = list(rec.frame_times)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for track in sorted(rec.tracks, key=lambda t: t.track_id):
            for obs in sorted(track.observations, key=lambda o: o.timestamp):
                f.write(json.dumps(observation_to_record(obs), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _observation_violations(obs: ObjectObservation) -> List[Violation]:
    found: List[Violation] = []

    def add(kind: str, message: str) -> None:
        found.append(Violation(kind=kind, message=message, track_id=obs.track_id, timestamp=obs.timestamp))

    if not math.isfinite(obs.timestamp):
        add("non_finite_timestamp", f"timestamp {obs.timestamp} is not finite")
    values = {"x": obs.x, "y": obs.y, "l": obs.length, "w": obs.width, "yaw": obs.yaw, "vx": obs.vx, "vy": obs.vy}
    bad = sorted(k for k, v in values.items() if not math.isfinite(v))
    if bad:
        add("non_finite_value", f"non-finite value(s) in {bad}")
    if obs.length <= 0.0 or obs.width <= 0.0:
        add("non_positive_extent", f"extent l={obs.length}, w={obs.width} must be > 0")

    if obs.pos_cov is not None:
        cov = np.asarray(obs.pos_cov, dtype=float)
        if not np.all(np.isfinite(cov)):
            add("non_finite_cov", "covariance has non-finite entries")
        elif abs(cov[0, 1] - cov[1, 0]) > SYMMETRY_TOLERANCE:
            add("asymmetric_cov", f"covariance off-diagonals differ: {cov[0, 1]} vs {cov[1, 0]}")
        else:
            min_eig = float(np.linalg.eigvalsh(cov).min())
            if min_eig < -PSD_TOLERANCE:
                add("non_psd_cov", f"covariance has negative eigenvalue {min_eig:.6g}")

    if obs.existence_conf is not None and not 0.0 <= obs.existence_conf <= 1.0:
        add("conf_out_of_range", f"existence confidence {obs.existence_conf} outside [0, 1]")
    if obs.class_confs is not None:
        out = sorted(k for k, v in obs.class_confs.items() if not 0.0 <= v <= 1.0)
        if out:
            add("conf_out_of_range", f"class confidence(s) outside [0, 1] for {out}")
    return found


def validate_recording(rec: Recording) -> List[Violation]:
    """
    Returns every invariant violation of *rec* with track/time locators.
    An empty list means the recording is well-formed.
    """
    violations: List[Violation] = []

    if rec.frame_times is not None:
        times = list(rec.frame_times)
        if any(not math.isfinite(t) for t in times):
            violations.append(Violation("non_finite_timestamp", "frame_times hold a non-finite value"))
        elif any(b - a <= 0.0 for a, b in zip(times, times[1:])):
            violations.append(Violation("unordered_frame_times", "frame_times must be strictly increasing"))

    seen_ids = set()
    for track in rec.tracks:
        if track.track_id in seen_ids:
            violations.append(Violation("duplicate_track_id", "track id appears twice", track_id=track.track_id))
        seen_ids.add(track.track_id)

        previous: Optional[float] = None
        for obs in track.observations:
            if obs.track_id != track.track_id:
                violations.append(Violation(
                    "track_id_mismatch", f"observation carries id {obs.track_id!r}",
                    track_id=track.track_id, timestamp=obs.timestamp))
            violations.extend(_observation_violations(obs))
            if previous is not None and math.isfinite(obs.timestamp):
                if time_key(obs.timestamp) == time_key(previous):
                    violations.append(Violation(
                        "duplicate_timestamp", "two observations share this (id, t)",
                        track_id=track.track_id, timestamp=obs.timestamp))
                elif obs.timestamp < previous:
                    violations.append(Violation(
                        "unordered_timestamps", f"timestamp precedes {previous}",
                        track_id=track.track_id, timestamp=obs.timestamp))
            if math.isfinite(obs.timestamp):
                previous = obs.timestamp
    return violations
