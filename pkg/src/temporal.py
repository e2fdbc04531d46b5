from dataclasses import dataclass
import bisect
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config_types import OverhangPolicy, TemporalPolicy, TimestampBasis
from custom_types import (
    TIME_EPS, EventFlag, EventKind, ExclusionReason, ExclusionStage, ExclusionTag, MatchEvent,
    ObjectObservation, ObsKey, Recording, Role, TemporalError, Track, time_key,
)
from format_types import OverhangFrame
from recording_io import build_recording
from utils import wrap_angle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyncedPair:
    """
    A ReS track resampled onto the sampling grid.

    res_track_id — the ReS track
    grid         — the sampling times the track was resampled on
    resampled    — one observation per grid time inside the track span
    overhangs    — original observations outside the grid span, labeled lead/tail
    """
    res_track_id: str
    grid: Tuple[float, ...]
    resampled: Tuple[ObjectObservation, ...]
    overhangs: Tuple[OverhangFrame, ...]


# ---------------------------------------------------------------------------
# Latency and timestamp basis
# ---------------------------------------------------------------------------

def latency_at(policy: TemporalPolicy, t: float) -> float:
    """SUT latency at acquisition time *t*; a series is interpolated and held at its ends."""
    latency = policy.sut_latency_s
    if latency is None:
        raise TemporalError("Availability basis requires temporal.sut_latency_s")
    if isinstance(latency, float):
        return latency
    return float(np.interp(t, [p[0] for p in latency], [p[1] for p in latency]))


def apply_timestamp_basis(res: Recording, sut: Recording, policy: TemporalPolicy) -> Tuple[Recording, Recording]:
    """
    Acquisition basis leaves both recordings untouched. Availability basis stamps
    every SUT observation and frame time at t + latency, so initial computation
    time shows up as head-end FNs. ReS stamps never move.
    """
    if policy.basis == TimestampBasis.ACQUISITION:
        return res, sut
    if policy.sut_latency_s is None:
        raise TemporalError("Timestamp basis 'availability' needs temporal.sut_latency_s")
    shifted = [o.moved(timestamp=o.timestamp + latency_at(policy, o.timestamp)) for o in sut.observations()]
    frame_times = None
    if sut.frame_times is not None:
        frame_times = [t + latency_at(policy, t) for t in sut.frame_times]
    logger.debug("Shifted %d SUT observations to availability time", len(shifted))
    return res, build_recording(sut.role, shifted, sut.sensor_meta, frame_times)


def sut_delays(sut: Recording, policy: TemporalPolicy) -> Dict[ObsKey, float]:
    """Latency per shifted SUT observation key; empty under acquisition basis."""
    if policy.basis == TimestampBasis.ACQUISITION:
        return {}
    delays: Dict[ObsKey, float] = {}
    for obs in sut.observations():
        lat = latency_at(policy, obs.timestamp)
        delays[(obs.track_id, time_key(obs.timestamp + lat))] = lat
    return delays


# ---------------------------------------------------------------------------
# Sampling grid and resampling
# ---------------------------------------------------------------------------

def sampling_grid(sut: Recording, res: Recording) -> List[float]:
    """
    The SUT sample times: declared frame_times plus every SUT observation time.
    Without either, the ReS timestamps stand in.
    """
    times: Dict[float, float] = {}
    if sut.frame_times is None:
        logger.warning("SUT recording declares no frame_times; sampling on its observation timestamps.")
    else:
        for t in sut.frame_times:
            times.setdefault(time_key(t), t)
    for t in sut.timestamps():
        times.setdefault(time_key(t), t)
    if not times:
        return res.timestamps()
    return [times[k] for k in sorted(times)]


def _interpolate(a: ObjectObservation, b: ObjectObservation, t: float) -> ObjectObservation:
    frac = (t - a.timestamp) / (b.timestamp - a.timestamp)
    near = a if frac <= 0.5 else b

    def lerp(u: float, v: float) -> float:
        return u + frac * (v - u)

    cov = near.pos_cov
    if a.pos_cov is not None and b.pos_cov is not None:
        cov = ((lerp(a.pos_cov[0][0], b.pos_cov[0][0]), lerp(a.pos_cov[0][1], b.pos_cov[0][1])),
               (lerp(a.pos_cov[1][0], b.pos_cov[1][0]), lerp(a.pos_cov[1][1], b.pos_cov[1][1])))
    conf = near.existence_conf
    if a.existence_conf is not None and b.existence_conf is not None:
        conf = lerp(a.existence_conf, b.existence_conf)
    return ObjectObservation(
        timestamp=t,
        track_id=a.track_id,
        class_label=near.class_label,
        x=lerp(a.x, b.x),
        y=lerp(a.y, b.y),
        length=near.length,
        width=near.width,
        yaw=wrap_angle(a.yaw + frac * wrap_angle(b.yaw - a.yaw)),
        vx=lerp(a.vx, b.vx),
        vy=lerp(a.vy, b.vy),
        pos_cov=cov,
        existence_conf=conf,
        class_confs=near.class_confs,
        interpolated=True,
    )


def synchronize(res_track: Track, sut_timestamps: Sequence[float], policy: Optional[TemporalPolicy] = None) -> SyncedPair:
    """
    Resamples *res_track* at every SUT timestamp inside its span. Positions and
    velocities are linear, yaw follows the shortest arc, extent and class come
    from the nearest neighbor. Nothing is extrapolated; original observations
    outside the SUT span become lead or tail overhangs. *policy* is accepted for
    symmetry with the other temporal operations; only linear interpolation exists.
    """
    observations = res_track.observations
    times = [o.timestamp for o in observations]
    grid = tuple(sut_timestamps)
    resampled: List[ObjectObservation] = []
    overhangs: List[OverhangFrame] = []
    if not observations or not grid:
        return SyncedPair(res_track.track_id, grid, (), ())

    lo = bisect.bisect_left(grid, res_track.start - TIME_EPS)
    hi = bisect.bisect_right(grid, res_track.end + TIME_EPS)
    for t in grid[lo:hi]:
        idx = bisect.bisect_left(times, t - TIME_EPS)
        if idx < len(times) and abs(times[idx] - t) <= TIME_EPS:
            obs = observations[idx]
            resampled.append(obs if obs.timestamp == t else obs.moved(timestamp=t))
        else:
            resampled.append(_interpolate(observations[idx - 1], observations[idx], t))

    first, last = grid[0], grid[-1]
    for obs in observations:
        if obs.timestamp < first - TIME_EPS:
            overhangs.append(OverhangFrame(obs, Role.RES, "lead", first - obs.timestamp))
        elif obs.timestamp > last + TIME_EPS:
            overhangs.append(OverhangFrame(obs, Role.RES, "tail", obs.timestamp - last))
    return SyncedPair(res_track.track_id, grid, tuple(resampled), tuple(overhangs))


# ---------------------------------------------------------------------------
# Overhangs
# ---------------------------------------------------------------------------

def resolve_overhangs(
    overhangs: Sequence[OverhangFrame], policy: TemporalPolicy,
) -> Tuple[List[MatchEvent], List[ExclusionTag]]:
    """
    discard excludes every overhang frame; fn_fp turns ReS overhangs into FNs and
    SUT overhangs into FPs; threshold(dt) discards overhangs closer than dt and
    counts the rest.
    """
    events: List[MatchEvent] = []
    exclusions: List[ExclusionTag] = []
    for frame in overhangs:
        obs = frame.obs
        discard = policy.overhang == OverhangPolicy.DISCARD or (
            policy.overhang == OverhangPolicy.THRESHOLD
            and policy.dt_max_s is not None
            and frame.offset_s < policy.dt_max_s
        )
        detail = f"{frame.side} overhang {frame.offset_s:.3f} s"
        if discard:
            exclusions.append(ExclusionTag(
                reason=ExclusionReason.OVERHANG_DISCARDED, stage=ExclusionStage.POST_MATCHING, role=frame.role,
                track_id=obs.track_id, timestamp=obs.timestamp, class_label=obs.class_label,
                x=obs.x, y=obs.y, detail=detail,
            ))
        elif frame.role == Role.RES:
            events.append(MatchEvent(
                timestamp=obs.timestamp, kind=EventKind.FN, res_id=obs.track_id, res_class=obs.class_label,
                flags=frozenset({EventFlag.OVERHANG}), detail=detail,
            ))
        else:
            events.append(MatchEvent(
                timestamp=obs.timestamp, kind=EventKind.FP, sut_id=obs.track_id, sut_class=obs.class_label,
                flags=frozenset({EventFlag.OVERHANG}), detail=detail,
            ))
    return events, exclusions
