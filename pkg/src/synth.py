"""
Synthetic paired recordings with a constructively known verdict ledger.

Generation draws from numpy's Generator(PCG64(seed)) in a fixed order:

1. ReS pass, frames k = 0..K-1, ground-truth tracks in spec order, for every
   alive track: two standard normals (reference position noise).
2. SUT pass, frames k = 0..K-1, ground-truth tracks in spec order, for every
   alive track: two standard normals (SUT position noise), six uniforms
   (dropout, fragmentation, misclassification, replacement label, duplicate,
   duplicate bearing), one uniform (duplicate distance) and two standard
   normals (primary and duplicate confidence). Then one Poisson count of
   clutter detections, and per clutter detection up to CLUTTER_TRIES pairs of
   uniforms for its position, one uniform for its label and one standard
   normal for its confidence.

All values are drawn whether or not the probability they feed is zero, so
changing one perturbation rate never shifts the stream of another.
"""
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
import json
import logging
import math
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from config_loader import dump_config, merge_config, resolve_max_threads
from config_types import (
    Cardinality, Lifetime, Metric, OcclusionPolicy, OracleConfig, OverhangPolicy,
    TimestampBasis, TransformKind,
)
from custom_types import (
    EventFlag, EventKind, ExclusionReason, ExclusionStage, ExclusionTag, GtTrackSpec, LedgerContext,
    MatchEvent, ObjectObservation, PerturbationModel, Recording, Role, SceneSpec, SceneSpecError,
    TIME_EPS, ConfigError, VerdictLedger,
)
from filters import aov_reason, area_check
from matching import apply_gap_policy
from oracle import N_N_NOTE, exclusion_sort_key
from recording_io import build_recording, save_recording
from utils import TOOL_VERSION, median_period
from verdict import aggregate, classify_mismatch

logger = logging.getLogger(__name__)

CLASS_EXTENTS: Dict[str, Tuple[float, float]] = {
    "bicycle": (1.8, 0.6),
    "bus": (12.0, 2.9),
    "car": (4.5, 1.8),
    "motorcycle": (2.2, 0.8),
    "pedestrian": (0.8, 0.8),
    "trailer": (8.0, 2.5),
    "truck": (10.0, 2.5),
}
DEFAULT_EXTENT = (4.0, 2.0)
LABELS = ("bicycle", "car", "pedestrian", "truck")

NOISE_CLIP = 0.3          # × threshold, per system
LAG_LIMIT = 0.2           # × threshold, speed × latency
GT_SPACING = 3.0          # × threshold between distinct objects
DUPLICATE_RANGE = (0.85, 0.95)
CLUTTER_CLEARANCE = 1.2   # × threshold from every reference object
CLUTTER_TRIES = 50
CONF_SPREAD = 0.1
EPS = 1e-9

SPEC_KEYS = ["seed", "duration_s", "rate_hz", "res_noise_sigma_m", "gt_tracks", "sut_model", "config"]
TRACK_KEYS = ["id", "cls", "start", "velocity", "t_start", "t_end", "waypoints"]
MODEL_KEYS = ["pos_sigma_m", "dropout_per_frame_prob", "clutter_rate_per_frame", "latency_s",
              "fragmentation_prob", "duplicate_prob", "misclass_prob", "existence_conf_model"]


# ---------------------------------------------------------------------------
# Scene spec documents
# ---------------------------------------------------------------------------

def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SceneSpecError(f"'{where}' must be a finite number, got {value!r}.")
    return float(value)


def _pair(value: Any, where: str) -> Tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise SceneSpecError(f"'{where}' must be a [x, y] pair.")
    return (_number(value[0], f"{where}[0]"), _number(value[1], f"{where}[1]"))


def _unknown(data: Mapping[str, Any], allowed: Sequence[str], where: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise SceneSpecError(f"Unknown key(s) in '{where}': {', '.join(unknown)}")


def _parse_track(data: Any, where: str) -> GtTrackSpec:
    if not isinstance(data, dict):
        raise SceneSpecError(f"'{where}' must be an object.")
    _unknown(data, TRACK_KEYS, where)
    for key in ("id", "cls"):
        if not isinstance(data.get(key), str) or not data[key]:
            raise SceneSpecError(f"'{where}.{key}' must be a non-empty string.")
    if "waypoints" in data:
        if any(k in data for k in ("start", "velocity", "t_start", "t_end")):
            raise SceneSpecError(f"'{where}' mixes waypoints with the constant-velocity form.")
        raw = data["waypoints"]
        if not isinstance(raw, list) or not raw:
            raise SceneSpecError(f"'{where}.waypoints' must be a non-empty list of [t, x, y].")
        points = []
        for i, p in enumerate(raw):
            if not isinstance(p, list) or len(p) != 3:
                raise SceneSpecError(f"'{where}.waypoints[{i}]' must be [t, x, y].")
            points.append(tuple(_number(v, f"{where}.waypoints[{i}]") for v in p))
        if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
            raise SceneSpecError(f"'{where}.waypoints' times must be strictly increasing.")
        return GtTrackSpec(track_id=data["id"], cls=data["cls"], waypoints=tuple(points))  # type: ignore[arg-type]
    t_end = data.get("t_end")
    return GtTrackSpec(
        track_id=data["id"],
        cls=data["cls"],
        start=_pair(data.get("start", [0.0, 0.0]), f"{where}.start"),
        velocity=_pair(data.get("velocity", [0.0, 0.0]), f"{where}.velocity"),
        t_start=_number(data.get("t_start", 0.0), f"{where}.t_start"),
        t_end=None if t_end is None else _number(t_end, f"{where}.t_end"),
    )


def _probability(data: Mapping[str, Any], key: str) -> float:
    value = _number(data.get(key, 0.0), f"sut_model.{key}")
    if not 0.0 <= value <= 1.0:
        raise SceneSpecError(f"'sut_model.{key}' must lie in [0, 1], got {value}.")
    return value


def _parse_model(data: Any) -> PerturbationModel:
    if data is None:
        return PerturbationModel()
    if not isinstance(data, dict):
        raise SceneSpecError("'sut_model' must be an object.")
    _unknown(data, MODEL_KEYS, "sut_model")
    conf_model = None
    if data.get("existence_conf_model") is not None:
        real, clutter = _pair(data["existence_conf_model"], "sut_model.existence_conf_model")
        if not (0.0 <= real <= 1.0 and 0.0 <= clutter <= 1.0):
            raise SceneSpecError("'sut_model.existence_conf_model' means must lie in [0, 1].")
        conf_model = (real, clutter)
    sigma = _number(data.get("pos_sigma_m", 0.0), "sut_model.pos_sigma_m")
    clutter_rate = _number(data.get("clutter_rate_per_frame", 0.0), "sut_model.clutter_rate_per_frame")
    latency = _number(data.get("latency_s", 0.0), "sut_model.latency_s")
    if sigma < 0.0 or clutter_rate < 0.0 or latency < 0.0:
        raise SceneSpecError("'sut_model' sigma, clutter rate and latency must be >= 0.")
    return PerturbationModel(
        pos_sigma_m=sigma,
        dropout_per_frame_prob=_probability(data, "dropout_per_frame_prob"),
        clutter_rate_per_frame=clutter_rate,
        latency_s=latency,
        fragmentation_prob=_probability(data, "fragmentation_prob"),
        duplicate_prob=_probability(data, "duplicate_prob"),
        misclass_prob=_probability(data, "misclass_prob"),
        existence_conf_model=conf_model,
    )


def parse_scene_spec(data: Any) -> SceneSpec:
    """
    Validates a scene-spec document.

    Raises SceneSpecError on unknown keys, wrong types or out-of-range values.
    """
    if not isinstance(data, dict):
        raise SceneSpecError("Scene spec must be a JSON object.")
    _unknown(data, SPEC_KEYS, "spec")
    seed = data.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise SceneSpecError(f"'seed' must be a non-negative integer, got {seed!r}.")
    duration = _number(data.get("duration_s"), "duration_s")
    rate = _number(data.get("rate_hz"), "rate_hz")
    noise = _number(data.get("res_noise_sigma_m", 0.0), "res_noise_sigma_m")
    if duration <= 0.0 or rate <= 0.0:
        raise SceneSpecError("'duration_s' and 'rate_hz' must be > 0.")
    if noise < 0.0:
        raise SceneSpecError("'res_noise_sigma_m' must be >= 0.")
    tracks = data.get("gt_tracks", [])
    if not isinstance(tracks, list):
        raise SceneSpecError("'gt_tracks' must be a list.")
    parsed = tuple(_parse_track(t, f"gt_tracks[{i}]") for i, t in enumerate(tracks))
    ids = [t.track_id for t in parsed]
    if len(set(ids)) != len(ids):
        raise SceneSpecError("'gt_tracks' ids must be unique.")
    overlay = data.get("config", {})
    if not isinstance(overlay, dict):
        raise SceneSpecError("'config' must be an object.")
    return SceneSpec(
        seed=seed,
        duration_s=duration,
        rate_hz=rate,
        gt_tracks=parsed,
        res_noise=noise,
        sut_model=_parse_model(data.get("sut_model")),
        config=overlay,
    )


def load_scene_spec(spec_path: Path) -> SceneSpec:
    """
    Loads a scene spec from JSON.

    Raises FileNotFoundError if the file does not exist and SceneSpecError if
    it is malformed.
    """
    if not spec_path.exists():
        raise FileNotFoundError(f"Scene spec not found: {spec_path}")
    try:
        with spec_path.open(encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise SceneSpecError(f"Malformed scene spec {spec_path}: {e}") from e
    return parse_scene_spec(data)


def scene_spec_to_dict(spec: SceneSpec) -> Dict[str, Any]:
    tracks: List[Dict[str, Any]] = []
    for t in spec.gt_tracks:
        if t.waypoints:
            tracks.append({"id": t.track_id, "cls": t.cls, "waypoints": [list(w) for w in t.waypoints]})
        else:
            tracks.append({"id": t.track_id, "cls": t.cls, "start": list(t.start), "velocity": list(t.velocity),
                           "t_start": t.t_start, "t_end": t.t_end})
    model = spec.sut_model
    return {
        "seed": spec.seed,
        "duration_s": spec.duration_s,
        "rate_hz": spec.rate_hz,
        "res_noise_sigma_m": spec.res_noise,
        "gt_tracks": tracks,
        "sut_model": {
            "pos_sigma_m": model.pos_sigma_m,
            "dropout_per_frame_prob": model.dropout_per_frame_prob,
            "clutter_rate_per_frame": model.clutter_rate_per_frame,
            "latency_s": model.latency_s,
            "fragmentation_prob": model.fragmentation_prob,
            "duplicate_prob": model.duplicate_prob,
            "misclass_prob": model.misclass_prob,
            "existence_conf_model": None if model.existence_conf_model is None else list(model.existence_conf_model),
        },
        "config": dict(spec.config),
    }


# ---------------------------------------------------------------------------
# Paired config
# ---------------------------------------------------------------------------

def latency_frames(spec: SceneSpec) -> int:
    """SUT latency rounded to whole frames."""
    return int(round(spec.sut_model.latency_s * spec.rate_hz))


def scene_config(spec: SceneSpec, base: Optional[OracleConfig] = None) -> OracleConfig:
    """
    The oracle config paired with *spec*: *base* (the defaults when omitted)
    with the spec's overlay merged in. A non-zero latency switches to the
    availability basis with the frame-rounded latency.

    Raises SceneSpecError when the config leaves the settings the bookkeeping covers.
    """
    try:
        cfg = merge_config(base or OracleConfig(), spec.config)
        frames = latency_frames(spec)
        if frames > 0:
            cfg = merge_config(cfg, {"temporal": {"basis": TimestampBasis.AVAILABILITY.value,
                                                  "sut_latency_s": frames / spec.rate_hz}})
    except ConfigError as e:
        raise SceneSpecError(f"Scene config overlay is invalid: {e}") from e

    if cfg.distance.metric != Metric.CENTER2D:
        raise SceneSpecError("Synthetic scenes support the center2d metric only.")
    if cfg.assignment.lifetime == Lifetime.TRACK:
        raise SceneSpecError("Synthetic bookkeeping covers the frame and subsequence lifetimes.")
    if cfg.occlusion.policy == OcclusionPolicy.EXCLUDE_IF_OCCLUDED:
        raise SceneSpecError("Synthetic scenes cannot exclude occluded objects.")
    if cfg.aov.prob_map is not None:
        raise SceneSpecError("Synthetic scenes carry no detection-probability map.")
    if cfg.alignment.transform.kind != TransformKind.IDENTITY:
        raise SceneSpecError("Synthetic recordings share one frame; the transform must be identity.")
    return cfg


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

State = Tuple[float, float, float, float]


def gt_state(track: GtTrackSpec, t: float) -> Optional[State]:
    """(x, y, vx, vy) of the object at *t*, or None outside its lifetime."""
    if track.waypoints:
        ts = [w[0] for w in track.waypoints]
        if t < ts[0] - EPS or t > ts[-1] + EPS:
            return None
        xs = [w[1] for w in track.waypoints]
        ys = [w[2] for w in track.waypoints]
        if len(ts) == 1:
            return (xs[0], ys[0], 0.0, 0.0)
        seg = min(max(int(np.searchsorted(ts, t, side="right")) - 1, 0), len(ts) - 2)
        span = ts[seg + 1] - ts[seg]
        vx = (xs[seg + 1] - xs[seg]) / span
        vy = (ys[seg + 1] - ys[seg]) / span
        return (float(np.interp(t, ts, xs)), float(np.interp(t, ts, ys)), vx, vy)
    if t < track.t_start - EPS or (track.t_end is not None and t > track.t_end + EPS):
        return None
    dt = t - track.t_start
    return (track.start[0] + track.velocity[0] * dt, track.start[1] + track.velocity[1] * dt,
            track.velocity[0], track.velocity[1])


def frame_times(spec: SceneSpec) -> List[float]:
    count = int(math.floor(spec.duration_s * spec.rate_hz + EPS)) + 1
    return [k / spec.rate_hz for k in range(count)]


def _clip(offset: np.ndarray, limit: float) -> Tuple[float, float]:
    norm = float(np.hypot(offset[0], offset[1]))
    if norm > limit > 0.0:
        offset = offset * (limit / norm)
    elif limit <= 0.0:
        return (0.0, 0.0)
    return (float(offset[0]), float(offset[1]))


def _observation(track_id: str, cls: str, t: float, x: float, y: float, vx: float, vy: float,
                 extent_cls: str, conf: Optional[float] = None) -> ObjectObservation:
    length, width = CLASS_EXTENTS.get(extent_cls, DEFAULT_EXTENT)
    yaw = math.atan2(vy, vx) if math.hypot(vx, vy) > EPS else 0.0
    return ObjectObservation(timestamp=t, track_id=track_id, class_label=cls, x=x, y=y,
                             length=length, width=width, yaw=yaw, vx=vx, vy=vy, existence_conf=conf)


def _check_envelope(spec: SceneSpec, states: List[List[Optional[State]]], threshold: float, latency_s: float) -> None:
    for k in range(len(states[0]) if states else 0):
        alive = [(g, s) for g, row in enumerate(states) if (s := row[k]) is not None]
        for a in range(len(alive)):
            g, s = alive[a]
            if math.hypot(s[2], s[3]) * latency_s > LAG_LIMIT * threshold + EPS:
                raise SceneSpecError(
                    f"Track '{spec.gt_tracks[g].track_id}' moves {math.hypot(s[2], s[3]) * latency_s:.3f} m during the "
                    f"SUT latency, more than {LAG_LIMIT} x threshold")
            for b in range(a + 1, len(alive)):
                h, q = alive[b]
                gap = math.hypot(s[0] - q[0], s[1] - q[1])
                if gap < GT_SPACING * threshold - EPS:
                    raise SceneSpecError(
                        f"Tracks '{spec.gt_tracks[g].track_id}' and '{spec.gt_tracks[h].track_id}' come "
                        f"{gap:.2f} m close, less than {GT_SPACING} x threshold ({GT_SPACING * threshold:.2f} m)")


def _inside(obs: ObjectObservation, cfg: OracleConfig) -> bool:
    return aov_reason(obs, cfg.aov, cfg.probabilistic.unreliable_policy) is None and area_check(obs, cfg.areas) is None


def _conf(model: PerturbationModel, draw: float, real: bool) -> Optional[float]:
    if model.existence_conf_model is None:
        return None
    mean = model.existence_conf_model[0 if real else 1]
    return float(min(1.0, max(0.0, mean + CONF_SPREAD * draw)))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Detection:
    obs: ObjectObservation
    gt: Optional[int]
    primary: bool


def _clutter_box(spec: SceneSpec, states: List[List[Optional[State]]], threshold: float) -> Tuple[float, float, float, float]:
    xs = [s[0] for row in states for s in row if s is not None]
    ys = [s[1] for row in states for s in row if s is not None]
    pad = GT_SPACING * threshold + 10.0
    if not xs:
        return (-pad, pad, -pad, pad)
    return (min(xs) - pad, max(xs) + pad, min(ys) - pad, max(ys) + pad)


def generate(spec: SceneSpec, base: Optional[OracleConfig] = None) -> Tuple[Recording, Recording, VerdictLedger]:
    """
    Builds the ReS and SUT recordings of *spec* and the ledger the paired config
    must produce on them. Every injected perturbation is booked as it is drawn:
    dropped frames and latency head frames become FNs, detections after their
    object left the reference become SUT overhangs, clutter and surplus
    duplicates FPs, low-confidence detections below_conf exclusions.

    Raises SceneSpecError when the spec leaves the unambiguous-match envelope.
    """
    cfg = scene_config(spec, base)
    threshold = cfg.effective_threshold
    model = spec.sut_model
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    times = frame_times(spec)
    n_frames = len(times)
    m = latency_frames(spec)
    shift = m / spec.rate_hz if m > 0 else 0.0
    states = [[gt_state(track, t) for t in times] for track in spec.gt_tracks]
    _check_envelope(spec, states, threshold, shift)
    clip = NOISE_CLIP * threshold

    # ReS pass
    res_obs: Dict[Tuple[int, int], ObjectObservation] = {}
    for k, t in enumerate(times):
        for g, track in enumerate(spec.gt_tracks):
            s = states[g][k]
            if s is None:
                continue
            dx, dy = _clip(rng.standard_normal(2) * spec.res_noise, clip)
            obs = _observation(track.track_id, track.cls, t, s[0] + dx, s[1] + dy, s[2], s[3], track.cls)
            if not _inside(obs, cfg):
                raise SceneSpecError(f"Track '{track.track_id}' leaves the scene geometry at t={t:.3f}")
            res_obs[(g, k)] = obs

    # SUT pass
    box = _clutter_box(spec, states, threshold)
    labels = sorted(set(LABELS) | {t.cls for t in spec.gt_tracks})
    if cfg.areas.class_allow is not None:
        labels = sorted(cfg.areas.class_allow)
    unrestricted = replace(cfg, areas=replace(cfg.areas, class_allow=None, max_range_by_class={}))
    fragment = [0] * len(spec.gt_tracks)
    detections: List[List[_Detection]] = []
    for k, t in enumerate(times):
        landed: List[_Detection] = []
        for g, track in enumerate(spec.gt_tracks):
            s = states[g][k]
            if s is None:
                continue
            noise = rng.standard_normal(2)
            u = rng.random(6)
            dup_dist = rng.random()
            conf_draws = rng.standard_normal(2)
            if u[1] < model.fragmentation_prob:
                fragment[g] += 1
            if u[0] < model.dropout_per_frame_prob:
                continue
            label = track.cls
            others = [c for c in labels if c != track.cls]
            if u[2] < model.misclass_prob and others:
                label = others[min(int(u[3] * len(others)), len(others) - 1)]
            dx, dy = _clip(noise * model.pos_sigma_m, clip)
            primary = _observation(f"{track.track_id}.s{fragment[g]}", label, t, s[0] + dx, s[1] + dy,
                                   s[2], s[3], track.cls, _conf(model, float(conf_draws[0]), True))
            landed.append(_Detection(primary, g, True))
            if u[4] < model.duplicate_prob:
                anchor = res_obs.get((g, k + m), primary)
                dist = threshold * (DUPLICATE_RANGE[0] + (DUPLICATE_RANGE[1] - DUPLICATE_RANGE[0]) * dup_dist)
                bearing = 2.0 * math.pi * float(u[5])
                dup = _observation(f"{track.track_id}.dup", label, t, anchor.x + dist * math.cos(bearing),
                                   anchor.y + dist * math.sin(bearing), s[2], s[3], track.cls,
                                   _conf(model, float(conf_draws[1]), True))
                landed.append(_Detection(dup, g, False))
        for d in landed:
            if not _inside(d.obs, cfg):
                raise SceneSpecError(f"SUT detection '{d.obs.track_id}' leaves the scene geometry at t={t:.3f}")

        references = [o for (g, j), o in res_obs.items() if j == k + m]
        for i in range(int(rng.poisson(model.clutter_rate_per_frame))):
            spot: Optional[Tuple[float, float]] = None
            for _ in range(CLUTTER_TRIES):
                ux, uy = rng.random(2)
                x = box[0] + float(ux) * (box[1] - box[0])
                y = box[2] + float(uy) * (box[3] - box[2])
                clear = all(math.hypot(x - r.x, y - r.y) >= CLUTTER_CLEARANCE * threshold for r in references)
                if spot is None and clear:
                    trial = _observation("clutter_trial", labels[0], t, x, y, 0.0, 0.0, labels[0])
                    if _inside(trial, unrestricted):
                        spot = (x, y)
            cls = labels[min(int(rng.random() * len(labels)), len(labels) - 1)]
            conf = _conf(model, float(rng.standard_normal()), False)
            if spot is None:
                logger.debug("No clear spot for clutter %d at t=%.3f, skipped", i, t)
                continue
            obs = _observation(f"clutter.{k}.{i}", cls, t, spot[0], spot[1], 0.0, 0.0, cls, conf)
            if _inside(obs, cfg):
                landed.append(_Detection(obs, None, False))
        detections.append(landed)

    res = build_recording(Role.RES, res_obs.values(), {"source": "synth", "seed": spec.seed})
    sut = build_recording(Role.SUT, (d.obs for row in detections for d in row),
                          {"source": "synth", "seed": spec.seed}, times)
    expected = _book(spec, cfg, times, shift, m, res_obs, detections)
    logger.info("Generated scene seed=%d: %d ReS and %d SUT observations", spec.seed,
                res.n_observations, sut.n_observations)
    return res, sut, expected


# ---------------------------------------------------------------------------
# Bookkeeping
# ---------------------------------------------------------------------------

def _book_overhang(
    obs: ObjectObservation, t: float, role: Role, side: str, offset: float, cfg: OracleConfig,
    events: List[MatchEvent], exclusions: List[ExclusionTag],
) -> None:
    """Books one overhang frame at time *t* under the temporal overhang policy."""
    policy = cfg.temporal
    discard = policy.overhang == OverhangPolicy.DISCARD or (
        policy.overhang == OverhangPolicy.THRESHOLD and policy.dt_max_s is not None and offset < policy.dt_max_s)
    detail = f"{side} overhang {offset:.3f} s"
    if discard:
        exclusions.append(ExclusionTag(
            reason=ExclusionReason.OVERHANG_DISCARDED, stage=ExclusionStage.POST_MATCHING, role=role,
            track_id=obs.track_id, timestamp=t, class_label=obs.class_label, x=obs.x, y=obs.y,
            detail=detail))
    elif role == Role.RES:
        events.append(MatchEvent(timestamp=t, kind=EventKind.FN, res_id=obs.track_id,
                                 res_class=obs.class_label, flags=frozenset({EventFlag.OVERHANG}), detail=detail))
    else:
        events.append(MatchEvent(timestamp=t, kind=EventKind.FP, sut_id=obs.track_id,
                                 sut_class=obs.class_label, flags=frozenset({EventFlag.OVERHANG}), detail=detail))


def _book(
    spec: SceneSpec,
    cfg: OracleConfig,
    times: Sequence[float],
    shift: float,
    m: int,
    res_obs: Mapping[Tuple[int, int], ObjectObservation],
    detections: Sequence[Sequence[_Detection]],
) -> VerdictLedger:
    """
    The expected ledger, derived from what was injected. Distinct objects are
    far enough apart that every detection can only match its own object.
    """
    assignment = cfg.assignment
    subsequence = assignment.lifetime == Lifetime.SUBSEQUENCE
    shared = assignment.cardinality in (Cardinality.N_ONE, Cardinality.N_N)
    gate = cfg.distance.class_gate
    tau = cfg.probabilistic.tau_exist
    starts: Dict[int, int] = {}
    for (g, j) in sorted(res_obs):
        starts.setdefault(g, j)

    events: List[MatchEvent] = []
    exclusions: List[ExclusionTag] = []
    last_partner: Dict[str, str] = {}
    last_tp: Dict[str, Tuple[str, int]] = {}
    res_times: Dict[str, List[float]] = defaultdict(list)
    partners: Dict[str, Set[str]] = defaultdict(set)
    unclaimed: List[Tuple[ObjectObservation, float]] = []

    for k, t in enumerate(times):
        grid_t = t + shift
        passing: List[_Detection] = []
        for d in detections[k]:
            conf = 1.0 if d.obs.existence_conf is None else d.obs.existence_conf
            if conf < tau:
                exclusions.append(ExclusionTag(
                    reason=ExclusionReason.BELOW_CONF, stage=ExclusionStage.PRE_MATCHING, role=Role.SUT,
                    track_id=d.obs.track_id, timestamp=grid_t, class_label=d.obs.class_label,
                    x=d.obs.x, y=d.obs.y, detail=f"existence {conf:.3f} < tau {tau:.3f}"))
            else:
                passing.append(d)

        claimed: List[_Detection] = []
        for g, track in enumerate(spec.gt_tracks):
            ref = res_obs.get((g, k + m))
            if ref is None:
                continue
            res_times[ref.track_id].append(grid_t)
            cands = [d for d in passing if d.gt == g and (not gate or d.obs.class_label == ref.class_label)]
            if not cands:
                events.append(MatchEvent(timestamp=grid_t, kind=EventKind.FN, res_id=ref.track_id,
                                         res_class=ref.class_label))
                continue
            chosen = sorted(cands, key=lambda d: d.obs.track_id)
            if not shared:
                pick = None
                held = last_tp.get(ref.track_id)
                if subsequence and assignment.sticky and held is not None and k - held[1] - 1 <= assignment.max_gap_frames:
                    pick = next((d for d in cands if d.obs.track_id == held[0]), None)
                if pick is None:
                    pick = min(cands, key=lambda d: (math.hypot(d.obs.x - ref.x, d.obs.y - ref.y), d.obs.track_id))
                chosen = [pick]
            for d in chosen:
                claimed.append(d)
                partners[d.obs.track_id].add(ref.track_id)
                events.append(MatchEvent(timestamp=grid_t, kind=EventKind.TP, sut_id=d.obs.track_id,
                                         res_id=ref.track_id, sut_class=d.obs.class_label,
                                         res_class=ref.class_label,
                                         delay_s=shift if cfg.temporal.basis == TimestampBasis.AVAILABILITY else None))
            if subsequence:
                current = sorted(d.obs.track_id for d in chosen)
                prev = last_partner.get(ref.track_id)
                if prev is not None and prev not in current:
                    events.append(MatchEvent(timestamp=grid_t, kind=EventKind.ID_SWITCH, sut_id=current[0],
                                             res_id=ref.track_id, prev_sut_id=prev))
                partner = prev if prev in current else current[0]
                last_partner[ref.track_id] = partner
                last_tp[ref.track_id] = (partner, k)

        unclaimed.extend((d.obs, grid_t) for d in passing if d not in claimed)

    # SUT frames after the end of the partner reference
    for obs, grid_t in unclaimed:
        ends = [max(res_times[r]) for r in partners.get(obs.track_id, ())]
        if ends and grid_t > max(ends) + TIME_EPS:
            _book_overhang(obs, grid_t, Role.SUT, "tail", grid_t - max(ends), cfg, events, exclusions)
        else:
            events.append(MatchEvent(timestamp=grid_t, kind=EventKind.FP, sut_id=obs.track_id,
                                     sut_class=obs.class_label))

    events = classify_mismatch(events, cfg.probabilistic.misclassification)

    # ReS frames before the first grid time
    first = times[0] + shift
    for (g, j), ref in sorted(res_obs.items()):
        if j >= m:
            continue
        _book_overhang(ref, ref.timestamp, Role.RES, "lead", first - ref.timestamp, cfg, events, exclusions)

    events = apply_gap_policy(events, assignment)
    if cfg.temporal.basis == TimestampBasis.AVAILABILITY:
        head: Dict[str, float] = {spec.gt_tracks[g].track_id: times[j] + shift for g, j in starts.items()}
        events = [e.with_flag(EventFlag.LATENCY)
                  if e.kind == EventKind.FN and e.timestamp < head.get(e.res_id or "", -math.inf) else e
                  for e in events]

    context = LedgerContext(
        sut_input=sum(len(row) for row in detections),
        res_input=len(res_obs),
        frame_period_s=median_period([t + shift for t in times]),
        res_track_starts={spec.gt_tracks[g].track_id: times[j] for g, j in sorted(starts.items())},
        basis=cfg.temporal.basis.value,
        tool_version=TOOL_VERSION,
        notes=(N_N_NOTE,) if assignment.cardinality == Cardinality.N_N else (),
    )
    return VerdictLedger(
        events=tuple(sorted(events, key=lambda e: e.sort_key)),
        exclusions=tuple(sorted(exclusions, key=exclusion_sort_key)),
        config_echo=cfg,
        context=context,
    )


# ---------------------------------------------------------------------------
# Random specs and batches
# ---------------------------------------------------------------------------

def random_scene_spec(seed: int, graded_confidence: bool = False) -> SceneSpec:
    """
    A random spec inside the documented parameter ranges: one object per lane,
    lanes 3.5 thresholds apart, motion along x only, default 2 m threshold.
    *graded_confidence* forces an existence-confidence model for sweeps.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    threshold = OracleConfig().distance.threshold
    rate = float(rng.choice([5.0, 10.0, 12.5, 20.0]))
    duration = round(float(rng.uniform(2.0, 6.0)), 1)
    tracks: List[GtTrackSpec] = []
    max_speed = 0.0
    for g in range(int(rng.integers(1, 5))):
        vx = round(float(rng.uniform(-5.0, 5.0)), 2)
        max_speed = max(max_speed, abs(vx))
        t_start = round(float(rng.uniform(0.0, duration / 2.0)), 1)
        t_end = None if rng.random() < 0.5 else round(float(rng.uniform(t_start + 0.5, duration)), 1)
        tracks.append(GtTrackSpec(
            track_id=f"obj{g}", cls=str(rng.choice(list(LABELS))),
            start=(round(float(rng.uniform(-20.0, 20.0)), 2), g * 3.5 * threshold),
            velocity=(vx, 0.0), t_start=t_start, t_end=t_end,
        ))
    frames = int(rng.integers(0, 3))
    latency = frames / rate if max_speed * frames / rate <= LAG_LIMIT * threshold else 0.0
    conf_model = (0.8, 0.3) if graded_confidence or rng.random() < 0.5 else None
    overlay: Dict[str, Any] = {
        "assignment": {
            "algorithm": str(rng.choice(["greedy", "hungarian"])),
            "cardinality": str(rng.choice(["one_one", "n_one", "one_n", "n_n"])),
            "lifetime": str(rng.choice(["frame", "subsequence"])),
        },
        "probabilistic": {"tau_exist": 0.5 if conf_model is not None and rng.random() < 0.5 else 0.0},
    }
    if overlay["assignment"]["lifetime"] == "subsequence" and rng.random() < 0.5:
        overlay["assignment"]["sticky"] = True
    return SceneSpec(
        seed=seed,
        duration_s=duration,
        rate_hz=rate,
        gt_tracks=tuple(tracks),
        res_noise=round(float(rng.uniform(0.0, 0.3)), 3),
        sut_model=PerturbationModel(
            pos_sigma_m=round(float(rng.uniform(0.0, 0.5)), 3),
            dropout_per_frame_prob=round(float(rng.uniform(0.0, 0.3)), 3),
            clutter_rate_per_frame=round(float(rng.uniform(0.0, 1.0)), 3),
            latency_s=latency,
            fragmentation_prob=round(float(rng.uniform(0.0, 0.1)), 3),
            duplicate_prob=round(float(rng.uniform(0.0, 0.2)), 3),
            misclass_prob=round(float(rng.uniform(0.0, 0.1)), 3),
            existence_conf_model=conf_model,
        ),
        config=overlay,
    )


def generate_many(specs: Sequence[SceneSpec], max_threads: int = 0) -> List[Tuple[Recording, Recording, VerdictLedger]]:
    """Generates independent scenes in a thread pool; the result order follows *specs*."""
    if not specs:
        return []
    with ThreadPoolExecutor(max_workers=resolve_max_threads(max_threads, len(specs))) as pool:
        return list(pool.map(generate, specs))


def write_synth_outputs(spec: SceneSpec, out_dir: Path) -> Dict[str, Path]:
    """
    Writes res.jsonl, sut.jsonl, expected.json (structured report of the expected
    ledger) and config.json (the paired config) into *out_dir*.
    """
    from report import emit_report, write_report

    res, sut, expected = generate(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / name for name in ("res.jsonl", "sut.jsonl", "expected.json", "config.json")}
    save_recording(res, paths["res.jsonl"])
    save_recording(sut, paths["sut.jsonl"])
    write_report(emit_report(expected, aggregate(expected)), paths["expected.json"])
    dump_config(expected.config_echo, paths["config.json"])
    return paths
