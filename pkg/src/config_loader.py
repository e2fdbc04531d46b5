from dataclasses import fields
from pathlib import Path
import copy
import json
import logging
import math
import os
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type, TypeVar, Union

from shapely.geometry import Polygon

from config_types import (
    FILTER_ORDER, SECTION_NAMES,
    Algorithm, AlignmentConfig, AovSpec, AreaPolicy, AreaStage, AssignmentConfig, BorderPolicy,
    Cardinality, ClassPenalty, ClassPolicy, CornerCaseConfig, DistanceConfig, LabelingMeta, Lifetime,
    Metric, MismatchPolicy, OcclusionConfig, OcclusionPolicy, OcclusionTargets, OracleConfig,
    OverhangPolicy, Point, Polygon2D, ProbabilisticConfig, ProbCurve, ProbMap, Region, ResHardware,
    Sector, TemporalPolicy, ThreadConfig, TimestampBasis, Transform, TransformKind, UnreliablePolicy,
    YawPeriod,
)
from custom_types import ConfigParseError, ConfigSchemaError
from utils import canonical_json, sha256_text


logger = logging.getLogger(__name__)

E = TypeVar("E", bound=Enum)

_DEFAULT_BASE_DIR: Path = Path(__file__).parent.resolve()
_base_dir: Path = _DEFAULT_BASE_DIR

POLY3_TERMS = 10


def get_base_dir() -> Path:
    """Returns the current base directory used for resolving polygon file references."""
    return _base_dir


def set_base_dir(path: Path) -> None:
    """Sets the base directory used for resolving polygon file references."""
    global _base_dir
    _base_dir = path.resolve()


def reset_base_dir() -> None:
    """Resets the base directory to the default (src/ directory). Useful for testing."""
    global _base_dir
    _base_dir = _DEFAULT_BASE_DIR


def _resolve_path(path_str: str) -> Path:
    """Resolves *path_str* relative to the current base directory if not absolute."""
    p = Path(path_str)
    if not p.is_absolute():
        p = (_base_dir / p).resolve()
    return p


# ---------------------------------------------------------------------------
# Scalar validators
# ---------------------------------------------------------------------------

def _reject_unknown_keys(data: Mapping[str, Any], allowed: List[str], where: str) -> None:
    """Raises ConfigSchemaError naming every key of *data* not in *allowed*."""
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigSchemaError(f"Unknown key(s) {unknown} in '{where}'. Valid keys: {sorted(allowed)}.")


def _require_mapping(data: Any, where: str) -> Dict[str, Any]:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigSchemaError(f"'{where}' must be an object, got {type(data).__name__}.")
    return data


def _as_float(value: Any, where: str, minimum: Optional[float] = None, maximum: Optional[float] = None,
              exclusive_min: bool = False) -> float:
    """Converts *value* to a finite float within the given bounds."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigSchemaError(f"'{where}' must be a number, got {value!r}.")
    result = float(value)
    if not math.isfinite(result):
        raise ConfigSchemaError(f"'{where}' must be finite, got {value!r}.")
    if minimum is not None:
        if exclusive_min and result <= minimum:
            raise ConfigSchemaError(f"'{where}' must be > {minimum}, got {result}.")
        if not exclusive_min and result < minimum:
            raise ConfigSchemaError(f"'{where}' must be >= {minimum}, got {result}.")
    if maximum is not None and result > maximum:
        raise ConfigSchemaError(f"'{where}' must be <= {maximum}, got {result}.")
    return result


def _as_optional_float(value: Any, where: str, **bounds: Any) -> Optional[float]:
    if value is None:
        return None
    return _as_float(value, where, **bounds)


def _as_int(value: Any, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigSchemaError(f"'{where}' must be an integer, got {value!r}.")
    if value < minimum:
        raise ConfigSchemaError(f"'{where}' must be >= {minimum}, got {value}.")
    return value


def _as_bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigSchemaError(f"'{where}' must be true or false, got {value!r}.")
    return value


def _as_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise ConfigSchemaError(f"'{where}' must be a string, got {value!r}.")
    return value


def _as_choice(enum_cls: Type[E], value: Any, where: str) -> E:
    try:
        return enum_cls(value)
    except ValueError:
        raise ConfigSchemaError(
            f"'{where}' has unknown value {value!r}. Valid values: {[m.value for m in enum_cls]}."
        ) from None


def _as_point(value: Any, where: str) -> Point:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigSchemaError(f"'{where}' must be an [x, y] pair, got {value!r}.")
    return (_as_float(value[0], f"{where}[0]"), _as_float(value[1], f"{where}[1]"))


# ---------------------------------------------------------------------------
# Geometry records
# ---------------------------------------------------------------------------

def _read_polygon_file(ref: Mapping[str, Any], where: str) -> Any:
    _reject_unknown_keys(ref, ["file"], where)
    path = _resolve_path(_as_str(ref["file"], f"{where}.file"))
    if not path.exists():
        raise ConfigSchemaError(f"'{where}' references non-existent polygon file: {path}")
    try:
        with path.open() as f:
            loaded = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigSchemaError(f"'{where}' polygon file {path} is not valid JSON: {e}") from e
    if isinstance(loaded, dict):
        _reject_unknown_keys(loaded, ["vertices"], str(path))
        loaded = loaded.get("vertices")
    return loaded


def _parse_polygon(data: Any, where: str) -> Polygon2D:
    """Parses an inline vertex list or a {"file": path} reference into a simple polygon."""
    if isinstance(data, dict):
        data = _read_polygon_file(data, where)
    if not isinstance(data, list) or len(data) < 3:
        raise ConfigSchemaError(f"'{where}' must list at least 3 vertices.")
    vertices = tuple(_as_point(v, f"{where}[{i}]") for i, v in enumerate(data))
    shape = Polygon(vertices)
    if not shape.is_valid or shape.area <= 0.0:
        raise ConfigSchemaError(f"'{where}' is not a simple polygon with positive area.")
    return Polygon2D(vertices=vertices)


def _parse_sector(data: Any, where: str) -> Sector:
    data = _require_mapping(data, where)
    _reject_unknown_keys(data, ["origin", "heading", "range_m", "fov_rad"], where)
    for key in ("origin", "range_m", "fov_rad"):
        if key not in data:
            raise ConfigSchemaError(f"'{where}' is missing required '{key}' field.")
    return Sector(
        origin=_as_point(data["origin"], f"{where}.origin"),
        heading=_as_float(data.get("heading", 0.0), f"{where}.heading"),
        range_m=_as_float(data["range_m"], f"{where}.range_m", minimum=0.0, exclusive_min=True),
        fov_rad=_as_float(data["fov_rad"], f"{where}.fov_rad", minimum=0.0, maximum=2.0 * math.pi,
                          exclusive_min=True),
    )


def _parse_region(data: Any, where: str) -> Optional[Region]:
    if data is None:
        return None
    data = _require_mapping(data, where)
    if len(data) != 1 or next(iter(data)) not in ("polygon", "sector"):
        raise ConfigSchemaError(f"'{where}' must be null, {{\"polygon\": ...}} or {{\"sector\": ...}}.")
    if "polygon" in data:
        return _parse_polygon(data["polygon"], f"{where}.polygon")
    return _parse_sector(data["sector"], f"{where}.sector")


def _parse_prob_curve(data: Any, where: str) -> Optional[ProbCurve]:
    if data is None:
        return None
    data = _require_mapping(data, where)
    _reject_unknown_keys(data, ["origin", "points"], where)
    raw_points = data.get("points")
    if not isinstance(raw_points, list) or not raw_points:
        raise ConfigSchemaError(f"'{where}.points' must be a non-empty list of [range_m, p] pairs.")
    points: List[Tuple[float, float]] = []
    for i, pair in enumerate(raw_points):
        r, p = _as_point(pair, f"{where}.points[{i}]")
        points.append((_as_float(r, f"{where}.points[{i}][0]", minimum=0.0),
                       _as_float(p, f"{where}.points[{i}][1]", minimum=0.0, maximum=1.0)))
    for (r0, p0), (r1, p1) in zip(points, points[1:]):
        if r1 <= r0:
            raise ConfigSchemaError(f"'{where}.points' ranges must be strictly increasing.")
        if p1 > p0:
            raise ConfigSchemaError(f"'{where}.points' probabilities must be non-increasing in range.")
    return ProbCurve(origin=_as_point(data.get("origin", [0.0, 0.0]), f"{where}.origin"), points=tuple(points))


def _parse_transform(data: Any, where: str) -> Transform:
    data = _require_mapping(data, where)
    kind = _as_choice(TransformKind, data.get("kind", "identity"), f"{where}.kind")
    if kind == TransformKind.IDENTITY:
        _reject_unknown_keys(data, ["kind"], where)
        return Transform()
    if kind == TransformKind.RIGID2D:
        _reject_unknown_keys(data, ["kind", "tx", "ty", "theta"], where)
        return Transform(
            kind=kind,
            tx=_as_float(data.get("tx", 0.0), f"{where}.tx"),
            ty=_as_float(data.get("ty", 0.0), f"{where}.ty"),
            theta=_as_float(data.get("theta", 0.0), f"{where}.theta"),
        )
    _reject_unknown_keys(data, ["kind", "cx", "cy"], where)
    coeffs: Dict[str, Tuple[float, ...]] = {}
    for key in ("cx", "cy"):
        raw = data.get(key)
        if not isinstance(raw, list) or len(raw) != POLY3_TERMS:
            raise ConfigSchemaError(f"'{where}.{key}' must hold exactly {POLY3_TERMS} coefficients.")
        coeffs[key] = tuple(_as_float(c, f"{where}.{key}[{i}]") for i, c in enumerate(raw))
    return Transform(kind=kind, cx=coeffs["cx"], cy=coeffs["cy"])


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

def _field_names(cls: Any) -> List[str]:
    return [f.name for f in fields(cls)]


def _parse_aov(data: Dict[str, Any]) -> AovSpec:
    where = "aov"
    _reject_unknown_keys(data, _field_names(AovSpec), where)
    defaults = AovSpec()
    prob_map: Optional[ProbMap] = None
    if data.get("prob_map") is not None:
        raw = _require_mapping(data["prob_map"], f"{where}.prob_map")
        _reject_unknown_keys(raw, ["res", "sut"], f"{where}.prob_map")
        prob_map = ProbMap(
            res=_parse_prob_curve(raw.get("res"), f"{where}.prob_map.res"),
            sut=_parse_prob_curve(raw.get("sut"), f"{where}.prob_map.sut"),
        )
    return AovSpec(
        res_aov=_parse_region(data.get("res_aov"), f"{where}.res_aov"),
        sut_aov=_parse_region(data.get("sut_aov"), f"{where}.sut_aov"),
        exclude_outside_res_aov=_as_bool(data.get("exclude_outside_res_aov", defaults.exclude_outside_res_aov),
                                         f"{where}.exclude_outside_res_aov"),
        exclude_outside_sut_aov=_as_bool(data.get("exclude_outside_sut_aov", defaults.exclude_outside_sut_aov),
                                         f"{where}.exclude_outside_sut_aov"),
        prob_map=prob_map,
        p_min=_as_float(data.get("p_min", defaults.p_min), f"{where}.p_min", minimum=0.0, maximum=1.0),
    )


def _parse_occlusion(data: Dict[str, Any]) -> OcclusionConfig:
    where = "occlusion"
    _reject_unknown_keys(data, _field_names(OcclusionConfig), where)
    defaults = OcclusionConfig()
    raw_bins = data.get("visibility_bins", list(defaults.visibility_bins))
    if not isinstance(raw_bins, list):
        raise ConfigSchemaError(f"'{where}.visibility_bins' must be a list of numbers.")
    bins = tuple(_as_float(b, f"{where}.visibility_bins[{i}]", minimum=0.0, maximum=1.0, exclusive_min=True)
                 for i, b in enumerate(raw_bins))
    if any(b1 <= b0 for b0, b1 in zip(bins, bins[1:])) or any(b >= 1.0 for b in bins):
        raise ConfigSchemaError(f"'{where}.visibility_bins' must be strictly increasing inside (0, 1).")
    return OcclusionConfig(
        policy=_as_choice(OcclusionPolicy, data.get("policy", defaults.policy.value), f"{where}.policy"),
        theta=_as_float(data.get("theta", defaults.theta), f"{where}.theta", minimum=0.0, maximum=1.0,
                        exclusive_min=True),
        viewer=_as_point(data.get("viewer", list(defaults.viewer)), f"{where}.viewer"),
        apply_to=_as_choice(OcclusionTargets, data.get("apply_to", defaults.apply_to.value), f"{where}.apply_to"),
        visibility_bins=bins,
    )


def _parse_labeling_meta(data: Dict[str, Any]) -> LabelingMeta:
    where = "labeling_meta"
    _reject_unknown_keys(data, _field_names(LabelingMeta), where)
    stats = _require_mapping(data.get("accuracy_stats"), f"{where}.accuracy_stats")
    return LabelingMeta(
        policy_ref=_as_str(data.get("policy_ref", ""), f"{where}.policy_ref"),
        process=_as_str(data.get("process", ""), f"{where}.process"),
        quality_notes=_as_str(data.get("quality_notes", ""), f"{where}.quality_notes"),
        noise_sigma_m=_as_optional_float(data.get("noise_sigma_m"), f"{where}.noise_sigma_m", minimum=0.0),
        accuracy_stats={k: _as_float(v, f"{where}.accuracy_stats.{k}") for k, v in sorted(stats.items())},
    )


def _parse_res_hardware(data: Dict[str, Any]) -> ResHardware:
    where = "res_hardware"
    _reject_unknown_keys(data, _field_names(ResHardware), where)
    props = _require_mapping(data.get("properties"), f"{where}.properties")
    properties: Dict[str, Union[str, float]] = {}
    for key, value in sorted(props.items()):
        properties[key] = value if isinstance(value, str) else _as_float(value, f"{where}.properties.{key}")
    return ResHardware(
        description=_as_str(data.get("description", ""), f"{where}.description"),
        superior_to_sut=_as_str(data.get("superior_to_sut", ""), f"{where}.superior_to_sut"),
        properties=properties,
    )


def _parse_polygon_list(data: Any, where: str) -> Tuple[Polygon2D, ...]:
    if data is None:
        return ()
    if not isinstance(data, list):
        raise ConfigSchemaError(f"'{where}' must be a list of polygons.")
    return tuple(_parse_polygon(p, f"{where}[{i}]") for i, p in enumerate(data))


def _parse_areas(data: Dict[str, Any]) -> AreaPolicy:
    where = "areas"
    _reject_unknown_keys(data, _field_names(AreaPolicy), where)
    class_allow: Optional[Tuple[str, ...]] = None
    if data.get("class_allow") is not None:
        raw_allow = data["class_allow"]
        if not isinstance(raw_allow, list):
            raise ConfigSchemaError(f"'{where}.class_allow' must be a list of labels or null.")
        class_allow = tuple(sorted(_as_str(c, f"{where}.class_allow") for c in raw_allow))
    ranges = _require_mapping(data.get("max_range_by_class"), f"{where}.max_range_by_class")
    return AreaPolicy(
        include=_parse_polygon_list(data.get("include"), f"{where}.include"),
        exclude=_parse_polygon_list(data.get("exclude"), f"{where}.exclude"),
        class_allow=class_allow,
        max_range_by_class={
            k: _as_float(v, f"{where}.max_range_by_class.{k}", minimum=0.0, exclusive_min=True)
            for k, v in sorted(ranges.items())
        },
        range_origin=_as_point(data.get("range_origin", [0.0, 0.0]), f"{where}.range_origin"),
        stage=_as_choice(AreaStage, data.get("stage", AreaStage.PRE_MATCHING.value), f"{where}.stage"),
    )


def _parse_alignment(data: Dict[str, Any]) -> AlignmentConfig:
    where = "alignment"
    _reject_unknown_keys(data, _field_names(AlignmentConfig), where)
    return AlignmentConfig(
        transform=_parse_transform(data.get("transform"), f"{where}.transform"),
        reported_error_m=_as_float(data.get("reported_error_m", 0.0), f"{where}.reported_error_m", minimum=0.0),
        inflate_threshold=_as_bool(data.get("inflate_threshold", False), f"{where}.inflate_threshold"),
        error_sources=_as_str(data.get("error_sources", ""), f"{where}.error_sources"),
    )


def _parse_distance(data: Dict[str, Any]) -> DistanceConfig:
    where = "distance"
    _reject_unknown_keys(data, _field_names(DistanceConfig), where)
    d = DistanceConfig()
    return DistanceConfig(
        metric=_as_choice(Metric, data.get("metric", d.metric.value), f"{where}.metric"),
        threshold=_as_float(data.get("threshold", d.threshold), f"{where}.threshold", minimum=0.0,
                            exclusive_min=True),
        class_gate=_as_bool(data.get("class_gate", d.class_gate), f"{where}.class_gate"),
        class_mismatch_penalty=_as_float(data.get("class_mismatch_penalty", 0.0),
                                         f"{where}.class_mismatch_penalty", minimum=0.0),
        w_v=_as_float(data.get("w_v", 0.0), f"{where}.w_v", minimum=0.0),
        w_yaw=_as_float(data.get("w_yaw", 0.0), f"{where}.w_yaw", minimum=0.0),
        yaw_period=_as_choice(YawPeriod, data.get("yaw_period", d.yaw_period.value), f"{where}.yaw_period"),
        class_penalty=_as_choice(ClassPenalty, data.get("class_penalty", d.class_penalty.value),
                                 f"{where}.class_penalty"),
        w_cls=_as_float(data.get("w_cls", 0.0), f"{where}.w_cls", minimum=0.0),
    )


def _parse_assignment(data: Dict[str, Any]) -> AssignmentConfig:
    where = "assignment"
    _reject_unknown_keys(data, _field_names(AssignmentConfig), where)
    a = AssignmentConfig()
    cfg = AssignmentConfig(
        algorithm=_as_choice(Algorithm, data.get("algorithm", a.algorithm.value), f"{where}.algorithm"),
        cardinality=_as_choice(Cardinality, data.get("cardinality", a.cardinality.value), f"{where}.cardinality"),
        lifetime=_as_choice(Lifetime, data.get("lifetime", a.lifetime.value), f"{where}.lifetime"),
        sticky=_as_bool(data.get("sticky", False), f"{where}.sticky"),
        max_gap_frames=_as_int(data.get("max_gap_frames", 0), f"{where}.max_gap_frames"),
        track_threshold_mean_m=_as_optional_float(data.get("track_threshold_mean_m"),
                                                  f"{where}.track_threshold_mean_m", minimum=0.0,
                                                  exclusive_min=True),
    )
    if cfg.sticky and cfg.lifetime != Lifetime.SUBSEQUENCE:
        raise ConfigSchemaError(f"'{where}.sticky' requires lifetime 'subsequence', got '{cfg.lifetime.value}'.")
    if cfg.lifetime == Lifetime.TRACK and cfg.track_threshold_mean_m is None:
        raise ConfigSchemaError(f"'{where}.track_threshold_mean_m' is required when lifetime is 'track'.")
    if cfg.lifetime != Lifetime.TRACK and cfg.track_threshold_mean_m is not None:
        raise ConfigSchemaError(f"'{where}.track_threshold_mean_m' is only valid with lifetime 'track'.")
    if cfg.cardinality == Cardinality.N_N:
        logger.warning("Cardinality n_n counts every matched pair as one TP; totals may double-count objects.")
    return cfg


def _parse_corner_cases(data: Dict[str, Any]) -> CornerCaseConfig:
    where = "corner_cases"
    _reject_unknown_keys(data, _field_names(CornerCaseConfig), where)
    cfg = CornerCaseConfig(
        border=_as_choice(BorderPolicy, data.get("border", BorderPolicy.HARD_CUT.value), f"{where}.border"),
        margin_m=_as_float(data.get("margin_m", 0.0), f"{where}.margin_m", minimum=0.0),
    )
    if cfg.border == BorderPolicy.FUZZY_RESCUE and cfg.margin_m <= 0.0:
        raise ConfigSchemaError(f"'{where}.margin_m' must be > 0 for border 'fuzzy_rescue'.")
    return cfg


def _parse_latency(value: Any, where: str) -> Optional[Union[float, Tuple[Tuple[float, float], ...]]]:
    if value is None:
        return None
    if isinstance(value, list):
        series = tuple(_as_point(p, f"{where}[{i}]") for i, p in enumerate(value))
        if not series:
            raise ConfigSchemaError(f"'{where}' series must not be empty.")
        if any(b[0] <= a[0] for a, b in zip(series, series[1:])):
            raise ConfigSchemaError(f"'{where}' series times must be strictly increasing.")
        if any(lat < 0.0 for _, lat in series):
            raise ConfigSchemaError(f"'{where}' latencies must be >= 0.")
        return series
    return _as_float(value, where, minimum=0.0)


def _parse_temporal(data: Dict[str, Any]) -> TemporalPolicy:
    where = "temporal"
    _reject_unknown_keys(data, _field_names(TemporalPolicy), where)
    interp = _as_str(data.get("interp", "linear"), f"{where}.interp")
    if interp != "linear":
        raise ConfigSchemaError(f"'{where}.interp' has unknown value {interp!r}. Valid values: ['linear'].")
    cfg = TemporalPolicy(
        basis=_as_choice(TimestampBasis, data.get("basis", TimestampBasis.ACQUISITION.value), f"{where}.basis"),
        sut_latency_s=_parse_latency(data.get("sut_latency_s"), f"{where}.sut_latency_s"),
        interp=interp,
        overhang=_as_choice(OverhangPolicy, data.get("overhang", OverhangPolicy.FN_FP.value), f"{where}.overhang"),
        dt_max_s=_as_optional_float(data.get("dt_max_s"), f"{where}.dt_max_s", minimum=0.0, exclusive_min=True),
        sync_uncertainty_s=_as_float(data.get("sync_uncertainty_s", 0.0), f"{where}.sync_uncertainty_s",
                                     minimum=0.0),
        sync_accuracy_loss_m=_as_float(data.get("sync_accuracy_loss_m", 0.0), f"{where}.sync_accuracy_loss_m",
                                       minimum=0.0),
        inflate_threshold=_as_bool(data.get("inflate_threshold", False), f"{where}.inflate_threshold"),
    )
    if cfg.overhang == OverhangPolicy.THRESHOLD and cfg.dt_max_s is None:
        raise ConfigSchemaError(f"'{where}.dt_max_s' is required when overhang is 'threshold'.")
    return cfg


def _parse_probabilistic(data: Dict[str, Any]) -> ProbabilisticConfig:
    where = "probabilistic"
    _reject_unknown_keys(data, _field_names(ProbabilisticConfig), where)
    sweep = data.get("sweep_thresholds")
    return ProbabilisticConfig(
        tau_exist=_as_float(data.get("tau_exist", 0.0), f"{where}.tau_exist", minimum=0.0, maximum=1.0),
        class_policy=_as_choice(ClassPolicy, data.get("class_policy", ClassPolicy.NONE.value),
                                f"{where}.class_policy"),
        misclassification=_as_choice(MismatchPolicy,
                                     data.get("misclassification", MismatchPolicy.FP_PLUS_FN.value),
                                     f"{where}.misclassification"),
        unreliable_policy=_as_choice(UnreliablePolicy, data.get("unreliable_policy", UnreliablePolicy.ANNEX.value),
                                     f"{where}.unreliable_policy"),
        sweep_thresholds=None if sweep is None else _as_int(sweep, f"{where}.sweep_thresholds", minimum=1),
    )


def _parse_threading(data: Dict[str, Any]) -> ThreadConfig:
    _reject_unknown_keys(data, _field_names(ThreadConfig), "threading")
    max_threads = data.get("max_threads", 0)
    if isinstance(max_threads, bool) or not isinstance(max_threads, int):
        raise ConfigSchemaError(f"'threading.max_threads' must be an integer, got {max_threads!r}.")
    return ThreadConfig(max_threads=max_threads)


def resolve_max_threads(max_threads: int, work_units: int) -> int:
    """
    Caps *max_threads* at max(1, cpu_count - 1) and at *work_units*.

    If *max_threads* is 0 or less, the cap itself is used. Logs a warning if the
    configured value exceeds the cap.
    """
    cpu_cores: int = os.cpu_count() or 1
    cap: int = max(1, cpu_cores - 1)
    if max_threads <= 0:
        chosen = cap
    elif max_threads > cap:
        logger.warning("Configured max_threads %d exceeds logical CPU count %d. Using %d instead.",
                       max_threads, cpu_cores, cap)
        chosen = cap
    else:
        chosen = max_threads
    return max(1, min(chosen, work_units))


_SECTION_PARSERS = {
    "aov": _parse_aov,
    "occlusion": _parse_occlusion,
    "labeling_meta": _parse_labeling_meta,
    "res_hardware": _parse_res_hardware,
    "areas": _parse_areas,
    "alignment": _parse_alignment,
    "distance": _parse_distance,
    "assignment": _parse_assignment,
    "corner_cases": _parse_corner_cases,
    "temporal": _parse_temporal,
    "probabilistic": _parse_probabilistic,
    "threading": _parse_threading,
}


def parse_config(data: Any) -> OracleConfig:
    """
    Validates a raw config document and returns the fully-defaulted OracleConfig.

    Raises ConfigSchemaError on unknown keys, wrong types or out-of-range values.
    """
    data = _require_mapping(data, "config")
    _reject_unknown_keys(data, ["name", "notes", "filter_order"] + SECTION_NAMES, "config")

    notes = data.get("notes", [])
    if not isinstance(notes, list):
        raise ConfigSchemaError("'notes' must be a list of strings.")
    filter_order = data.get("filter_order", list(FILTER_ORDER))
    if not isinstance(filter_order, list) or tuple(filter_order) != FILTER_ORDER:
        raise ConfigSchemaError(f"'filter_order' is fixed to {list(FILTER_ORDER)}, got {filter_order!r}.")

    sections: Dict[str, Any] = {
        name: parser(_require_mapping(data.get(name), name)) for name, parser in _SECTION_PARSERS.items()
    }
    return OracleConfig(
        name=_as_str(data.get("name", ""), "name"),
        notes=tuple(_as_str(n, "notes") for n in notes),
        filter_order=FILTER_ORDER,
        **sections,
    )


def load_config(config_path: Path) -> OracleConfig:
    """
    Loads and validates the JSON config at *config_path*. Polygon file references
    resolve against the config file's directory. An empty document yields the defaults.

    Raises FileNotFoundError if the file does not exist, ConfigParseError if it is
    not valid JSON and ConfigSchemaError if it violates the schema.
    """
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    set_base_dir(config_path.resolve().parent)
    text = config_path.read_text(encoding="utf-8")
    if not text.strip():
        logger.info("Config %s is empty, using documented defaults.", config_path)
        return OracleConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"Malformed config {config_path}: {e}") from e
    cfg = parse_config(data)
    logger.debug("Loaded config '%s' from %s", cfg.name, config_path)
    return cfg


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _region_to_dict(region: Optional[Region]) -> Optional[Dict[str, Any]]:
    if region is None:
        return None
    if isinstance(region, Polygon2D):
        return {"polygon": [list(v) for v in region.vertices]}
    return {"sector": {"origin": list(region.origin), "heading": region.heading,
                       "range_m": region.range_m, "fov_rad": region.fov_rad}}


def _curve_to_dict(curve: Optional[ProbCurve]) -> Optional[Dict[str, Any]]:
    if curve is None:
        return None
    return {"origin": list(curve.origin), "points": [list(p) for p in curve.points]}


def _transform_to_dict(t: Transform) -> Dict[str, Any]:
    if t.kind == TransformKind.IDENTITY:
        return {"kind": t.kind.value}
    if t.kind == TransformKind.RIGID2D:
        return {"kind": t.kind.value, "tx": t.tx, "ty": t.ty, "theta": t.theta}
    return {"kind": t.kind.value, "cx": list(t.cx), "cy": list(t.cy)}


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in sorted(value.items())}
    return value


def config_to_dict(cfg: OracleConfig) -> Dict[str, Any]:
    """Serializes *cfg* into a complete JSON-ready document with no omitted fields."""
    doc: Dict[str, Any] = {
        "name": cfg.name,
        "notes": list(cfg.notes),
        "filter_order": list(cfg.filter_order),
    }
    for section in SECTION_NAMES:
        value = getattr(cfg, section)
        doc[section] = {f.name: _plain(getattr(value, f.name)) for f in fields(value)}

    aov = cfg.aov
    doc["aov"]["res_aov"] = _region_to_dict(aov.res_aov)
    doc["aov"]["sut_aov"] = _region_to_dict(aov.sut_aov)
    doc["aov"]["prob_map"] = None if aov.prob_map is None else {
        "res": _curve_to_dict(aov.prob_map.res), "sut": _curve_to_dict(aov.prob_map.sut)}
    doc["areas"]["include"] = [[list(v) for v in p.vertices] for p in cfg.areas.include]
    doc["areas"]["exclude"] = [[list(v) for v in p.vertices] for p in cfg.areas.exclude]
    doc["alignment"]["transform"] = _transform_to_dict(cfg.alignment.transform)
    return doc


def dump_config(cfg: OracleConfig, path: Path) -> None:
    """Writes the fully-defaulted *cfg* to *path* as indented JSON."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def config_hash(cfg: OracleConfig) -> str:
    """sha256 over the canonical fully-defaulted config, so any default change changes it."""
    return sha256_text(canonical_json(config_to_dict(cfg)))


def _deep_merge(base: Dict[str, Any], overlay: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def merge_config(base: OracleConfig, overlay: Mapping[str, Any]) -> OracleConfig:
    """Returns *base* with the partial document *overlay* merged over it and re-validated."""
    return parse_config(_deep_merge(config_to_dict(base), overlay))
