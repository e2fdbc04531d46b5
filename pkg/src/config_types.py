from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

Point = Tuple[float, float]

FILTER_ORDER: Tuple[str, ...] = ("aov", "occlusion", "areas", "confidence")
"""Fixed order in which the per-frame filters run. Echoed into every config."""


# ---------------------------------------------------------------------------
# Policy enums
# ---------------------------------------------------------------------------

class OcclusionPolicy(str, Enum):
    IGNORE = "ignore"
    EXCLUDE_IF_OCCLUDED = "exclude_if_occluded"
    TEST_ANYWAY = "test_anyway"


class OcclusionTargets(str, Enum):
    RES = "res"
    BOTH = "both"


class AreaStage(str, Enum):
    PRE_REFERENCE = "pre_reference"
    PRE_MATCHING = "pre_matching"
    POST_MATCHING = "post_matching"


class TransformKind(str, Enum):
    IDENTITY = "identity"
    RIGID2D = "rigid2d"
    POLY3 = "poly3"


class Metric(str, Enum):
    CENTER2D = "center2d"
    ONE_MINUS_IOU = "one_minus_iou"
    MAHALANOBIS = "mahalanobis"
    WASSERSTEIN2 = "wasserstein2"


class YawPeriod(str, Enum):
    PI = "pi"
    TWO_PI = "two_pi"


class ClassPenalty(str, Enum):
    NONE = "none"
    NLL = "nll"
    BRIER = "brier"


class Algorithm(str, Enum):
    GREEDY = "greedy"
    HUNGARIAN = "hungarian"


class Cardinality(str, Enum):
    """Allowed matches per frame, written SUT:ReS."""
    ONE_ONE = "one_one"
    ONE_N = "one_n"
    N_ONE = "n_one"
    N_N = "n_n"


class Lifetime(str, Enum):
    FRAME = "frame"
    TRACK = "track"
    SUBSEQUENCE = "subsequence"


class BorderPolicy(str, Enum):
    HARD_CUT = "hard_cut"
    FUZZY_RESCUE = "fuzzy_rescue"


class TimestampBasis(str, Enum):
    ACQUISITION = "acquisition"
    AVAILABILITY = "availability"


class OverhangPolicy(str, Enum):
    DISCARD = "discard"
    FN_FP = "fn_fp"
    THRESHOLD = "threshold"


class ClassPolicy(str, Enum):
    NONE = "none"
    ARGMAX = "argmax"


class MismatchPolicy(str, Enum):
    TP_WRONG_CLASS = "tp_wrong_class"
    FP_PLUS_FN = "fp_plus_fn"


class UnreliablePolicy(str, Enum):
    ANNEX = "annex"
    INCLUDE = "include"


# ---------------------------------------------------------------------------
# Geometry records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Polygon2D:
    """
    Simple polygon in the SUT frame, implicitly closed.

    vertices — ordered (x, y) corners in meters, at least three
    """
    vertices: Tuple[Point, ...]


@dataclass(frozen=True)
class Sector:
    """
    Circular sector field of view.

    origin  — apex of the sector in meters
    heading — direction of the sector's bisector in radians
    range_m — maximum radial distance
    fov_rad — full opening angle in (0, 2π]
    """
    origin: Point
    range_m: float
    fov_rad: float
    heading: float = 0.0


Region = Union[Polygon2D, Sector]


@dataclass(frozen=True)
class ProbCurve:
    """Piecewise-linear detection probability over range from *origin*."""
    origin: Point
    points: Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class Transform:
    """
    ReS-to-SUT coordinate mapping.

    kind   — identity, rigid2d or poly3
    tx, ty — translation for rigid2d
    theta  — rotation for rigid2d
    cx, cy — poly3 coefficients over [1, x, y, x², xy, y², x³, x²y, xy², y³]
    """
    kind: TransformKind = TransformKind.IDENTITY
    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    cx: Tuple[float, ...] = ()
    cy: Tuple[float, ...] = ()


# ---------------------------------------------------------------------------
# Config sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbMap:
    res: Optional[ProbCurve] = None
    sut: Optional[ProbCurve] = None


@dataclass(frozen=True)
class AovSpec:
    """
    Fields of view of both systems and the probabilistic detection map.

    res_aov / sut_aov       — polygon or sector; None means unbounded
    exclude_outside_res_aov — drop observations the ReS cannot see
    exclude_outside_sut_aov — drop observations beyond the SUT's hardware reach
    prob_map                — optional detection probability curves per system
    p_min                   — observations below this detection probability go to the annex
    """
    res_aov: Optional[Region] = None
    sut_aov: Optional[Region] = None
    exclude_outside_res_aov: bool = True
    exclude_outside_sut_aov: bool = False
    prob_map: Optional[ProbMap] = None
    p_min: float = 0.0


@dataclass(frozen=True)
class OcclusionConfig:
    policy: OcclusionPolicy = OcclusionPolicy.IGNORE
    theta: float = 1.0
    viewer: Point = (0.0, 0.0)
    apply_to: OcclusionTargets = OcclusionTargets.BOTH
    visibility_bins: Tuple[float, ...] = (0.4, 0.6, 0.8)


@dataclass(frozen=True)
class LabelingMeta:
    """Documentation of how the reference labels came to be. Never read by the algorithms."""
    policy_ref: str = ""
    process: str = ""
    quality_notes: str = ""
    noise_sigma_m: Optional[float] = None
    accuracy_stats: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ResHardware:
    """Documentation of the reference sensor setup. Never read by the algorithms."""
    description: str = ""
    superior_to_sut: str = ""
    properties: Dict[str, Union[str, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class AreaPolicy:
    """
    Relevant and no-test areas.

    include            — polygons to evaluate in; empty means everywhere
    exclude            — no-test polygons; exclude wins over include
    class_allow        — labels to evaluate; None allows all
    max_range_by_class — per-label range limit measured from *range_origin*
    stage              — where the exclusion takes effect
    """
    include: Tuple[Polygon2D, ...] = ()
    exclude: Tuple[Polygon2D, ...] = ()
    class_allow: Optional[Tuple[str, ...]] = None
    max_range_by_class: Dict[str, float] = field(default_factory=dict)
    range_origin: Point = (0.0, 0.0)
    stage: AreaStage = AreaStage.PRE_MATCHING


@dataclass(frozen=True)
class AlignmentConfig:
    transform: Transform = field(default_factory=Transform)
    reported_error_m: float = 0.0
    inflate_threshold: bool = False
    error_sources: str = ""


@dataclass(frozen=True)
class DistanceConfig:
    """
    Cost function and gate.

    metric                 — geometric term
    threshold              — gate on the geometric term, in the metric's unit
    class_gate             — forbid matches between different labels
    class_mismatch_penalty — finite penalty for different labels when not gated
    w_v, w_yaw             — weights of the velocity and heading penalties
    yaw_period             — heading difference taken modulo π or 2π
    class_penalty, w_cls   — NLL or Brier penalty on the SUT class confidences
    """
    metric: Metric = Metric.CENTER2D
    threshold: float = 2.0
    class_gate: bool = True
    class_mismatch_penalty: float = 0.0
    w_v: float = 0.0
    w_yaw: float = 0.0
    yaw_period: YawPeriod = YawPeriod.PI
    class_penalty: ClassPenalty = ClassPenalty.NONE
    w_cls: float = 0.0


@dataclass(frozen=True)
class AssignmentConfig:
    algorithm: Algorithm = Algorithm.HUNGARIAN
    cardinality: Cardinality = Cardinality.ONE_ONE
    lifetime: Lifetime = Lifetime.FRAME
    sticky: bool = False
    max_gap_frames: int = 0
    track_threshold_mean_m: Optional[float] = None


@dataclass(frozen=True)
class CornerCaseConfig:
    border: BorderPolicy = BorderPolicy.HARD_CUT
    margin_m: float = 0.0


@dataclass(frozen=True)
class TemporalPolicy:
    """
    Synchronization, latency and overhang handling.

    basis                — stamp SUT objects at acquisition or availability
    sut_latency_s        — constant latency or a (t, latency) series
    overhang, dt_max_s   — what happens to frames outside the partner's span
    sync_uncertainty_s   — documented clock offset between the recordings
    sync_accuracy_loss_m — documented position error caused by that offset
    inflate_threshold    — add sync_accuracy_loss_m to the distance gate
    """
    basis: TimestampBasis = TimestampBasis.ACQUISITION
    sut_latency_s: Optional[Union[float, Tuple[Tuple[float, float], ...]]] = None
    interp: str = "linear"
    overhang: OverhangPolicy = OverhangPolicy.FN_FP
    dt_max_s: Optional[float] = None
    sync_uncertainty_s: float = 0.0
    sync_accuracy_loss_m: float = 0.0
    inflate_threshold: bool = False


@dataclass(frozen=True)
class ProbabilisticConfig:
    tau_exist: float = 0.0
    class_policy: ClassPolicy = ClassPolicy.NONE
    misclassification: MismatchPolicy = MismatchPolicy.FP_PLUS_FN
    unreliable_policy: UnreliablePolicy = UnreliablePolicy.ANNEX
    sweep_thresholds: Optional[int] = None


@dataclass(frozen=True)
class ThreadConfig:
    max_threads: int = 0


@dataclass(frozen=True)
class OracleConfig:
    """
    The complete oracle definition. Every field carries a value after loading.
    """
    name: str = ""
    notes: Tuple[str, ...] = ()
    filter_order: Tuple[str, ...] = FILTER_ORDER
    aov: AovSpec = field(default_factory=AovSpec)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    labeling_meta: LabelingMeta = field(default_factory=LabelingMeta)
    res_hardware: ResHardware = field(default_factory=ResHardware)
    areas: AreaPolicy = field(default_factory=AreaPolicy)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    distance: DistanceConfig = field(default_factory=DistanceConfig)
    assignment: AssignmentConfig = field(default_factory=AssignmentConfig)
    corner_cases: CornerCaseConfig = field(default_factory=CornerCaseConfig)
    temporal: TemporalPolicy = field(default_factory=TemporalPolicy)
    probabilistic: ProbabilisticConfig = field(default_factory=ProbabilisticConfig)
    threading: ThreadConfig = field(default_factory=ThreadConfig)

    @property
    def effective_threshold(self) -> float:
        """Distance gate after the optional alignment and synchronization inflation."""
        threshold = self.distance.threshold
        if self.alignment.inflate_threshold:
            threshold += self.alignment.reported_error_m
        if self.temporal.inflate_threshold:
            threshold += self.temporal.sync_accuracy_loss_m
        return threshold


SECTION_NAMES: List[str] = [
    "aov", "occlusion", "labeling_meta", "res_hardware", "areas", "alignment",
    "distance", "assignment", "corner_cases", "temporal", "probabilistic", "threading",
]
