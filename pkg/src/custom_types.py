from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterator, List, Mapping, Optional, Tuple

from config_types import OracleConfig

Matrix2 = Tuple[Tuple[float, float], Tuple[float, float]]
ObsKey = Tuple[str, float]

TIME_EPS = 1e-9
"""Two timestamps closer than this are the same sample time."""


def time_key(t: float) -> float:
    """Rounds *t* so that equal sample times hash equally."""
    return round(t, 9)


class Role(str, Enum):
    SUT = "SUT"
    RES = "ReS"


# ---------------------------------------------------------------------------
# Observations and recordings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectObservation:
    """
    One object in one frame, bird's-eye view.

    timestamp      — seconds in the shared epoch
    track_id       — opaque id shared by all observations of a track
    class_label    — object class
    x, y           — center in meters
    length, width  — footprint extent in meters
    yaw            — heading in radians
    vx, vy         — velocity in meters/second
    pos_cov        — optional 2×2 position covariance in meters²
    existence_conf — optional existence confidence in [0, 1]
    class_confs    — optional class → confidence map
    interpolated   — produced by resampling, never serialized
    """
    timestamp: float
    track_id: str
    class_label: str
    x: float
    y: float
    length: float
    width: float
    yaw: float
    vx: float = 0.0
    vy: float = 0.0
    pos_cov: Optional[Matrix2] = None
    existence_conf: Optional[float] = None
    class_confs: Optional[Mapping[str, float]] = None
    interpolated: bool = False

    @property
    def key(self) -> ObsKey:
        return (self.track_id, time_key(self.timestamp))

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)

    def moved(self, **changes: Any) -> "ObjectObservation":
        return replace(self, **changes)


@dataclass(frozen=True)
class Track:
    """
    Time-ordered observations sharing one id.

    track_id     — the shared id
    observations — strictly increasing in timestamp
    """
    track_id: str
    observations: Tuple[ObjectObservation, ...]

    @property
    def start(self) -> float:
        return self.observations[0].timestamp

    @property
    def end(self) -> float:
        return self.observations[-1].timestamp

    @property
    def timestamps(self) -> List[float]:
        return [o.timestamp for o in self.observations]


@dataclass(frozen=True)
class Recording:
    """
    Full output of one system.

    role        — SUT or ReS
    tracks      — all tracks, sorted by id
    sensor_meta — free-form hardware description, epoch, origin
    frame_times — explicit sample times, if the system declares them
    """
    role: Role
    tracks: Tuple[Track, ...]
    sensor_meta: Mapping[str, Any] = field(default_factory=dict)
    frame_times: Optional[Tuple[float, ...]] = None

    def observations(self) -> Iterator[ObjectObservation]:
        for track in self.tracks:
            yield from track.observations

    @property
    def n_observations(self) -> int:
        return sum(len(t.observations) for t in self.tracks)

    def timestamps(self) -> List[float]:
        """Sorted distinct observation timestamps."""
        seen: Dict[float, float] = {}
        for obs in self.observations():
            seen.setdefault(time_key(obs.timestamp), obs.timestamp)
        return [seen[k] for k in sorted(seen)]


@dataclass(frozen=True)
class Violation:
    """
    A recording defect.

    kind      — short machine-readable tag (duplicate_timestamp, non_psd_cov, ...)
    message   — human-readable description
    track_id  — locator, if the defect belongs to a track
    timestamp — locator, if the defect belongs to one observation
    """
    kind: str
    message: str
    track_id: Optional[str] = None
    timestamp: Optional[float] = None

    def __str__(self) -> str:
        where = ""
        if self.track_id is not None:
            where = f" [id={self.track_id}"
            where += f", t={self.timestamp}]" if self.timestamp is not None else "]"
        return f"{self.kind}{where}: {self.message}"


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

class ExclusionReason(str, Enum):
    OUTSIDE_RES_AOV = "outside_res_aov"
    OUTSIDE_SUT_AOV = "outside_sut_aov"
    BELOW_P_MIN = "below_p_min"
    OCCLUDED = "occluded"
    NO_TEST_AREA = "no_test_area"
    CLASS_EXCLUDED = "class_excluded"
    BEYOND_CLASS_RANGE = "beyond_class_range"
    BELOW_CONF = "below_conf"
    OVERHANG_DISCARDED = "overhang_discarded"


AREA_REASONS: FrozenSet[ExclusionReason] = frozenset({
    ExclusionReason.NO_TEST_AREA,
    ExclusionReason.CLASS_EXCLUDED,
    ExclusionReason.BEYOND_CLASS_RANGE,
})

REASON_SECTION: Dict[ExclusionReason, str] = {
    ExclusionReason.OUTSIDE_RES_AOV: "aov",
    ExclusionReason.OUTSIDE_SUT_AOV: "aov",
    ExclusionReason.BELOW_P_MIN: "aov",
    ExclusionReason.OCCLUDED: "occlusion",
    ExclusionReason.NO_TEST_AREA: "areas",
    ExclusionReason.CLASS_EXCLUDED: "areas",
    ExclusionReason.BEYOND_CLASS_RANGE: "areas",
    ExclusionReason.BELOW_CONF: "probabilistic",
    ExclusionReason.OVERHANG_DISCARDED: "temporal",
}
"""Config section responsible for each exclusion reason."""


class ExclusionStage(str, Enum):
    PRE_REFERENCE = "pre_reference"
    PRE_MATCHING = "pre_matching"
    POST_MATCHING = "post_matching"


@dataclass(frozen=True)
class ExclusionTag:
    """
    Why one observation left the evaluation.

    reason      — primary reason, the first filter that fired
    stage       — where the exclusion took effect
    role        — which recording the observation belongs to
    track_id    — observation id
    timestamp   — observation time (grid time for resampled ReS observations)
    class_label — label at exclusion time
    x, y        — position at exclusion time
    detail      — measured quantity behind the decision
    """
    reason: ExclusionReason
    stage: ExclusionStage
    role: Role
    track_id: str
    timestamp: float
    class_label: str = ""
    x: float = 0.0
    y: float = 0.0
    detail: str = ""

    @property
    def key(self) -> ObsKey:
        return (self.track_id, time_key(self.timestamp))

    @property
    def section(self) -> str:
        return REASON_SECTION[self.reason]

    @property
    def tag_only(self) -> bool:
        """True for post-matching area tags, which leave the observation in the ledger."""
        return self.stage == ExclusionStage.POST_MATCHING and self.reason in AREA_REASONS


class EventKind(str, Enum):
    TP = "tp"
    FP = "fp"
    FN = "fn"
    ID_SWITCH = "id_switch"


class EventFlag(str, Enum):
    INTERPOLATED = "interpolated"
    BORDER_RESCUED = "border_rescued"
    GAP_FORGIVEN = "gap_forgiven"
    OVERHANG = "overhang"
    WRONG_CLASS = "wrong_class"
    LATENCY = "latency"


@dataclass(frozen=True)
class CostBreakdown:
    """
    Cost of pairing one SUT with one ReS observation.

    geometric — value of the configured metric
    penalties — named additive penalty terms
    gated     — match forbidden
    total     — geometric + Σ penalties, or +inf when gated
    """
    geometric: float
    penalties: Mapping[str, float]
    gated: bool
    total: float

    @classmethod
    def build(cls, geometric: float, penalties: Mapping[str, float], gated: bool) -> "CostBreakdown":
        total = float("inf") if gated else geometric + sum(penalties.values())
        return cls(geometric=geometric, penalties=dict(penalties), gated=gated, total=total)


_KIND_ORDER: Dict[EventKind, int] = {EventKind.TP: 0, EventKind.ID_SWITCH: 1, EventKind.FP: 2, EventKind.FN: 3}


@dataclass(frozen=True)
class MatchEvent:
    """
    One verdict.

    timestamp     — grid time, or original ReS time for grid overhangs
    kind          — tp, fp, fn or id_switch
    sut_id        — SUT track id (tp, fp, id_switch)
    res_id        — ReS track id (tp, fn, id_switch)
    cost          — cost of the pair for tp events
    flags         — qualifiers such as interpolated or overhang
    prev_sut_id   — previous partner for id_switch
    sut_class     — SUT label
    res_class     — ReS label
    res_occlusion — occlusion fraction of the ReS observation, when computed
    delay_s       — SUT latency applied to this observation under availability basis
    detail        — free text, e.g. overhang offsets
    """
    timestamp: float
    kind: EventKind
    sut_id: Optional[str] = None
    res_id: Optional[str] = None
    cost: Optional[CostBreakdown] = None
    flags: FrozenSet[EventFlag] = frozenset()
    prev_sut_id: Optional[str] = None
    sut_class: Optional[str] = None
    res_class: Optional[str] = None
    res_occlusion: Optional[float] = None
    delay_s: Optional[float] = None
    detail: str = ""

    def with_flag(self, flag: EventFlag) -> "MatchEvent":
        return replace(self, flags=self.flags | {flag})

    @property
    def sort_key(self) -> Tuple[float, int, str, str]:
        return (time_key(self.timestamp), _KIND_ORDER[self.kind], self.res_id or "", self.sut_id or "")


@dataclass(frozen=True)
class LedgerContext:
    """
    Facts about one run needed to re-aggregate a ledger from a report.

    sut_input        — number of SUT observations on the sampling grid
    res_input        — number of ReS observations after resampling, overhangs included
    frame_period_s   — median grid spacing
    res_track_starts — first ReS observation time per track, after alignment
    basis            — timestamp basis the run used
    tool_version     — version string of the engine
    notes            — warnings attached to the run
    """
    sut_input: int = 0
    res_input: int = 0
    frame_period_s: float = 0.0
    res_track_starts: Dict[str, float] = field(default_factory=dict)
    basis: str = "acquisition"
    tool_version: str = ""
    notes: Tuple[str, ...] = ()


@dataclass(frozen=True)
class VerdictLedger:
    """
    Complete record of one oracle run.

    events      — headline verdicts in deterministic order
    exclusions  — one tag per excluded observation
    config_echo — the fully-defaulted config the run used
    annex       — verdicts inside unreliable regions, never counted in headlines
    context     — counts and times needed for aggregation
    """
    events: Tuple[MatchEvent, ...] = ()
    exclusions: Tuple[ExclusionTag, ...] = ()
    config_echo: OracleConfig = field(default_factory=OracleConfig)
    annex: Tuple[MatchEvent, ...] = ()
    context: LedgerContext = field(default_factory=LedgerContext)

    def count(self, kind: EventKind) -> int:
        return sum(1 for e in self.events if e.kind == kind)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: Optional[float] = None
    recall: Optional[float] = None


@dataclass
class MetricsSummary:
    """
    Aggregated counts and derived metrics. None means undefined.

    tp, fp, fn       — headline counts; fn excludes gap-forgiven frames
    fn_latency       — FNs attributed to SUT latency (subset of fn)
    id_switches      — partner changes of ReS tracks
    gap_forgiven     — FN frames forgiven by the gap policy
    precision        — tp / (tp + fp)
    recall           — tp / (tp + fn)
    tid_s            — mean track initialization duration over matched ReS tracks
    lgd_s            — mean longest gap duration over matched ReS tracks
    mean_tp_delay_s  — mean SUT latency over TPs, availability basis only
    excluded         — number of exclusion tags
    per_class        — counts per label
    visibility       — TP/FN counts per visibility bin
    annex            — TP/FP/FN counts inside unreliable regions
    """
    tp: int = 0
    fp: int = 0
    fn: int = 0
    fn_latency: int = 0
    id_switches: int = 0
    gap_forgiven: int = 0
    precision: Optional[float] = None
    recall: Optional[float] = None
    tid_s: Optional[float] = None
    lgd_s: Optional[float] = None
    mean_tp_delay_s: Optional[float] = None
    excluded: int = 0
    per_class: Dict[str, ClassCounts] = field(default_factory=dict)
    visibility: Dict[str, Dict[str, int]] = field(default_factory=dict)
    annex: Dict[str, int] = field(default_factory=dict)


@dataclass
class RunManifest:
    """
    Traceability record written next to every report.

    input_paths    — role → recording path
    config_path    — config file, or None for the built-in defaults
    config_hash    — sha256 of the fully-defaulted config
    tool_version   — engine version
    wall_clock_s   — duration of the evaluation
    cpu_time_s     — user + system CPU time of the process
    memory_peak_mb — peak resident memory
    started_at     — UTC start time, never hashed
    report_sha256  — hash of the structured report bytes
    """
    input_paths: Dict[str, str]
    config_path: Optional[str]
    config_hash: str
    tool_version: str
    wall_clock_s: float = 0.0
    cpu_time_s: float = 0.0
    memory_peak_mb: float = 0.0
    started_at: str = ""
    report_sha256: str = ""


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GtTrackSpec:
    """
    Ground-truth object path. Either *velocity* or *waypoints* defines it.

    track_id  — id suffix used in both recordings
    cls       — object class
    start     — position at t_start (constant-velocity form)
    velocity  — constant velocity
    t_start   — first time the object exists
    t_end     — last time the object exists, None for the scene end
    waypoints — (t, x, y) samples, linearly interpolated
    """
    track_id: str
    cls: str
    start: Tuple[float, float] = (0.0, 0.0)
    velocity: Tuple[float, float] = (0.0, 0.0)
    t_start: float = 0.0
    t_end: Optional[float] = None
    waypoints: Tuple[Tuple[float, float, float], ...] = ()


@dataclass(frozen=True)
class PerturbationModel:
    """
    SUT failure modes injected by the generator.

    pos_sigma_m             — position noise, clipped to the match envelope
    dropout_per_frame_prob  — probability a real object is missed in a frame
    clutter_rate_per_frame  — Poisson mean of spurious detections per frame
    latency_s               — SUT latency, rounded to whole frames
    fragmentation_prob      — per-frame probability a track restarts with a new id
    duplicate_prob          — per-frame probability of a second detection
    misclass_prob           — per-frame probability of a wrong label
    existence_conf_model    — (mean for real objects, mean for clutter)
    """
    pos_sigma_m: float = 0.0
    dropout_per_frame_prob: float = 0.0
    clutter_rate_per_frame: float = 0.0
    latency_s: float = 0.0
    fragmentation_prob: float = 0.0
    duplicate_prob: float = 0.0
    misclass_prob: float = 0.0
    existence_conf_model: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class SceneSpec:
    """
    Synthetic scenario.

    seed          — PCG64 seed
    duration_s    — scene length
    rate_hz       — sample rate of both systems
    gt_tracks     — ground-truth objects
    res_noise     — reference position noise σ in meters
    sut_model     — SUT perturbations
    config        — oracle config overlay (geometry and matching) paired with the scene
    """
    seed: int
    duration_s: float
    rate_hz: float
    gt_tracks: Tuple[GtTrackSpec, ...]
    res_noise: float = 0.0
    sut_model: PerturbationModel = field(default_factory=PerturbationModel)
    config: Mapping[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class OracleError(Exception):
    """Base class for every failure raised by the oracle."""
    pass


class ConfigError(OracleError, ValueError):
    """Base class for config failures."""
    pass


class ConfigParseError(ConfigError):
    """Raised when a config document is not valid JSON."""
    pass


class ConfigSchemaError(ConfigError):
    """Raised for unknown keys, wrong types and out-of-range values."""
    pass


class RecordingFormatError(OracleError, ValueError):
    """Raised when a recording file cannot be parsed."""
    pass


class SceneSpecError(OracleError, ValueError):
    """Raised when a scene spec is malformed or leaves the unambiguous-match envelope."""
    pass


class GeometryError(OracleError, ValueError):
    """Raised for degenerate boxes, singular or non-PSD covariances and impossible viewpoints."""
    pass


class TemporalError(OracleError, ValueError):
    """Raised when a timestamp basis cannot be applied."""
    pass


class SweepError(OracleError):
    """Raised when a threshold sweep has no confidences to sweep over."""
    pass


class LedgerInvariantError(OracleError, AssertionError):
    """Raised when a ledger breaks a count conservation identity."""
    pass


class UnknownObjectError(OracleError, LookupError):
    """Raised when a report holds no verdict or exclusion for the requested object."""
    pass
