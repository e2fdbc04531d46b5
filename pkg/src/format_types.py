from typing import Dict, FrozenSet, NamedTuple, Optional, Tuple, TYPE_CHECKING

if TYPE_CHECKING:
    from config_types import OracleConfig
    from custom_types import ExclusionTag, MatchEvent, ObjectObservation, ObsKey, Role
    from geometry import CostMatrix


class FrameView(NamedTuple):
    """
    Observations of both systems at one grid time, before filtering.

    timestamp — grid time
    sut       — SUT observations stamped at this time
    res       — ReS observations resampled onto this time
    """
    timestamp: float
    sut: Tuple['ObjectObservation', ...]
    res: Tuple['ObjectObservation', ...]


class BorderCandidate(NamedTuple):
    """
    Area-excluded observation close enough to the violated boundary to be rescued.

    obs                 — the excluded observation
    role                — recording it belongs to
    tag                 — its exclusion tag, dropped again if the rescue succeeds
    boundary_distance_m — distance to the boundary it violates
    """
    obs: 'ObjectObservation'
    role: 'Role'
    tag: 'ExclusionTag'
    boundary_distance_m: float


class FilteredFrame(NamedTuple):
    """
    One frame after the aov, occlusion, areas and confidence filters.

    timestamp      — grid time
    sut, res       — observations that take part in matching
    exclusions     — tags of everything removed from this frame, plus post-matching area tags
    sut_rescue     — SUT border candidates (fuzzy_rescue only)
    res_rescue     — ReS border candidates (fuzzy_rescue only)
    unreliable_sut — SUT observations below p_min, matched in the annex
    unreliable_res — ReS observations below p_min, matched in the annex
    occlusion      — occlusion fraction per ReS observation key, when computed
    """
    timestamp: float
    sut: Tuple['ObjectObservation', ...]
    res: Tuple['ObjectObservation', ...]
    exclusions: Tuple['ExclusionTag', ...]
    sut_rescue: Tuple[BorderCandidate, ...] = ()
    res_rescue: Tuple[BorderCandidate, ...] = ()
    unreliable_sut: Tuple['ObjectObservation', ...] = ()
    unreliable_res: Tuple['ObjectObservation', ...] = ()
    occlusion: Dict['ObsKey', float] = {}


class MatchFrame(NamedTuple):
    """
    Assignment input of one frame.

    timestamp   — grid time
    rows        — SUT observations; rescue candidates follow the kept ones
    cols        — ReS observations; rescue candidates follow the kept ones
    cost        — SUT × ReS cost matrix
    rescue_rows — indices of rows that are border candidates
    rescue_cols — indices of columns that are border candidates
    occlusion   — occlusion fraction per column, None when not computed
    delays      — SUT latency per row under availability basis
    """
    timestamp: float
    rows: Tuple['ObjectObservation', ...]
    cols: Tuple['ObjectObservation', ...]
    cost: 'CostMatrix'
    rescue_rows: FrozenSet[int] = frozenset()
    rescue_cols: FrozenSet[int] = frozenset()
    occlusion: Tuple[Optional[float], ...] = ()
    delays: Tuple[Optional[float], ...] = ()


class FrameAssignment(NamedTuple):
    """
    matches        — matched (row, col) pairs, sorted
    unmatched_rows — rows in no match
    unmatched_cols — columns in no match
    """
    matches: Tuple[Tuple[int, int], ...]
    unmatched_rows: Tuple[int, ...]
    unmatched_cols: Tuple[int, ...]


class OverhangFrame(NamedTuple):
    """
    An observation outside the time span of its counterpart.

    obs      — the observation
    role     — SUT or ReS
    side     — "lead" or "tail"
    offset_s — time distance to the nearest end of the counterpart span
    """
    obs: 'ObjectObservation'
    role: 'Role'
    side: str
    offset_s: float


class LifetimeResult(NamedTuple):
    """
    events    — TP/FP/FN/id_switch events of all frames
    overhangs — partner-relative overhang frames: both roles in track lifetime,
                SUT frames only in frame and subsequence lifetimes
    """
    events: Tuple['MatchEvent', ...]
    overhangs: Tuple[OverhangFrame, ...] = ()


class SweepTask(NamedTuple):
    """
    Unit of work of a threshold sweep: one full evaluation at one existence threshold.

    index  — position k of the threshold, 1-based
    tau    — existence threshold k / (K + 1)
    config — the oracle config with probabilistic.tau_exist set to tau
    """
    index: int
    tau: float
    config: 'OracleConfig'
