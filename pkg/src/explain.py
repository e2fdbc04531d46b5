import logging
from typing import Dict, List, Optional, Sequence, Tuple

from config_types import OracleConfig
from custom_types import (
    TIME_EPS, CostBreakdown, EventFlag, EventKind, ExclusionTag, MatchEvent, Role, UnknownObjectError,
    VerdictLedger, time_key,
)

logger = logging.getLogger(__name__)


def _stamp(t: float) -> str:
    return f"t={t:.3f} s"


def cost_line(cost: CostBreakdown, metric: str) -> str:
    """'center2d 0.316 + w_v 0.050 = 0.366'; a gated pair ends in '= gated'."""
    terms = [f"{metric} {cost.geometric:.3f}"]
    terms.extend(f"{name} {value:.3f}" for name, value in sorted(cost.penalties.items()))
    total = "gated" if cost.gated else f"{cost.total:.3f}"
    return " + ".join(terms) + f" = {total}"


def exclusion_line(tag: ExclusionTag) -> str:
    line = f"excluded at stage {tag.stage.value} by {tag.section}: {tag.reason.value}"
    return f"{line} ({tag.detail})" if tag.detail else line


def _flag_lines(e: MatchEvent, cfg: OracleConfig) -> List[str]:
    lines: List[str] = []
    for flag in sorted(e.flags, key=lambda f: f.value):
        if flag == EventFlag.BORDER_RESCUED:
            corner = cfg.corner_cases
            lines.append(f"border_rescued: kept by corner_cases ({corner.border.value}, margin {corner.margin_m:.2f} m)")
        elif flag == EventFlag.OVERHANG:
            lines.append(f"overhang: {e.detail or 'outside the partner span'} "
                         f"(temporal.overhang={cfg.temporal.overhang.value})")
        elif flag == EventFlag.GAP_FORGIVEN:
            lines.append(f"gap_forgiven: missed frame inside a gap of at most "
                         f"{cfg.assignment.max_gap_frames} frame(s) (assignment.max_gap_frames)")
        elif flag == EventFlag.LATENCY:
            lines.append("latency: inside the SUT's initial computation time (temporal.sut_latency_s)")
        elif flag == EventFlag.WRONG_CLASS:
            lines.append(f"wrong_class: SUT '{e.sut_class}' vs ReS '{e.res_class}' "
                         f"(probabilistic.misclassification={cfg.probabilistic.misclassification.value})")
        elif flag == EventFlag.INTERPOLATED:
            lines.append("interpolated: ReS position resampled onto the SUT sample time (temporal)")
    return lines


def _event_lines(e: MatchEvent, cfg: OracleConfig) -> List[str]:
    if e.kind == EventKind.TP:
        lines = [f"TP with SUT {e.sut_id} (assignment: {cfg.assignment.algorithm.value}, "
                 f"{cfg.assignment.cardinality.value}, {cfg.assignment.lifetime.value})"]
        if e.cost is not None:
            lines.append(f"cost: {cost_line(e.cost, cfg.distance.metric.value)} "
                         f"(distance.threshold {cfg.effective_threshold:.3f})")
    elif e.kind == EventKind.FN:
        lines = ["FN: no SUT partner within the distance gate" if not e.detail else f"FN: {e.detail}"]
    elif e.kind == EventKind.ID_SWITCH:
        lines = [f"id_switch: partner changed from {e.prev_sut_id} to {e.sut_id} (assignment.lifetime=subsequence)"]
    else:
        lines = [f"{e.kind.value.upper()}: SUT {e.sut_id}"]
    if e.res_occlusion is not None:
        lines.append(f"occlusion fraction {e.res_occlusion:.2f} (occlusion.policy={cfg.occlusion.policy.value})")
    if e.delay_s is not None:
        lines.append(f"SUT stamped {e.delay_s:.3f} s after acquisition (temporal.basis={cfg.temporal.basis.value})")
    return lines + _flag_lines(e, cfg)


def _at(t: Optional[float], when: float) -> bool:
    return t is None or abs(when - t) <= TIME_EPS


def _verdict(events: Sequence[MatchEvent], tags: Sequence[ExclusionTag]) -> str:
    kinds = sorted({e.kind.value for e in events if e.kind != EventKind.ID_SWITCH})
    if kinds:
        return "+".join(k.upper() for k in kinds)
    if tags:
        return "excluded"
    return "none"


def explain(ledger: VerdictLedger, res_id: str, t: Optional[float] = None) -> str:
    """
    Human-readable account of one ReS object: every exclusion, every verdict
    with its cost breakdown, and the config section that decided it, grouped
    by timestamp. *t* restricts the account to one sample time.

    Raises UnknownObjectError when the ledger holds nothing for *res_id* (at *t*).
    """
    cfg = ledger.config_echo
    events = [e for e in ledger.events if e.res_id == res_id and _at(t, e.timestamp)]
    tags = [x for x in ledger.exclusions if x.role == Role.RES and x.track_id == res_id and _at(t, x.timestamp)]
    annex = [e for e in ledger.annex if e.res_id == res_id and _at(t, e.timestamp)]
    if not events and not tags and not annex:
        where = "" if t is None else f" at {_stamp(t)}"
        raise UnknownObjectError(f"No verdict or exclusion for ReS object '{res_id}'{where}")

    by_time: Dict[float, Tuple[List[MatchEvent], List[ExclusionTag], List[MatchEvent]]] = {}
    for e in events:
        by_time.setdefault(time_key(e.timestamp), ([], [], []))[0].append(e)
    for x in tags:
        by_time.setdefault(time_key(x.timestamp), ([], [], []))[1].append(x)
    for e in annex:
        by_time.setdefault(time_key(e.timestamp), ([], [], []))[2].append(e)

    lines = [f"ReS object {res_id} ({cfg.name or 'unnamed config'}, basis {ledger.context.basis})"]
    for when in sorted(by_time):
        frame_events, frame_tags, frame_annex = by_time[when]
        lines.append(f"{_stamp(when)}: {_verdict(frame_events, frame_tags)}")
        for x in frame_tags:
            lines.append(f"  {exclusion_line(x)}")
        for e in frame_events:
            lines.extend(f"  {line}" for line in _event_lines(e, cfg))
        for e in frame_annex:
            lines.append(f"  annex {e.kind.value.upper()} (unreliable region, aov.p_min={cfg.aov.p_min:.2f})")
    logger.debug("Explained %d time step(s) of %s", len(by_time), res_id)
    return "\n".join(lines) + "\n"
