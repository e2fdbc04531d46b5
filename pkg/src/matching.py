from collections import defaultdict
import logging
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from assignment_strategy import cols_exclusive, get_assigner, rows_exclusive
from config_types import AssignmentConfig, Lifetime
from custom_types import TIME_EPS, CostBreakdown, EventFlag, EventKind, MatchEvent, Role
from format_types import FrameAssignment, LifetimeResult, MatchFrame, OverhangFrame
from geometry import CostMatrix

logger = logging.getLogger(__name__)

Span = Tuple[float, float]


def assign_frame(
    cost: CostMatrix,
    cfg: AssignmentConfig,
    row_keys: Optional[Sequence[str]] = None,
    col_keys: Optional[Sequence[str]] = None,
    forced: Iterable[Tuple[int, int]] = (),
) -> FrameAssignment:
    """
    Matches one frame with the configured algorithm and cardinality. *forced*
    pairs are kept as they are and their rows/columns leave the pool where the
    cardinality makes them exclusive. Unmatched rows are FPs, unmatched columns FNs.
    """
    n, m = cost.shape
    row_keys = [str(i) for i in range(n)] if row_keys is None else row_keys
    col_keys = [str(j) for j in range(m)] if col_keys is None else col_keys

    total = cost.total.copy()
    kept: List[Tuple[int, int]] = []
    used_rows: Set[int] = set()
    used_cols: Set[int] = set()
    for i, j in forced:
        if not np.isfinite(cost.total[i, j]):
            continue
        if (rows_exclusive(cfg.cardinality) and i in used_rows) or (cols_exclusive(cfg.cardinality) and j in used_cols):
            continue
        kept.append((i, j))
        used_rows.add(i)
        used_cols.add(j)
        if rows_exclusive(cfg.cardinality):
            total[i, :] = np.inf
        if cols_exclusive(cfg.cardinality):
            total[:, j] = np.inf

    pairs = set(kept) | set(get_assigner(cfg.algorithm).assign(total, cfg.cardinality, row_keys, col_keys))
    matches = tuple(sorted(pairs))
    matched_rows = {i for i, _ in matches}
    matched_cols = {j for _, j in matches}
    return FrameAssignment(
        matches=matches,
        unmatched_rows=tuple(i for i in range(n) if i not in matched_rows),
        unmatched_cols=tuple(j for j in range(m) if j not in matched_cols),
    )


# ---------------------------------------------------------------------------
# Event construction
# ---------------------------------------------------------------------------

def _occlusion(frame: MatchFrame, j: int) -> Optional[float]:
    return frame.occlusion[j] if j < len(frame.occlusion) else None


def _delay(frame: MatchFrame, i: int) -> Optional[float]:
    return frame.delays[i] if i < len(frame.delays) else None


def tp_event(frame: MatchFrame, i: int, j: int, cost: Optional[CostBreakdown] = None) -> MatchEvent:
    sut, res = frame.rows[i], frame.cols[j]
    flags: Set[EventFlag] = set()
    if res.interpolated:
        flags.add(EventFlag.INTERPOLATED)
    if i in frame.rescue_rows or j in frame.rescue_cols:
        flags.add(EventFlag.BORDER_RESCUED)
    return MatchEvent(
        timestamp=frame.timestamp, kind=EventKind.TP, sut_id=sut.track_id, res_id=res.track_id,
        cost=frame.cost.breakdown(i, j) if cost is None else cost, flags=frozenset(flags),
        sut_class=sut.class_label, res_class=res.class_label,
        res_occlusion=_occlusion(frame, j), delay_s=_delay(frame, i),
    )


def fp_event(frame: MatchFrame, i: int) -> MatchEvent:
    sut = frame.rows[i]
    return MatchEvent(
        timestamp=frame.timestamp, kind=EventKind.FP, sut_id=sut.track_id, sut_class=sut.class_label,
        delay_s=_delay(frame, i),
    )


def fn_event(frame: MatchFrame, j: int) -> MatchEvent:
    res = frame.cols[j]
    flags = frozenset({EventFlag.INTERPOLATED}) if res.interpolated else frozenset()
    return MatchEvent(
        timestamp=frame.timestamp, kind=EventKind.FN, res_id=res.track_id, res_class=res.class_label,
        flags=flags, res_occlusion=_occlusion(frame, j),
    )


def _frame_events(frame: MatchFrame, result: FrameAssignment) -> List[MatchEvent]:
    costs = frame.cost.breakdowns(result.matches)
    events = [tp_event(frame, i, j, cost) for (i, j), cost in zip(result.matches, costs)]
    events.extend(fn_event(frame, j) for j in result.unmatched_cols if j not in frame.rescue_cols)
    return events


# ---------------------------------------------------------------------------
# Lifetime modes
# ---------------------------------------------------------------------------

def _match_frames(frames: Sequence[MatchFrame], cfg: AssignmentConfig, partner_overhangs: bool) -> LifetimeResult:
    """
    Frame and subsequence lifetimes: per-frame assignment, sticky retention, id
    switches. Unmatched SUT frames are settled once all frames are matched, see
    _unmatched_rows.
    """
    subsequence = cfg.lifetime == Lifetime.SUBSEQUENCE
    last_partner: Dict[str, str] = {}
    last_tp: Dict[str, Tuple[str, int]] = {}
    events: List[MatchEvent] = []
    unmatched: List[Tuple[MatchFrame, int]] = []

    for idx, frame in enumerate(frames):
        row_keys = [o.track_id for o in frame.rows]
        col_keys = [o.track_id for o in frame.cols]
        forced: List[Tuple[int, int]] = []
        if subsequence and cfg.sticky:
            row_of = {sid: i for i, sid in enumerate(row_keys) if i not in frame.rescue_rows}
            for j, rid in enumerate(col_keys):
                held = last_tp.get(rid)
                if j in frame.rescue_cols or held is None or idx - held[1] - 1 > cfg.max_gap_frames:
                    continue
                if held[0] in row_of:
                    forced.append((row_of[held[0]], j))

        result = assign_frame(frame.cost, cfg, row_keys, col_keys, forced)
        events.extend(_frame_events(frame, result))
        unmatched.extend((frame, i) for i in result.unmatched_rows if i not in frame.rescue_rows)
        if not subsequence:
            continue

        partners: Dict[str, List[str]] = defaultdict(list)
        for i, j in result.matches:
            partners[col_keys[j]].append(row_keys[i])
        for rid in sorted(partners):
            current = sorted(partners[rid])
            prev = last_partner.get(rid)
            if prev is not None and prev not in current:
                events.append(MatchEvent(
                    timestamp=frame.timestamp, kind=EventKind.ID_SWITCH, sut_id=current[0], res_id=rid,
                    prev_sut_id=prev, detail=f"{prev} -> {current[0]}",
                ))
            partner = prev if prev in current else current[0]
            last_partner[rid] = partner
            last_tp[rid] = (partner, idx)

    overhangs: List[OverhangFrame] = []
    if partner_overhangs:
        settled, overhangs = _unmatched_rows(frames, events, unmatched)
    else:
        settled = [fp_event(frame, i) for frame, i in unmatched]
    ordered = sorted(events + settled, key=lambda e: e.sort_key)
    return LifetimeResult(events=tuple(ordered), overhangs=tuple(overhangs))


def _unmatched_rows(
    frames: Sequence[MatchFrame], events: Sequence[MatchEvent], unmatched: Sequence[Tuple[MatchFrame, int]],
) -> Tuple[List[MatchEvent], List[OverhangFrame]]:
    """
    A SUT frame left unmatched is an overhang when its track has TP partners and
    the frame lies before or after the time hull of those partners' ReS spans;
    otherwise it is an FP. Gaps between two partner tracks stay FPs.
    """
    if not unmatched:
        return [], []
    res_times: Dict[str, List[float]] = defaultdict(list)
    for frame in frames:
        for j, res in enumerate(frame.cols):
            if j not in frame.rescue_cols:
                res_times[res.track_id].append(frame.timestamp)
    partners: Dict[str, Set[str]] = defaultdict(set)
    for e in events:
        if e.kind == EventKind.TP and e.sut_id is not None and e.res_id in res_times:
            partners[e.sut_id].add(e.res_id)

    settled: List[MatchEvent] = []
    overhangs: List[OverhangFrame] = []
    for frame, i in unmatched:
        sut = frame.rows[i]
        spans = [(min(res_times[r]), max(res_times[r])) for r in partners.get(sut.track_id, ())]
        if spans:
            hull = (min(s for s, _ in spans), max(e for _, e in spans))
            inside, side, offset = _span_side(frame.timestamp, [hull])
            if not inside:
                overhangs.append(OverhangFrame(sut, Role.SUT, side, offset))
                continue
        settled.append(fp_event(frame, i))
    return settled, overhangs


def _span_side(t: float, spans: Sequence[Span]) -> Tuple[bool, str, float]:
    """(inside any span, lead/tail, distance to the nearest span end)."""
    best = float("inf")
    side = "tail"
    for start, end in spans:
        if start - TIME_EPS <= t <= end + TIME_EPS:
            return True, "", 0.0
        dist = start - t if t < start else t - end
        if dist < best:
            best, side = dist, ("lead" if t < start else "tail")
    return False, side, best


def _match_tracks(frames: Sequence[MatchFrame], cfg: AssignmentConfig, class_gate: bool) -> LifetimeResult:
    """
    Track lifetime: pairs whose mean geometric cost over the common frames is at
    most track_threshold_mean_m are matched wholesale. Frames outside the
    partner's span become overhangs; frames inside it without the partner
    become FN or FP.
    """
    threshold = cfg.track_threshold_mean_m if cfg.track_threshold_mean_m is not None else float("inf")
    sums: Dict[Tuple[str, str], float] = defaultdict(float)
    counts: Dict[Tuple[str, str], int] = defaultdict(int)
    blocked: Set[Tuple[str, str]] = set()
    sut_times: Dict[str, List[float]] = defaultdict(list)
    res_times: Dict[str, List[float]] = defaultdict(list)

    for frame in frames:
        for i, sut in enumerate(frame.rows):
            if i in frame.rescue_rows:
                continue
            sut_times[sut.track_id].append(frame.timestamp)
            for j, res in enumerate(frame.cols):
                if j in frame.rescue_cols:
                    continue
                key = (sut.track_id, res.track_id)
                sums[key] += float(frame.cost.geometric[i, j])
                counts[key] += 1
                if class_gate and sut.class_label != res.class_label:
                    blocked.add(key)
        for j, res in enumerate(frame.cols):
            if j not in frame.rescue_cols:
                res_times[res.track_id].append(frame.timestamp)

    sut_ids = sorted(sut_times)
    res_ids = sorted(res_times)
    matrix = np.full((len(sut_ids), len(res_ids)), np.inf)
    for a, sid in enumerate(sut_ids):
        for b, rid in enumerate(res_ids):
            n = counts.get((sid, rid), 0)
            if n and (sid, rid) not in blocked:
                mean = sums[(sid, rid)] / n
                if mean <= threshold:
                    matrix[a, b] = mean
    track_pairs = get_assigner(cfg.algorithm).assign(matrix, cfg.cardinality, sut_ids, res_ids) if matrix.size else []

    res_partners: Dict[str, Set[str]] = defaultdict(set)
    sut_partners: Dict[str, Set[str]] = defaultdict(set)
    for a, b in track_pairs:
        res_partners[res_ids[b]].add(sut_ids[a])
        sut_partners[sut_ids[a]].add(res_ids[b])
        logger.debug("Track pair %s <-> %s, mean cost %.3f", sut_ids[a], res_ids[b], matrix[a, b])
    sut_span = {sid: (min(ts), max(ts)) for sid, ts in sut_times.items()}
    res_span = {rid: (min(ts), max(ts)) for rid, ts in res_times.items()}

    events: List[MatchEvent] = []
    overhangs: List[OverhangFrame] = []
    for frame in frames:
        row_of = {o.track_id: i for i, o in enumerate(frame.rows) if i not in frame.rescue_rows}
        used_rows: Set[int] = set()
        for j, res in enumerate(frame.cols):
            if j in frame.rescue_cols:
                continue
            partners = sorted(res_partners.get(res.track_id, set()))
            present = [row_of[sid] for sid in partners if sid in row_of]
            if present:
                for i in present:
                    events.append(tp_event(frame, i, j))
                    used_rows.add(i)
                continue
            inside, side, offset = _span_side(frame.timestamp, [sut_span[s] for s in partners])
            if partners and not inside:
                overhangs.append(OverhangFrame(res, Role.RES, side, offset))
            else:
                events.append(fn_event(frame, j))
        for sid, i in sorted(row_of.items()):
            if i in used_rows:
                continue
            partners = sorted(sut_partners.get(sid, set()))
            inside, side, offset = _span_side(frame.timestamp, [res_span[r] for r in partners])
            if partners and not inside:
                overhangs.append(OverhangFrame(frame.rows[i], Role.SUT, side, offset))
            else:
                events.append(fp_event(frame, i))
    return LifetimeResult(events=tuple(events), overhangs=tuple(overhangs))


def match_lifetimes(
    frames: Sequence[MatchFrame], cfg: AssignmentConfig, class_gate: bool = True, partner_overhangs: bool = True,
) -> LifetimeResult:
    """
    Turns time-ordered frames into TP/FP/FN events under the configured lifetime
    mode. frame: independent per-frame assignments. subsequence: per-frame
    assignments, optionally sticky, with id switches when a ReS track's partner
    changes. SUT frames beyond the ReS span of their TP partners are overhangs in
    both unless *partner_overhangs* is off. track: whole-track pairing with
    partner-relative overhangs.
    """
    if cfg.lifetime == Lifetime.TRACK:
        return _match_tracks(frames, cfg, class_gate)
    return _match_frames(frames, cfg, partner_overhangs)


# ---------------------------------------------------------------------------
# Missed frames
# ---------------------------------------------------------------------------

def apply_gap_policy(events: Sequence[MatchEvent], cfg: AssignmentConfig) -> List[MatchEvent]:
    """
    Re-tags FN runs of at most max_gap_frames that sit strictly between TPs of
    the same (sut, res) pair as gap_forgiven. Forgiven FNs stay in the ledger.
    """
    out = list(events)
    if cfg.max_gap_frames <= 0:
        return out

    timeline: Dict[str, List[int]] = defaultdict(list)
    for idx, e in enumerate(out):
        if e.res_id is not None and e.kind in (EventKind.TP, EventKind.FN):
            timeline[e.res_id].append(idx)

    for rid, indices in timeline.items():
        indices.sort(key=lambda k: (out[k].timestamp, out[k].kind != EventKind.TP))
        steps: List[Tuple[float, FrozenSet[str], List[int]]] = []
        for k in indices:
            e = out[k]
            if steps and abs(steps[-1][0] - e.timestamp) <= TIME_EPS:
                steps[-1][2].append(k)
                if e.kind == EventKind.TP and e.sut_id is not None:
                    steps[-1] = (steps[-1][0], steps[-1][1] | {e.sut_id}, steps[-1][2])
                continue
            suts = frozenset({e.sut_id}) if e.kind == EventKind.TP and e.sut_id is not None else frozenset()
            steps.append((e.timestamp, suts, [k]))

        pos = 0
        while pos < len(steps):
            if steps[pos][1]:
                pos += 1
                continue
            end = pos
            while end < len(steps) and not steps[end][1]:
                end += 1
            run_length = end - pos
            if 0 < pos and end < len(steps) and run_length <= cfg.max_gap_frames \
                    and steps[pos - 1][1] & steps[end][1]:
                for step in steps[pos:end]:
                    for k in step[2]:
                        out[k] = out[k].with_flag(EventFlag.GAP_FORGIVEN)
            pos = end
    return out
