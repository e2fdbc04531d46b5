from collections import defaultdict
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
import logging
from typing import Dict, List, Optional, Sequence, Set, Tuple, TYPE_CHECKING

from config_loader import resolve_max_threads
from config_types import MismatchPolicy, OracleConfig, TimestampBasis
from custom_types import (
    ClassCounts, EventFlag, EventKind, ExclusionTag, LedgerInvariantError, MatchEvent, MetricsSummary,
    ObsKey, Recording, Role, SweepError, VerdictLedger, time_key,
)
from filters import visibility_bin
from format_types import SweepTask
from utils import mean_or_none, safe_ratio

if TYPE_CHECKING:
    from oracle import OracleEngine

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Misclassification
# ---------------------------------------------------------------------------

def classify_mismatch(events: Sequence[MatchEvent], policy: MismatchPolicy) -> List[MatchEvent]:
    """
    Handles TPs whose labels differ (reachable only with the class gate off).
    tp_wrong_class flags the TP; fp_plus_fn replaces it by an FP for the SUT class
    and an FN for the ReS class. An observation that holds another, correctly
    labeled TP in the same frame is not also counted as FP or FN.
    """
    def is_wrong(e: MatchEvent) -> bool:
        return e.kind == EventKind.TP and e.sut_class != e.res_class

    if not any(is_wrong(e) for e in events):
        return list(events)
    if policy == MismatchPolicy.TP_WRONG_CLASS:
        return [e.with_flag(EventFlag.WRONG_CLASS) if is_wrong(e) else e for e in events]

    good_sut: Set[ObsKey] = set()
    good_res: Set[ObsKey] = set()
    for e in events:
        if e.kind == EventKind.TP and not is_wrong(e):
            good_sut.add((e.sut_id or "", time_key(e.timestamp)))
            good_res.add((e.res_id or "", time_key(e.timestamp)))

    out: List[MatchEvent] = []
    split_sut: Set[ObsKey] = set()
    split_res: Set[ObsKey] = set()
    for e in events:
        if not is_wrong(e):
            out.append(e)
            continue
        sut_key = (e.sut_id or "", time_key(e.timestamp))
        res_key = (e.res_id or "", time_key(e.timestamp))
        detail = f"class {e.sut_class} vs {e.res_class}"
        if sut_key not in good_sut and sut_key not in split_sut:
            split_sut.add(sut_key)
            out.append(MatchEvent(timestamp=e.timestamp, kind=EventKind.FP, sut_id=e.sut_id,
                                  sut_class=e.sut_class, delay_s=e.delay_s, detail=detail))
        if res_key not in good_res and res_key not in split_res:
            split_res.add(res_key)
            out.append(MatchEvent(timestamp=e.timestamp, kind=EventKind.FN, res_id=e.res_id,
                                  res_class=e.res_class, res_occlusion=e.res_occlusion,
                                  flags=e.flags & {EventFlag.INTERPOLATED}, detail=detail))
    return out


# ---------------------------------------------------------------------------
# Conservation
# ---------------------------------------------------------------------------

def check_conservation(ledger: VerdictLedger) -> None:
    """
    Re-checks the count identities: every SUT input observation is in TP ∪ FP or
    excluded, every ReS input observation is in TP ∪ FN (forgiven included) or
    excluded, and no observation is both matched and unmatched.

    Raises LedgerInvariantError naming the identity that fails.
    """
    seen: Dict[Tuple[EventKind, Role], Set[ObsKey]] = defaultdict(set)
    for e in ledger.events:
        if e.kind == EventKind.ID_SWITCH:
            continue
        t = time_key(e.timestamp)
        if e.kind != EventKind.FN:
            seen[(e.kind, Role.SUT)].add((e.sut_id or "", t))
        if e.kind != EventKind.FP:
            seen[(e.kind, Role.RES)].add((e.res_id or "", t))

    removed: Dict[Role, Set[ObsKey]] = {Role.SUT: set(), Role.RES: set()}
    for tag in ledger.exclusions:
        if not tag.tag_only:
            removed[tag.role].add(tag.key)

    checks = (
        (Role.SUT, seen[(EventKind.TP, Role.SUT)], seen[(EventKind.FP, Role.SUT)], ledger.context.sut_input, "FP"),
        (Role.RES, seen[(EventKind.TP, Role.RES)], seen[(EventKind.FN, Role.RES)], ledger.context.res_input, "FN"),
    )
    for role, tp, other, expected, other_name in checks:
        if tp & other:
            raise LedgerInvariantError(
                f"{len(tp & other)} {role.value} observation(s) are both TP and {other_name}, e.g. {sorted(tp & other)[0]}")
        judged = tp | other
        if judged & removed[role]:
            raise LedgerInvariantError(
                f"{len(judged & removed[role])} {role.value} observation(s) are both judged and excluded")
        if len(judged) + len(removed[role]) != expected:
            raise LedgerInvariantError(
                f"{role.value} conservation failed: TP ∪ {other_name} ({len(judged)}) + excluded "
                f"({len(removed[role])}) != input ({expected})")


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _post_matching_filter(ledger: VerdictLedger) -> List[MatchEvent]:
    tagged: Set[Tuple[Role, ObsKey]] = {(t.role, t.key) for t in ledger.exclusions if t.tag_only}
    if not tagged:
        return list(ledger.events)
    kept = []
    for e in ledger.events:
        t = time_key(e.timestamp)
        if e.kind in (EventKind.TP, EventKind.FN) and (Role.RES, (e.res_id or "", t)) in tagged:
            continue
        if e.kind == EventKind.FP and (Role.SUT, (e.sut_id or "", t)) in tagged:
            continue
        kept.append(e)
    return kept


def _track_durations(events: Sequence[MatchEvent], ledger: VerdictLedger) -> Tuple[List[float], List[float]]:
    """
    Per matched ReS track: (time to first TP, longest FN run between two TPs).
    A miss run after the last TP is a track loss, not a gap, and is left out.
    """
    by_res: Dict[str, List[MatchEvent]] = defaultdict(list)
    for e in events:
        if e.res_id is not None and e.kind in (EventKind.TP, EventKind.FN):
            by_res[e.res_id].append(e)

    period = ledger.context.frame_period_s
    tids: List[float] = []
    lgds: List[float] = []
    for rid in sorted(by_res):
        timeline = sorted(by_res[rid], key=lambda e: (time_key(e.timestamp), e.kind != EventKind.TP))
        tp_times = [e.timestamp for e in timeline if e.kind == EventKind.TP]
        if not tp_times:
            continue
        start = ledger.context.res_track_starts.get(rid, timeline[0].timestamp)
        tids.append(max(0.0, tp_times[0] - start))

        longest = run = 0
        seen_tp = False
        last_t: Optional[float] = None
        for e in timeline:
            t = time_key(e.timestamp)
            if t == last_t:
                continue
            last_t = t
            if e.kind == EventKind.TP:
                if seen_tp:
                    longest = max(longest, run)
                seen_tp = True
                run = 0
            elif seen_tp:
                run += 1
        lgds.append(longest * period)
    return tids, lgds


def _class_counts(events: Sequence[MatchEvent]) -> Dict[str, ClassCounts]:
    per_class: Dict[str, ClassCounts] = defaultdict(ClassCounts)
    for e in events:
        if e.kind == EventKind.TP:
            per_class[e.res_class or ""].tp += 1
        elif e.kind == EventKind.FP:
            per_class[e.sut_class or ""].fp += 1
        elif e.kind == EventKind.FN and EventFlag.GAP_FORGIVEN not in e.flags:
            per_class[e.res_class or ""].fn += 1
    for counts in per_class.values():
        counts.precision = safe_ratio(counts.tp, counts.tp + counts.fp)
        counts.recall = safe_ratio(counts.tp, counts.tp + counts.fn)
    return dict(sorted(per_class.items()))


def _visibility(events: Sequence[MatchEvent], edges: Sequence[float]) -> Dict[str, Dict[str, int]]:
    bins: Dict[str, Dict[str, int]] = {}
    for e in events:
        if e.res_occlusion is None or e.kind not in (EventKind.TP, EventKind.FN):
            continue
        if EventFlag.GAP_FORGIVEN in e.flags:
            continue
        label = visibility_bin(e.res_occlusion, edges)
        bucket = bins.setdefault(label, {"tp": 0, "fn": 0})
        bucket[e.kind.value] += 1
    return dict(sorted(bins.items()))


def aggregate(ledger: VerdictLedger) -> MetricsSummary:
    """
    Counts and derived metrics of a ledger. Post-matching area tags drop the
    TP/FN of tagged ReS observations and the FP of tagged SUT observations here.
    Ratios with a zero denominator stay None.

    Raises LedgerInvariantError if the ledger breaks a conservation identity.
    """
    check_conservation(ledger)
    events = _post_matching_filter(ledger)

    tp = sum(1 for e in events if e.kind == EventKind.TP)
    fp = sum(1 for e in events if e.kind == EventKind.FP)
    fns = [e for e in events if e.kind == EventKind.FN]
    forgiven = sum(1 for e in fns if EventFlag.GAP_FORGIVEN in e.flags)
    fn = len(fns) - forgiven
    fn_latency = sum(1 for e in fns if EventFlag.LATENCY in e.flags and EventFlag.GAP_FORGIVEN not in e.flags)

    tids, lgds = _track_durations(events, ledger)
    mean_delay = None
    if ledger.context.basis == TimestampBasis.AVAILABILITY.value:
        mean_delay = mean_or_none(e.delay_s for e in events if e.kind == EventKind.TP and e.delay_s is not None)

    annex = {"tp": 0, "fp": 0, "fn": 0}
    for e in ledger.annex:
        if e.kind.value in annex:
            annex[e.kind.value] += 1

    return MetricsSummary(
        tp=tp,
        fp=fp,
        fn=fn,
        fn_latency=fn_latency,
        id_switches=sum(1 for e in events if e.kind == EventKind.ID_SWITCH),
        gap_forgiven=forgiven,
        precision=safe_ratio(tp, tp + fp),
        recall=safe_ratio(tp, tp + fn),
        tid_s=mean_or_none(tids),
        lgd_s=mean_or_none(lgds),
        mean_tp_delay_s=mean_delay,
        excluded=len(ledger.exclusions),
        per_class=_class_counts(events),
        visibility=_visibility(events, ledger.config_echo.occlusion.visibility_bins),
        annex=annex,
    )


# ---------------------------------------------------------------------------
# Threshold sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    """
    taus           — the evaluated existence thresholds, increasing
    summaries      — one summary per threshold
    mean_precision — arithmetic mean over the defined precisions
    mean_recall    — arithmetic mean over the defined recalls
    """
    taus: List[float] = field(default_factory=list)
    summaries: List[MetricsSummary] = field(default_factory=list)
    mean_precision: Optional[float] = None
    mean_recall: Optional[float] = None


def sweep_thresholds(k: int) -> List[float]:
    """Evenly spaced thresholds k/(K+1) for k = 1..K."""
    return [i / (k + 1) for i in range(1, k + 1)]


def _sweep_tasks(cfg: OracleConfig, k: int) -> List[SweepTask]:
    tasks = []
    for index, tau in enumerate(sweep_thresholds(k), start=1):
        probabilistic = replace(cfg.probabilistic, tau_exist=tau, sweep_thresholds=None)
        tasks.append(SweepTask(index=index, tau=tau, config=replace(cfg, probabilistic=probabilistic)))
    return tasks


def threshold_sweep(res: Recording, sut: Recording, cfg: OracleConfig, k: int) -> SweepResult:
    """
    Evaluates the full pipeline at K existence thresholds in parallel and
    averages precision and recall across them.

    Raises SweepError if K < 1 or if no SUT observation carries existence_conf.
    """
    from oracle import OracleEngine

    if k < 1:
        raise SweepError(f"Sweep needs at least one threshold, got K={k}")
    if not any(o.existence_conf is not None for o in sut.observations()):
        raise SweepError(
            "No SUT observation carries an existence confidence; use a single threshold "
            "(probabilistic.tau_exist) instead of a sweep"
        )

    tasks = _sweep_tasks(cfg, k)
    max_threads = resolve_max_threads(cfg.threading.max_threads, len(tasks))
    summaries: Dict[int, MetricsSummary] = {}

    def worker(task: SweepTask) -> MetricsSummary:
        engine: "OracleEngine" = OracleEngine(task.config)
        return aggregate(engine.evaluate(res, sut))

    with ThreadPoolExecutor(max_workers=max_threads) as pool:
        futures: Dict[Future[MetricsSummary], SweepTask] = {pool.submit(worker, t): t for t in tasks}
        for future in as_completed(futures):
            task = futures[future]
            summaries[task.index] = future.result()
            logger.info("[%d/%d] Done: tau=%.4f", len(summaries), len(tasks), task.tau)

    ordered = [summaries[t.index] for t in tasks]
    return SweepResult(
        taus=[t.tau for t in tasks],
        summaries=ordered,
        mean_precision=mean_or_none(s.precision for s in ordered if s.precision is not None),
        mean_recall=mean_or_none(s.recall for s in ordered if s.recall is not None),
    )
