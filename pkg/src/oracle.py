from dataclasses import replace
import logging
from typing import Dict, List, Optional, Sequence, Set, Tuple

from config_types import Cardinality, ClassPolicy, Lifetime, OracleConfig, Point, TimestampBasis, TransformKind
from custom_types import (
    EventFlag, EventKind, ExclusionTag, LedgerContext, MatchEvent, ObjectObservation, ObsKey, Recording,
    Role, VerdictLedger, time_key,
)
from filters import argmax_label, filter_frame, resolve_border_case
from format_types import BorderCandidate, FilteredFrame, FrameView, MatchFrame, OverhangFrame
from geometry import CostMatrix, apply_transform, build_cost_matrix
from matching import apply_gap_policy, match_lifetimes
from recording_io import build_recording
from temporal import (
    SyncedPair, apply_timestamp_basis, latency_at, resolve_overhangs, sampling_grid, sut_delays, synchronize,
)
from utils import TOOL_VERSION, median_period
from verdict import check_conservation, classify_mismatch

logger = logging.getLogger(__name__)

N_N_NOTE = "cardinality n_n counts every matched pair as a TP; totals may double-count objects"

CandidateIndex = Dict[Tuple[Role, ObsKey], BorderCandidate]


class OracleEngine:
    """
    Runs one evaluation of a SUT recording against a ReS recording.

    The stages run in a fixed order: ReS alignment, timestamp basis, sampling
    grid and resampling, the per-frame filters, matching under the configured
    lifetime, border rescue, overhang resolution, misclassification handling
    and the gap policy. The resulting ledger is checked for count conservation
    before it is returned.
    """

    def __init__(self, config: OracleConfig) -> None:
        self.config = config

    # -----------------------------------------------------------------------
    # Preparation
    # -----------------------------------------------------------------------

    def _align(self, res: Recording) -> Recording:
        transform = self.config.alignment.transform
        if transform.kind == TransformKind.IDENTITY:
            return res
        aligned = [apply_transform(transform, o) for o in res.observations()]
        logger.debug("Aligned %d ReS observations with a %s transform", len(aligned), transform.kind.value)
        return build_recording(res.role, aligned, res.sensor_meta, res.frame_times)

    def _relabel(self, sut: Recording) -> Recording:
        if self.config.probabilistic.class_policy != ClassPolicy.ARGMAX:
            return sut
        relabeled = [o.moved(class_label=argmax_label(o)) for o in sut.observations()]
        return build_recording(sut.role, relabeled, sut.sensor_meta, sut.frame_times)

    def _viewer(self, sut: Recording) -> Point:
        origin = sut.sensor_meta.get("origin")
        if isinstance(origin, (list, tuple)) and len(origin) == 2:
            return (float(origin[0]), float(origin[1]))
        return self.config.occlusion.viewer

    # -----------------------------------------------------------------------
    # Frames
    # -----------------------------------------------------------------------

    def _match_frame(
        self,
        filtered: FilteredFrame,
        delays: Dict[ObsKey, float],
        candidates: CandidateIndex,
    ) -> MatchFrame:
        rows = filtered.sut + tuple(c.obs for c in filtered.sut_rescue)
        cols = filtered.res + tuple(c.obs for c in filtered.res_rescue)
        cost = build_cost_matrix(rows, cols, self.config.distance, self.config.effective_threshold)
        rescue_rows = frozenset(range(len(filtered.sut), len(rows)))
        rescue_cols = frozenset(range(len(filtered.res), len(cols)))
        cost.forbid(sorted(rescue_rows), sorted(rescue_cols))
        self._admit_rescues(cost, filtered)
        for candidate in filtered.sut_rescue + filtered.res_rescue:
            candidates[(candidate.role, candidate.obs.key)] = candidate
        return MatchFrame(
            timestamp=filtered.timestamp,
            rows=rows,
            cols=cols,
            cost=cost,
            rescue_rows=rescue_rows,
            rescue_cols=rescue_cols,
            occlusion=tuple(filtered.occlusion.get(o.key) for o in cols) if filtered.occlusion else (),
            delays=_row_delays(rows, delays),
        )

    def _admit_rescues(self, cost: CostMatrix, filtered: FilteredFrame) -> None:
        """Gates every pairing of a border candidate the corner-case policy refuses."""
        policy = self.config.corner_cases
        n_sut, n_res = len(filtered.sut), len(filtered.res)
        for k, candidate in enumerate(filtered.sut_rescue):
            i = n_sut + k
            refused = [j for j in range(n_res) if not resolve_border_case(candidate, cost.breakdown(i, j), policy)]
            cost.forbid([i], refused)
        for k, candidate in enumerate(filtered.res_rescue):
            j = n_res + k
            refused = [i for i in range(n_sut) if not resolve_border_case(candidate, cost.breakdown(i, j), policy)]
            cost.forbid(refused, [j])

    def _annex_frame(self, filtered: FilteredFrame, delays: Dict[ObsKey, float]) -> Optional[MatchFrame]:
        if not filtered.unreliable_sut and not filtered.unreliable_res:
            return None
        rows, cols = filtered.unreliable_sut, filtered.unreliable_res
        return MatchFrame(
            timestamp=filtered.timestamp,
            rows=rows,
            cols=cols,
            cost=build_cost_matrix(rows, cols, self.config.distance, self.config.effective_threshold),
            delays=_row_delays(rows, delays),
        )

    # -----------------------------------------------------------------------
    # Post-processing
    # -----------------------------------------------------------------------

    def _settle_rescues(
        self, events: Sequence[MatchEvent], exclusions: List[ExclusionTag], candidates: CandidateIndex,
    ) -> List[MatchEvent]:
        """
        Drops the exclusion tag of every matched border candidate. _match_frame
        only lets a candidate pair where the border policy accepts it.
        """
        lifted: Set[ExclusionTag] = set()
        for e in events:
            if e.kind != EventKind.TP or EventFlag.BORDER_RESCUED not in e.flags:
                continue
            t = time_key(e.timestamp)
            candidate = candidates.get((Role.SUT, (e.sut_id or "", t))) or candidates.get((Role.RES, (e.res_id or "", t)))
            if candidate is not None:
                lifted.add(candidate.tag)
        if lifted:
            exclusions[:] = [t for t in exclusions if t not in lifted]
            logger.debug("Rescued %d border observations", len(lifted))
        return list(events)

    def _flag_latency(self, events: Sequence[MatchEvent], starts: Dict[str, float]) -> List[MatchEvent]:
        policy = self.config.temporal
        if policy.basis != TimestampBasis.AVAILABILITY:
            return list(events)
        out = []
        for e in events:
            start = starts.get(e.res_id or "")
            if e.kind == EventKind.FN and start is not None and e.timestamp < start + latency_at(policy, start):
                e = e.with_flag(EventFlag.LATENCY)
            out.append(e)
        return out

    # -----------------------------------------------------------------------
    # Evaluation
    # -----------------------------------------------------------------------

    def evaluate(self, res: Recording, sut: Recording) -> VerdictLedger:
        """
        Judges *sut* against *res* and returns the complete ledger.

        Raises GeometryError, TemporalError or LedgerInvariantError when a stage
        cannot be carried out on the given inputs.
        """
        cfg = self.config
        res_aligned = self._align(res)
        sut_labeled = self._relabel(sut)
        res_b, sut_b = apply_timestamp_basis(res_aligned, sut_labeled, cfg.temporal)
        delays = sut_delays(sut_labeled, cfg.temporal)
        grid = sampling_grid(sut_b, res_b)
        synced: List[SyncedPair] = [synchronize(track, grid, cfg.temporal) for track in res_b.tracks]
        logger.debug("Sampling grid has %d frames, %d ReS tracks resampled", len(grid), len(synced))

        res_at: Dict[float, List[ObjectObservation]] = {}
        for pair in synced:
            for obs in pair.resampled:
                res_at.setdefault(time_key(obs.timestamp), []).append(obs)
        sut_at: Dict[float, List[ObjectObservation]] = {}
        for obs in sut_b.observations():
            sut_at.setdefault(time_key(obs.timestamp), []).append(obs)

        viewer = self._viewer(sut)
        exclusions: List[ExclusionTag] = []
        candidates: CandidateIndex = {}
        frames: List[MatchFrame] = []
        annex_frames: List[MatchFrame] = []
        for t in grid:
            k = time_key(t)
            view = FrameView(
                timestamp=t,
                sut=tuple(sorted(sut_at.get(k, []), key=lambda o: o.track_id)),
                res=tuple(sorted(res_at.get(k, []), key=lambda o: o.track_id)),
            )
            filtered = filter_frame(view, cfg, viewer)
            exclusions.extend(filtered.exclusions)
            frames.append(self._match_frame(filtered, delays, candidates))
            annex = self._annex_frame(filtered, delays)
            if annex is not None:
                annex_frames.append(annex)

        result = match_lifetimes(frames, cfg.assignment, cfg.distance.class_gate)
        events = self._settle_rescues(result.events, exclusions, candidates)

        overhangs: List[OverhangFrame] = [o for pair in synced for o in pair.overhangs]
        overhangs.extend(result.overhangs)
        overhang_events, overhang_tags = resolve_overhangs(overhangs, cfg.temporal)
        events.extend(overhang_events)
        exclusions.extend(overhang_tags)

        starts = {track.track_id: track.start for track in res_aligned.tracks}
        events = classify_mismatch(events, cfg.probabilistic.misclassification)
        events = apply_gap_policy(events, cfg.assignment)
        events = self._flag_latency(events, starts)

        annex_cfg = replace(cfg.assignment, lifetime=Lifetime.FRAME, sticky=False, track_threshold_mean_m=None)
        annex_result = match_lifetimes(annex_frames, annex_cfg, cfg.distance.class_gate, partner_overhangs=False)
        annex_events = list(annex_result.events)

        notes: List[str] = []
        if cfg.assignment.cardinality == Cardinality.N_N:
            notes.append(N_N_NOTE)
        context = LedgerContext(
            sut_input=sut_b.n_observations,
            res_input=sum(len(p.resampled) + len(p.overhangs) for p in synced),
            frame_period_s=median_period(grid),
            res_track_starts=dict(sorted(starts.items())),
            basis=cfg.temporal.basis.value,
            tool_version=TOOL_VERSION,
            notes=tuple(notes),
        )
        ledger = VerdictLedger(
            events=tuple(sorted(events, key=lambda e: e.sort_key)),
            exclusions=tuple(sorted(exclusions, key=exclusion_sort_key)),
            config_echo=cfg,
            annex=tuple(sorted(annex_events, key=lambda e: e.sort_key)),
            context=context,
        )
        check_conservation(ledger)
        logger.info("Evaluated %d frames: %d TP, %d FP, %d FN, %d excluded",
                    len(grid), ledger.count(EventKind.TP), ledger.count(EventKind.FP),
                    ledger.count(EventKind.FN), len(ledger.exclusions))
        return ledger


def _row_delays(rows: Sequence[ObjectObservation], delays: Dict[ObsKey, float]) -> Tuple[Optional[float], ...]:
    return tuple(delays.get(o.key) for o in rows) if delays else ()

def exclusion_sort_key(tag: ExclusionTag) -> Tuple[float, str, str, str]:
    return (time_key(tag.timestamp), tag.role.value, tag.track_id, tag.reason.value)


def evaluate(res: Recording, sut: Recording, cfg: OracleConfig) -> VerdictLedger:
    """Convenience wrapper around OracleEngine(cfg).evaluate."""
    return OracleEngine(cfg).evaluate(res, sut)
