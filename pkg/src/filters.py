import logging
import math
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from config_types import (
    AovSpec, AreaPolicy, AreaStage, BorderPolicy, ClassPolicy, CornerCaseConfig, OcclusionConfig,
    OcclusionPolicy, OcclusionTargets, OracleConfig, Point, ProbCurve, UnreliablePolicy,
)
from custom_types import (
    CostBreakdown, ExclusionReason, ExclusionStage, ExclusionTag, ObjectObservation, ObsKey, Role,
)
from format_types import BorderCandidate, FilteredFrame, FrameView
from geometry import (
    box_polygon, distance_to_boundary, in_region, occlusion_fraction, point_in_polygon,
)

logger = logging.getLogger(__name__)


class AovClass(str, Enum):
    BOTH = "both"
    RES_ONLY = "res_only"
    SUT_ONLY = "sut_only"
    NEITHER = "neither"


_STAGE_OF_AREA = {
    AreaStage.PRE_REFERENCE: ExclusionStage.PRE_REFERENCE,
    AreaStage.PRE_MATCHING: ExclusionStage.PRE_MATCHING,
    AreaStage.POST_MATCHING: ExclusionStage.POST_MATCHING,
}


def _tag(obs: ObjectObservation, role: Role, reason: ExclusionReason, stage: ExclusionStage,
         detail: str = "") -> ExclusionTag:
    return ExclusionTag(
        reason=reason, stage=stage, role=role, track_id=obs.track_id, timestamp=obs.timestamp,
        class_label=obs.class_label, x=obs.x, y=obs.y, detail=detail,
    )


# ---------------------------------------------------------------------------
# Area of vision
# ---------------------------------------------------------------------------

def classify_aov(obs: ObjectObservation, spec: AovSpec) -> AovClass:
    """Membership of the observation's center in the ReS and SUT areas of vision."""
    in_res = in_region(obs.position, spec.res_aov)
    in_sut = in_region(obs.position, spec.sut_aov)
    if in_res and in_sut:
        return AovClass.BOTH
    if in_res:
        return AovClass.RES_ONLY
    if in_sut:
        return AovClass.SUT_ONLY
    return AovClass.NEITHER


def detection_probability(curve: ProbCurve, p: Point) -> float:
    """Piecewise-linear detection probability at the range of *p* from the curve origin."""
    rng = math.hypot(p[0] - curve.origin[0], p[1] - curve.origin[1])
    ranges = [r for r, _ in curve.points]
    probs = [q for _, q in curve.points]
    return float(np.interp(rng, ranges, probs))


def is_unreliable(obs: ObjectObservation, spec: AovSpec) -> Tuple[bool, str]:
    """True when any configured detection-probability curve drops below p_min at *obs*."""
    if spec.prob_map is None:
        return False, ""
    for name, curve in (("ReS", spec.prob_map.res), ("SUT", spec.prob_map.sut)):
        if curve is None:
            continue
        p = detection_probability(curve, obs.position)
        if p < spec.p_min:
            return True, f"p_detect[{name}]={p:.3f} < p_min={spec.p_min:.3f}"
    return False, ""


def aov_active(spec: AovSpec, unreliable_policy: UnreliablePolicy) -> bool:
    """False when aov_reason can only return None: both areas unbounded and no annex map."""
    bounded = spec.res_aov is not None or spec.sut_aov is not None
    return bounded or (unreliable_policy == UnreliablePolicy.ANNEX and spec.prob_map is not None)


def aov_reason(obs: ObjectObservation, spec: AovSpec, unreliable_policy: UnreliablePolicy) -> Optional[Tuple[ExclusionReason, str]]:
    """First AOV-related exclusion reason for *obs*, or None when it stays."""
    aov = classify_aov(obs, spec)
    if spec.exclude_outside_res_aov and aov in (AovClass.SUT_ONLY, AovClass.NEITHER):
        return ExclusionReason.OUTSIDE_RES_AOV, f"aov={aov.value}"
    if spec.exclude_outside_sut_aov and aov in (AovClass.RES_ONLY, AovClass.NEITHER):
        return ExclusionReason.OUTSIDE_SUT_AOV, f"aov={aov.value}"
    if unreliable_policy == UnreliablePolicy.ANNEX:
        unreliable, detail = is_unreliable(obs, spec)
        if unreliable:
            return ExclusionReason.BELOW_P_MIN, detail
    return None


# ---------------------------------------------------------------------------
# Occlusion
# ---------------------------------------------------------------------------

def _blockers_for(target: ObjectObservation, scene: Sequence[ObjectObservation],
                  skip_within: Optional[float]) -> List[ObjectObservation]:
    footprint = box_polygon(target)
    blockers = []
    for other in scene:
        if other is target:
            continue
        if skip_within is not None and math.hypot(other.x - target.x, other.y - target.y) <= skip_within:
            continue
        if box_polygon(other).intersects(footprint):
            continue
        blockers.append(other)
    return blockers


def occlusion_filter(
    view: FrameView,
    cfg: OcclusionConfig,
    viewer: Point,
    match_threshold: float,
    res_targets: Optional[Sequence[ObjectObservation]] = None,
    sut_targets: Optional[Sequence[ObjectObservation]] = None,
) -> Tuple[Dict[ObsKey, float], List[ExclusionTag]]:
    """
    Occlusion fractions of the ReS targets and the exclusions the policy implies.

    Blockers are the ReS footprints of the frame. A footprint touching the
    target is never its blocker; SUT targets also skip ReS objects within
    *match_threshold*, their own counterparts. With test_anyway fractions are
    computed but nothing is excluded; with ignore nothing is computed.
    """
    if cfg.policy == OcclusionPolicy.IGNORE:
        return {}, []
    res_targets = view.res if res_targets is None else res_targets
    sut_targets = view.sut if sut_targets is None else sut_targets
    exclude = cfg.policy == OcclusionPolicy.EXCLUDE_IF_OCCLUDED

    fractions: Dict[ObsKey, float] = {}
    tags: List[ExclusionTag] = []
    for obs in res_targets:
        frac = occlusion_fraction(viewer, obs, _blockers_for(obs, view.res, None))
        fractions[obs.key] = frac
        if exclude and frac >= cfg.theta:
            tags.append(_tag(obs, Role.RES, ExclusionReason.OCCLUDED, ExclusionStage.PRE_MATCHING,
                             f"occlusion={frac:.2f} >= theta={cfg.theta:.2f}"))
    if exclude and cfg.apply_to == OcclusionTargets.BOTH:
        for obs in sut_targets:
            frac = occlusion_fraction(viewer, obs, _blockers_for(obs, view.res, match_threshold))
            if frac >= cfg.theta:
                tags.append(_tag(obs, Role.SUT, ExclusionReason.OCCLUDED, ExclusionStage.PRE_MATCHING,
                                 f"occlusion={frac:.2f} >= theta={cfg.theta:.2f}"))
    return fractions, tags


def visibility_bin(occlusion: float, edges: Sequence[float]) -> str:
    """Label of the visibility (1 − occlusion) bin, left-inclusive: "0.40-0.60"."""
    visibility = 1.0 - occlusion
    bounds = [0.0] + list(edges) + [1.0]
    for lo, hi in zip(bounds, bounds[1:]):
        if visibility < hi or hi == 1.0:
            return f"{lo:.2f}-{hi:.2f}"
    return f"{bounds[-2]:.2f}-1.00"


# ---------------------------------------------------------------------------
# Relevant areas
# ---------------------------------------------------------------------------

def area_check(obs: ObjectObservation, policy: AreaPolicy) -> Optional[Tuple[ExclusionReason, str, Optional[float]]]:
    """
    First area rule *obs* violates as (reason, detail, distance to the violated
    boundary). The distance is None when no boundary exists, as for class_excluded.
    """
    p = obs.position
    containing = [poly for poly in policy.exclude if point_in_polygon(p, poly)]
    if containing:
        depth = max(distance_to_boundary(p, poly) for poly in containing)
        return ExclusionReason.NO_TEST_AREA, f"inside exclude polygon, {depth:.2f} m from its edge", depth
    if policy.include and not any(point_in_polygon(p, poly) for poly in policy.include):
        gap = min(distance_to_boundary(p, poly) for poly in policy.include)
        return ExclusionReason.NO_TEST_AREA, f"outside include polygons by {gap:.2f} m", gap
    if policy.class_allow is not None and obs.class_label not in policy.class_allow:
        return ExclusionReason.CLASS_EXCLUDED, f"class {obs.class_label} not allowed", None
    limit = policy.max_range_by_class.get(obs.class_label)
    if limit is not None:
        rng = math.hypot(p[0] - policy.range_origin[0], p[1] - policy.range_origin[1])
        if rng > limit:
            return ExclusionReason.BEYOND_CLASS_RANGE, f"range {rng:.2f} m > {limit:.2f} m", rng - limit
    return None


def areas_active(policy: AreaPolicy) -> bool:
    return bool(policy.include or policy.exclude or policy.max_range_by_class) or policy.class_allow is not None


def apply_area_policy(
    res: Sequence[ObjectObservation],
    sut: Sequence[ObjectObservation],
    policy: AreaPolicy,
) -> Tuple[List[ObjectObservation], List[ObjectObservation], List[ExclusionTag]]:
    """
    Applies the area rules at the configured stage. pre_reference filters only
    ReS observations, pre_matching filters both, post_matching keeps everything
    and only records tags for the aggregation step. Exclude wins over include.
    """
    stage = _STAGE_OF_AREA[policy.stage]
    kept_res: List[ObjectObservation] = []
    kept_sut: List[ObjectObservation] = []
    tags: List[ExclusionTag] = []

    roles: List[Tuple[Role, Sequence[ObjectObservation], List[ObjectObservation]]] = [
        (Role.RES, res, kept_res), (Role.SUT, sut, kept_sut)]
    for role, observations, kept in roles:
        checked = role == Role.RES or policy.stage != AreaStage.PRE_REFERENCE
        for obs in observations:
            verdict = area_check(obs, policy) if checked else None
            if verdict is None:
                kept.append(obs)
                continue
            tags.append(_tag(obs, role, verdict[0], stage, verdict[1]))
            if stage == ExclusionStage.POST_MATCHING:
                kept.append(obs)
    return kept_res, kept_sut, tags


def resolve_border_case(candidate: BorderCandidate, cost: Optional[CostBreakdown], policy: CornerCaseConfig) -> bool:
    """
    Decides whether an area-excluded observation paired with a kept partner
    counts as a match. hard_cut never rescues; fuzzy_rescue rescues a non-gated
    pair whose excluded member lies within margin_m of the violated boundary.
    """
    if policy.border != BorderPolicy.FUZZY_RESCUE or cost is None or cost.gated:
        return False
    return candidate.boundary_distance_m <= policy.margin_m


def _border_candidates(
    tags: Sequence[ExclusionTag],
    observations: Dict[Tuple[Role, ObsKey], ObjectObservation],
    areas: AreaPolicy,
    corner_cases: CornerCaseConfig,
) -> Tuple[List[BorderCandidate], List[BorderCandidate]]:
    sut: List[BorderCandidate] = []
    res: List[BorderCandidate] = []
    if corner_cases.border != BorderPolicy.FUZZY_RESCUE:
        return sut, res
    for tag in tags:
        obs = observations[(tag.role, tag.key)]
        verdict = area_check(obs, areas)
        if verdict is None or verdict[2] is None or verdict[2] > corner_cases.margin_m:
            continue
        candidate = BorderCandidate(obs=obs, role=tag.role, tag=tag, boundary_distance_m=verdict[2])
        (sut if tag.role == Role.SUT else res).append(candidate)
    return sut, res


# ---------------------------------------------------------------------------
# Confidence
# ---------------------------------------------------------------------------

def argmax_label(obs: ObjectObservation) -> str:
    """Most confident class, ties broken alphabetically; the label itself without confidences."""
    if not obs.class_confs:
        return obs.class_label
    return min(obs.class_confs.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def confidence_gate(
    sut: Sequence[ObjectObservation], tau_exist: float, class_policy: ClassPolicy,
) -> Tuple[List[ObjectObservation], List[ExclusionTag]]:
    """
    Keeps SUT observations with existence_conf ≥ tau_exist; a missing
    confidence counts as 1.0. With argmax the label becomes the most confident class.
    """
    kept: List[ObjectObservation] = []
    tags: List[ExclusionTag] = []
    for obs in sut:
        if class_policy == ClassPolicy.ARGMAX:
            label = argmax_label(obs)
            if label != obs.class_label:
                obs = obs.moved(class_label=label)
        conf = 1.0 if obs.existence_conf is None else obs.existence_conf
        if conf < tau_exist:
            tags.append(_tag(obs, Role.SUT, ExclusionReason.BELOW_CONF, ExclusionStage.PRE_MATCHING,
                             f"existence {conf:.3f} < tau {tau_exist:.3f}"))
        else:
            kept.append(obs)
    return kept, tags


# ---------------------------------------------------------------------------
# Frame pipeline
# ---------------------------------------------------------------------------

def _without(observations: Sequence[ObjectObservation], keys: Set[ObsKey]) -> List[ObjectObservation]:
    return [o for o in observations if o.key not in keys]


def filter_frame(view: FrameView, cfg: OracleConfig, viewer: Point) -> FilteredFrame:
    """
    Runs the filters in their fixed order (aov, occlusion, areas, confidence)
    on one frame. Each excluded observation carries the tag of the first filter
    that removed it.
    """
    exclusions: List[ExclusionTag] = []
    unreliable: Dict[Role, List[ObjectObservation]] = {Role.SUT: [], Role.RES: []}
    kept: Dict[Role, List[ObjectObservation]] = {Role.SUT: list(view.sut), Role.RES: list(view.res)}

    if aov_active(cfg.aov, cfg.probabilistic.unreliable_policy):
        for role in (Role.RES, Role.SUT):
            observations, kept[role] = kept[role], []
            for obs in observations:
                verdict = aov_reason(obs, cfg.aov, cfg.probabilistic.unreliable_policy)
                if verdict is None:
                    kept[role].append(obs)
                    continue
                exclusions.append(_tag(obs, role, verdict[0], ExclusionStage.PRE_MATCHING, verdict[1]))
                if verdict[0] == ExclusionReason.BELOW_P_MIN:
                    unreliable[role].append(obs)

    fractions, occluded = occlusion_filter(
        view, cfg.occlusion, viewer, cfg.effective_threshold,
        res_targets=kept[Role.RES], sut_targets=kept[Role.SUT],
    )
    if occluded:
        exclusions.extend(occluded)
        for role in (Role.RES, Role.SUT):
            kept[role] = _without(kept[role], {t.key for t in occluded if t.role == role})

    sut_rescue: List[BorderCandidate] = []
    res_rescue: List[BorderCandidate] = []
    if areas_active(cfg.areas):
        res_kept, sut_kept, area_tags = apply_area_policy(kept[Role.RES], kept[Role.SUT], cfg.areas)
        removing = [t for t in area_tags if not t.tag_only]
        if removing:
            by_key = {(Role.RES, o.key): o for o in kept[Role.RES]}
            by_key.update({(Role.SUT, o.key): o for o in kept[Role.SUT]})
            sut_rescue, res_rescue = _border_candidates(removing, by_key, cfg.areas, cfg.corner_cases)
    else:
        res_kept, sut_kept, area_tags = kept[Role.RES], kept[Role.SUT], []

    tau, class_policy = cfg.probabilistic.tau_exist, cfg.probabilistic.class_policy
    sut_final, conf_tags = confidence_gate(sut_kept, tau, class_policy)
    gated_rescue: List[BorderCandidate] = []
    for candidate in sut_rescue:
        passed, _ = confidence_gate([candidate.obs], tau, class_policy)
        if passed:
            gated_rescue.append(candidate._replace(obs=passed[0]))
    sut_rescue = gated_rescue
    below_conf = {t.key for t in conf_tags}
    # a post-matching tag only stands for an observation that reaches matching
    area_tags = [t for t in area_tags if not (t.tag_only and t.role == Role.SUT and t.key in below_conf)]
    exclusions.extend(area_tags)
    exclusions.extend(conf_tags)

    return FilteredFrame(
        timestamp=view.timestamp,
        sut=tuple(sut_final),
        res=tuple(res_kept),
        exclusions=tuple(exclusions),
        sut_rescue=tuple(sut_rescue),
        res_rescue=tuple(res_rescue),
        unreliable_sut=tuple(unreliable[Role.SUT]),
        unreliable_res=tuple(unreliable[Role.RES]),
        occlusion=fractions,
    )
