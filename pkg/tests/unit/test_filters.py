import math

import pytest

from builders import make_obs
from config_types import (
    AovSpec, AreaPolicy, AreaStage, BorderPolicy, ClassPolicy, CornerCaseConfig, OcclusionConfig, OcclusionPolicy,
    OcclusionTargets, OracleConfig, Polygon2D, ProbCurve, ProbMap, ProbabilisticConfig, Sector, UnreliablePolicy,
)
from custom_types import CostBreakdown, ExclusionReason, ExclusionStage, Role
from filters import (
    AovClass, aov_active, apply_area_policy, area_check, areas_active, argmax_label, aov_reason, classify_aov,
    confidence_gate, detection_probability, filter_frame, is_unreliable, occlusion_filter, resolve_border_case,
    visibility_bin,
)
from format_types import BorderCandidate, FrameView


def square(x0: float, y0: float, x1: float, y1: float) -> Polygon2D:
    return Polygon2D(vertices=((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


RES_AOV = square(0.0, -10.0, 50.0, 10.0)
SUT_AOV = Sector(origin=(0.0, 0.0), range_m=30.0, fov_rad=math.pi / 2)


# ---------------------------------------------------------------------------
# Area of vision
# ---------------------------------------------------------------------------

class TestAov:
    def test_classify_all_four_cases(self):
        spec = AovSpec(res_aov=RES_AOV, sut_aov=SUT_AOV)
        assert classify_aov(make_obs(x=10.0), spec) == AovClass.BOTH
        assert classify_aov(make_obs(x=40.0), spec) == AovClass.RES_ONLY
        assert classify_aov(make_obs(x=20.0, y=-11.0), spec) == AovClass.SUT_ONLY
        assert classify_aov(make_obs(x=-10.0), spec) == AovClass.NEITHER

    def test_outside_res_aov_is_excluded_by_default(self):
        spec = AovSpec(res_aov=RES_AOV, sut_aov=SUT_AOV)
        reason = aov_reason(make_obs(x=20.0, y=-11.0), spec, UnreliablePolicy.ANNEX)
        assert reason is not None
        assert reason[0] == ExclusionReason.OUTSIDE_RES_AOV

    def test_outside_sut_aov_kept_unless_configured(self):
        spec = AovSpec(res_aov=RES_AOV, sut_aov=SUT_AOV)
        assert aov_reason(make_obs(x=40.0), spec, UnreliablePolicy.ANNEX) is None
        strict = AovSpec(res_aov=RES_AOV, sut_aov=SUT_AOV, exclude_outside_sut_aov=True)
        reason = aov_reason(make_obs(x=40.0), strict, UnreliablePolicy.ANNEX)
        assert reason is not None
        assert reason[0] == ExclusionReason.OUTSIDE_SUT_AOV

    def test_detection_probability_interpolates_over_range(self):
        curve = ProbCurve(origin=(0.0, 0.0), points=((0.0, 1.0), (100.0, 0.0)))
        assert detection_probability(curve, (30.0, 40.0)) == pytest.approx(0.5)

    def test_unreliable_below_p_min(self):
        curve = ProbCurve(origin=(0.0, 0.0), points=((0.0, 1.0), (100.0, 0.0)))
        spec = AovSpec(prob_map=ProbMap(res=curve), p_min=0.6)
        unreliable, detail = is_unreliable(make_obs(x=50.0), spec)
        assert unreliable
        assert "p_detect[ReS]" in detail
        assert not is_unreliable(make_obs(x=10.0), spec)[0]

    def test_include_policy_keeps_unreliable_observations(self):
        curve = ProbCurve(origin=(0.0, 0.0), points=((0.0, 1.0), (100.0, 0.0)))
        spec = AovSpec(prob_map=ProbMap(sut=curve), p_min=0.6)
        reason = aov_reason(make_obs(x=50.0), spec, UnreliablePolicy.ANNEX)
        assert reason is not None and reason[0] == ExclusionReason.BELOW_P_MIN
        assert aov_reason(make_obs(x=50.0), spec, UnreliablePolicy.INCLUDE) is None


# ---------------------------------------------------------------------------
# Occlusion
# ---------------------------------------------------------------------------

class TestOcclusion:
    def _view(self):
        target = make_obs(track_id="target", x=20.0)
        blocker = make_obs(track_id="blocker", x=10.0, width=4.0)
        sut = make_obs(track_id="sut_target", x=20.3)
        return FrameView(timestamp=0.0, sut=(sut,), res=(blocker, target))

    def test_ignore_computes_nothing(self):
        assert occlusion_filter(self._view(), OcclusionConfig(), (0.0, 0.0), 2.0) == ({}, [])

    def test_exclude_hidden_res_object(self):
        cfg = OcclusionConfig(policy=OcclusionPolicy.EXCLUDE_IF_OCCLUDED, theta=1.0, apply_to=OcclusionTargets.RES)
        fractions, tags = occlusion_filter(self._view(), cfg, (0.0, 0.0), 2.0)
        assert fractions[("target", 0.0)] == pytest.approx(1.0)
        assert fractions[("blocker", 0.0)] == pytest.approx(0.0)
        assert [(t.role, t.track_id, t.reason) for t in tags] == [(Role.RES, "target", ExclusionReason.OCCLUDED)]

    def test_apply_to_both_skips_the_sut_counterpart(self):
        cfg = OcclusionConfig(policy=OcclusionPolicy.EXCLUDE_IF_OCCLUDED, theta=1.0, apply_to=OcclusionTargets.BOTH)
        _, tags = occlusion_filter(self._view(), cfg, (0.0, 0.0), 2.0)
        assert sorted((t.role.value, t.track_id) for t in tags) == [("ReS", "target"), ("SUT", "sut_target")]

    def test_test_anyway_keeps_everything(self):
        cfg = OcclusionConfig(policy=OcclusionPolicy.TEST_ANYWAY)
        fractions, tags = occlusion_filter(self._view(), cfg, (0.0, 0.0), 2.0)
        assert tags == []
        assert fractions[("target", 0.0)] == pytest.approx(1.0)

    @pytest.mark.parametrize("occlusion, label", [
        (0.0, "0.80-1.00"),
        (0.5, "0.40-0.60"),
        (1.0, "0.00-0.40"),
    ])
    def test_visibility_bins(self, occlusion, label):
        assert visibility_bin(occlusion, (0.4, 0.6, 0.8)) == label


# ---------------------------------------------------------------------------
# Relevant areas
# ---------------------------------------------------------------------------

class TestAreas:
    def test_exclude_wins_over_include(self):
        policy = AreaPolicy(include=(square(0, 0, 20, 20),), exclude=(square(5, 5, 10, 10),))
        verdict = area_check(make_obs(x=6.0, y=7.0), policy)
        assert verdict is not None
        assert verdict[0] == ExclusionReason.NO_TEST_AREA
        assert verdict[2] == pytest.approx(1.0)

    def test_outside_include(self):
        policy = AreaPolicy(include=(square(0, 0, 20, 20),))
        verdict = area_check(make_obs(x=23.0, y=10.0), policy)
        assert verdict is not None
        assert verdict[2] == pytest.approx(3.0)

    def test_class_not_allowed(self):
        policy = AreaPolicy(class_allow=("car",))
        verdict = area_check(make_obs(cls="tram"), policy)
        assert verdict is not None
        assert verdict[0] == ExclusionReason.CLASS_EXCLUDED
        assert verdict[2] is None

    def test_beyond_class_range(self):
        policy = AreaPolicy(max_range_by_class={"pedestrian": 40.0})
        verdict = area_check(make_obs(cls="pedestrian", x=50.0), policy)
        assert verdict is not None
        assert verdict[0] == ExclusionReason.BEYOND_CLASS_RANGE
        assert verdict[2] == pytest.approx(10.0)
        assert area_check(make_obs(cls="car", x=50.0), policy) is None

    def test_pre_reference_filters_only_res(self):
        policy = AreaPolicy(exclude=(square(-5, -5, 5, 5),), stage=AreaStage.PRE_REFERENCE)
        res, sut, tags = apply_area_policy([make_obs(track_id="r")], [make_obs(track_id="s")], policy)
        assert res == []
        assert [o.track_id for o in sut] == ["s"]
        assert [(t.role, t.stage) for t in tags] == [(Role.RES, ExclusionStage.PRE_REFERENCE)]

    def test_pre_matching_filters_both(self):
        policy = AreaPolicy(exclude=(square(-5, -5, 5, 5),))
        res, sut, tags = apply_area_policy([make_obs(track_id="r")], [make_obs(track_id="s")], policy)
        assert res == [] and sut == []
        assert len(tags) == 2

    def test_post_matching_only_tags(self):
        policy = AreaPolicy(exclude=(square(-5, -5, 5, 5),), stage=AreaStage.POST_MATCHING)
        res, sut, tags = apply_area_policy([make_obs(track_id="r")], [make_obs(track_id="s")], policy)
        assert len(res) == 1 and len(sut) == 1
        assert all(t.tag_only for t in tags)


# ---------------------------------------------------------------------------
# Border cases
# ---------------------------------------------------------------------------

class TestBorderCase:
    def _candidate(self, distance: float) -> BorderCandidate:
        obs = make_obs()
        policy = AreaPolicy(exclude=(square(-5, -5, 5, 5),))
        _, _, tags = apply_area_policy([obs], [], policy)
        return BorderCandidate(obs=obs, role=Role.RES, tag=tags[0], boundary_distance_m=distance)

    def test_hard_cut_never_rescues(self):
        cost = CostBreakdown.build(0.5, {}, False)
        assert not resolve_border_case(self._candidate(0.1), cost, CornerCaseConfig())

    def test_fuzzy_rescue_within_margin(self):
        policy = CornerCaseConfig(border=BorderPolicy.FUZZY_RESCUE, margin_m=1.0)
        cost = CostBreakdown.build(0.5, {}, False)
        assert resolve_border_case(self._candidate(0.8), cost, policy)
        assert not resolve_border_case(self._candidate(1.2), cost, policy)

    def test_fuzzy_rescue_refuses_gated_pair(self):
        policy = CornerCaseConfig(border=BorderPolicy.FUZZY_RESCUE, margin_m=1.0)
        cost = CostBreakdown.build(3.0, {}, True)
        assert not resolve_border_case(self._candidate(0.1), cost, policy)


# ---------------------------------------------------------------------------
# Confidence
# ---------------------------------------------------------------------------

class TestConfidence:
    def test_argmax_breaks_ties_alphabetically(self):
        assert argmax_label(make_obs(cls="x", class_confs={"truck": 0.4, "car": 0.4, "bus": 0.2})) == "car"

    def test_argmax_without_confidences_keeps_label(self):
        assert argmax_label(make_obs(cls="van")) == "van"

    def test_gate_on_existence(self):
        kept, tags = confidence_gate(
            [make_obs(track_id="low", existence_conf=0.4), make_obs(track_id="high", existence_conf=0.6),
             make_obs(track_id="none")],
            0.5, ClassPolicy.NONE,
        )
        assert [o.track_id for o in kept] == ["high", "none"]
        assert [(t.track_id, t.reason) for t in tags] == [("low", ExclusionReason.BELOW_CONF)]

    def test_argmax_relabels_kept_observations(self):
        kept, _ = confidence_gate([make_obs(cls="car", class_confs={"truck": 0.7, "car": 0.3})], 0.0, ClassPolicy.ARGMAX)
        assert kept[0].class_label == "truck"


# ---------------------------------------------------------------------------
# Frame pipeline
# ---------------------------------------------------------------------------

class TestFilterFrame:
    def test_first_filter_wins(self):
        cfg = OracleConfig(aov=AovSpec(res_aov=RES_AOV), probabilistic=ProbabilisticConfig(tau_exist=0.5))
        outside = make_obs(track_id="s", x=-20.0, existence_conf=0.1)
        filtered = filter_frame(FrameView(0.0, (outside,), ()), cfg, (0.0, 0.0))
        assert filtered.sut == ()
        assert [t.reason for t in filtered.exclusions] == [ExclusionReason.OUTSIDE_RES_AOV]

    def test_below_conf_sut_gets_no_post_matching_tag(self):
        cfg = OracleConfig(
            areas=AreaPolicy(exclude=(square(-5, -5, 5, 5),), stage=AreaStage.POST_MATCHING),
            probabilistic=ProbabilisticConfig(tau_exist=0.5),
        )
        low = make_obs(track_id="s", existence_conf=0.1)
        filtered = filter_frame(FrameView(0.0, (low,), ()), cfg, (10.0, 10.0))
        assert [t.reason for t in filtered.exclusions] == [ExclusionReason.BELOW_CONF]

    def test_fuzzy_rescue_collects_border_candidates(self):
        cfg = OracleConfig(
            areas=AreaPolicy(exclude=(square(-5, -5, 5, 5),)),
            corner_cases=CornerCaseConfig(border=BorderPolicy.FUZZY_RESCUE, margin_m=1.0),
        )
        near_edge = make_obs(track_id="r", x=4.5)
        deep = make_obs(track_id="d", x=0.0)
        filtered = filter_frame(FrameView(0.0, (), (deep, near_edge)), cfg, (20.0, 20.0))
        assert [c.obs.track_id for c in filtered.res_rescue] == ["r"]
        assert len(filtered.exclusions) == 2

    def test_unconfigured_filters_keep_every_observation(self):
        sut = (make_obs(track_id="s", x=-20.0), make_obs(track_id="t", x=300.0))
        res = (make_obs(track_id="r", x=-20.0),)
        filtered = filter_frame(FrameView(0.0, sut, res), OracleConfig(), (0.0, 0.0))
        assert filtered.sut == sut
        assert filtered.res == res
        assert filtered.exclusions == ()

    @pytest.mark.parametrize("aov, policy, active", [
        (AovSpec(), UnreliablePolicy.ANNEX, False),
        (AovSpec(sut_aov=SUT_AOV), UnreliablePolicy.ANNEX, True),
        (AovSpec(prob_map=ProbMap(res=ProbCurve(origin=(0.0, 0.0), points=((0.0, 1.0), (50.0, 0.0))))),
         UnreliablePolicy.ANNEX, True),
        (AovSpec(prob_map=ProbMap(res=ProbCurve(origin=(0.0, 0.0), points=((0.0, 1.0), (50.0, 0.0))))),
         UnreliablePolicy.INCLUDE, False),
    ])
    def test_aov_stage_runs_only_when_configured(self, aov, policy, active):
        assert aov_active(aov, policy) is active

    @pytest.mark.parametrize("areas, active", [
        (AreaPolicy(), False),
        (AreaPolicy(class_allow=()), True),
        (AreaPolicy(max_range_by_class={"car": 50.0}), True),
        (AreaPolicy(include=(square(0, 0, 1, 1),)), True),
    ])
    def test_area_stage_runs_only_when_configured(self, areas, active):
        assert areas_active(areas) is active
