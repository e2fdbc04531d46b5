import pytest

from oracle import evaluate
from scenes import case_config, counts, intersection_scene, outcomes, timeline_scenes

pytestmark = pytest.mark.integration


def _cases(scenes):
    return [pytest.param(scene, case, id=f"{scene.name}-{case.name}") for scene in scenes for case in scene.cases]


INTERSECTION = intersection_scene()
TIMELINES = timeline_scenes()
ALL_CASES = _cases([INTERSECTION, *TIMELINES.values()])


# ---------------------------------------------------------------------------
# Documented verdicts
# ---------------------------------------------------------------------------

class TestSceneReplay:
    @pytest.mark.parametrize("scene, case", ALL_CASES)
    def test_counts(self, scene, case):
        ledger = evaluate(scene.res, scene.sut, case_config(scene, case))
        assert counts(ledger) == dict(case.counts)

    @pytest.mark.parametrize("scene, case", ALL_CASES)
    def test_per_object_outcomes(self, scene, case):
        ledger = evaluate(scene.res, scene.sut, case_config(scene, case))
        actual = {key: outcomes(ledger, *key) for key in case.verdicts}
        assert actual == dict(case.verdicts)


# ---------------------------------------------------------------------------
# Scene structure
# ---------------------------------------------------------------------------

class TestSceneCatalogue:
    def test_intersection_runs_on_a_shipped_config(self):
        cfg = case_config(INTERSECTION, INTERSECTION.case("baseline"))
        assert cfg.name == "nuscenes_style + intersection geometry"
        assert cfg.occlusion.policy.value == "exclude_if_occluded"

    def test_timeline_scene_names(self):
        assert sorted(TIMELINES) == ["async_pair", "fragmented"]

    def test_unknown_case_raises(self):
        with pytest.raises(KeyError):
            INTERSECTION.case("nope")

    def test_every_object_is_documented_in_the_baseline(self):
        documented = {track_id for _, track_id in INTERSECTION.case("baseline").verdicts}
        present = {t.track_id for t in INTERSECTION.res.tracks} | {t.track_id for t in INTERSECTION.sut.tracks}
        assert documented == present

    def test_switching_the_case_changes_only_the_named_objects(self):
        baseline = INTERSECTION.case("baseline").verdicts
        rescue = INTERSECTION.case("fuzzy_rescue").verdicts
        changed = sorted(key[1] for key in baseline if baseline[key] != rescue[key])
        assert changed == ["pedestrian_at_roadworks_edge", "pedestrian_at_roadworks_edge_det"]
