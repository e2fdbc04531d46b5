"""
Hand-built scenes with documented verdicts.

intersection_scene: one frame of an urban intersection with the classic
corner cases (occlusion, no-test area, duplicate detection, border object,
footprint offsets, objects outside either field of view).

timeline_scenes: two short tracks that exercise the temporal policies,
asynchronous sampling with lead/tail overhangs and a fragmented SUT track
spanning two ReS tracks.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from config_loader import load_config, merge_config
from config_types import OracleConfig
from custom_types import EventKind, ObjectObservation, Recording, Role, VerdictLedger
from recording_io import build_recording
from synth import CLASS_EXTENTS

CONFIGS_DIR = Path(__file__).parent.resolve() / "configs"

Outcomes = Tuple[str, ...]


@dataclass(frozen=True)
class PolicyCase:
    """
    One configuration of a scene and the ledger it must produce.

    name     — short label
    overlay  — config document merged over the scene config
    counts   — expected tp / fp / fn / excluded / id_switches
    verdicts — (role, track id) → sorted outcomes of that object, see outcomes()
    """
    name: str
    overlay: Mapping[str, Any]
    counts: Mapping[str, int]
    verdicts: Mapping[Tuple[Role, str], Outcomes] = field(default_factory=dict)


@dataclass(frozen=True)
class ConstructedScene:
    """
    res, sut    — the two recordings
    base_config — shipped config the scene is judged under, "" for the defaults
    overlay     — scene geometry and policies merged over the base config
    cases       — documented policy combinations
    """
    name: str
    res: Recording
    sut: Recording
    base_config: str
    overlay: Mapping[str, Any]
    cases: Tuple[PolicyCase, ...]

    def case(self, name: str) -> PolicyCase:
        for case in self.cases:
            if case.name == name:
                return case
        raise KeyError(f"Scene '{self.name}' has no case '{name}'")


def _obs(track_id: str, cls: str, t: float, x: float, y: float, **changes: Any) -> ObjectObservation:
    length, width = CLASS_EXTENTS[cls]
    obs = ObjectObservation(timestamp=t, track_id=track_id, class_label=cls, x=x, y=y,
                            length=length, width=width, yaw=0.0)
    return obs.moved(**changes) if changes else obs


def shipped_config(name: str) -> OracleConfig:
    """Loads src/configs/<name>.json; an empty name yields the defaults."""
    if not name:
        return OracleConfig()
    return load_config(CONFIGS_DIR / f"{name}.json")


def case_config(scene: ConstructedScene, case: PolicyCase, base: Optional[OracleConfig] = None) -> OracleConfig:
    """The base config with the scene overlay and then the case overlay merged in."""
    cfg = base if base is not None else shipped_config(scene.base_config)
    return merge_config(merge_config(cfg, scene.overlay), case.overlay)


def outcomes(ledger: VerdictLedger, role: Role, track_id: str) -> Outcomes:
    """
    Sorted verdicts of one object: the event kinds it takes part in (tp, fp, fn)
    and "excluded:<reason>" for each exclusion tag.
    """
    found = []
    for e in ledger.events:
        if e.kind == EventKind.ID_SWITCH:
            continue
        owner = e.res_id if role == Role.RES else e.sut_id
        if owner == track_id and not (role == Role.RES and e.kind == EventKind.FP) \
                and not (role == Role.SUT and e.kind == EventKind.FN):
            found.append(e.kind.value)
    found.extend(f"excluded:{t.reason.value}" for t in ledger.exclusions if t.role == role and t.track_id == track_id)
    return tuple(sorted(found))


def counts(ledger: VerdictLedger) -> Dict[str, int]:
    return {
        "tp": ledger.count(EventKind.TP),
        "fp": ledger.count(EventKind.FP),
        "fn": ledger.count(EventKind.FN),
        "excluded": len(ledger.exclusions),
        "id_switches": ledger.count(EventKind.ID_SWITCH),
    }


def _verdicts(res: Mapping[str, Iterable[str]], sut: Mapping[str, Iterable[str]]) -> Dict[Tuple[Role, str], Outcomes]:
    table: Dict[Tuple[Role, str], Outcomes] = {}
    for role, entries in ((Role.RES, res), (Role.SUT, sut)):
        for track_id, found in entries.items():
            table[(role, track_id)] = tuple(sorted(found))
    return table


# ---------------------------------------------------------------------------
# Intersection
# ---------------------------------------------------------------------------

_INTERSECTION_RES: Dict[str, Outcomes] = {
    "truck_ahead": ("tp",),
    "missed_car": ("fn",),
    "pedestrian_in_roadworks": ("excluded:no_test_area",),
    "pedestrian_far": ("fn",),
    "cyclist_near": ("tp",),
    "cyclist_far": ("fn",),
    "cyclist_behind_truck": ("excluded:occluded",),
    "pedestrian_behind_truck": ("excluded:occluded",),
    "truck_long": ("fn",),
    "pedestrian_crossing": ("tp",),
    "pedestrian_at_roadworks_edge": ("fn",),
}

_INTERSECTION_SUT: Dict[str, Outcomes] = {
    "truck_ahead_det": ("tp",),
    "ghost_car": ("fp",),
    "pedestrian_in_roadworks_det": ("excluded:no_test_area",),
    "cyclist_det": ("tp",),
    "truck_rear_det": ("fp",),
    "pedestrian_beyond_reference": ("excluded:outside_res_aov",),
    "parked_car_beyond_reference": ("excluded:outside_res_aov",),
    "pedestrian_crossing_det": ("tp",),
    "pedestrian_crossing_dup": ("fp",),
    "pedestrian_at_roadworks_edge_det": ("excluded:no_test_area",),
}


def intersection_scene() -> ConstructedScene:
    """
    Single frame at t = 0 seen from an ego vehicle at the origin looking along +x.

    The ReS covers the rectangle x ∈ [-5, 60], y ∈ [-25, 20]; the SUT sees a
    120° sector of 35 m. A no-test polygon (roadworks) spans x ∈ [15, 30],
    y ∈ [15, 19.5]. Judged under the nuscenes_style config with occlusion
    exclusion switched on:

    - truck_ahead is found (TP); ghost_car has no real counterpart (FP);
      missed_car is never detected (FN)
    - pedestrian_in_roadworks and its detection sit in the no-test area
    - pedestrian_far lies beyond the SUT's 35 m reach; counted as FN unless
      exclude_outside_sut_aov is on
    - one cyclist detection between two cyclists matches the nearer one
    - cyclist_behind_truck and pedestrian_behind_truck are hidden by truck_ahead
    - truck_long is detected only at its rear end, 4 m from its center (FP + FN)
    - two detections beyond the ReS field of view are excluded
    - pedestrian_crossing is detected twice (TP + FP under one_one, 2 TP under n_one)
    - the detection of pedestrian_at_roadworks_edge falls 0.4 m into the
      roadworks; hard_cut loses the pair (FN), fuzzy_rescue keeps it (TP)
    """
    t = 0.0
    res = build_recording(Role.RES, [
        _obs("truck_ahead", "truck", t, 15.0, 0.0),
        _obs("missed_car", "car", t, 30.0, -8.0),
        _obs("pedestrian_in_roadworks", "pedestrian", t, 20.0, 17.0),
        _obs("pedestrian_far", "pedestrian", t, 34.0, 12.0),
        _obs("cyclist_near", "bicycle", t, 25.0, -5.0),
        _obs("cyclist_far", "bicycle", t, 27.0, -5.0),
        _obs("cyclist_behind_truck", "bicycle", t, 30.0, 0.3),
        _obs("pedestrian_behind_truck", "pedestrian", t, 35.0, -0.5),
        _obs("truck_long", "truck", t, 22.0, -22.0),
        _obs("pedestrian_crossing", "pedestrian", t, 30.0, 8.0),
        _obs("pedestrian_at_roadworks_edge", "pedestrian", t, 27.0, 14.6),
    ], {"source": "intersection scene"})
    sut = build_recording(Role.SUT, [
        _obs("truck_ahead_det", "truck", t, 15.3, 0.1),
        _obs("ghost_car", "car", t, 25.0, 12.0),
        _obs("pedestrian_in_roadworks_det", "pedestrian", t, 20.2, 17.1),
        _obs("cyclist_det", "bicycle", t, 25.7, -5.0),
        _obs("truck_rear_det", "truck", t, 18.0, -22.0, length=2.0),
        _obs("pedestrian_beyond_reference", "pedestrian", t, 20.0, 24.0),
        _obs("parked_car_beyond_reference", "car", t, 22.0, 21.0),
        _obs("pedestrian_crossing_det", "pedestrian", t, 30.3, 8.1),
        _obs("pedestrian_crossing_dup", "pedestrian", t, 29.2, 8.6),
        _obs("pedestrian_at_roadworks_edge_det", "pedestrian", t, 27.1, 15.4),
    ], {"source": "intersection scene", "origin": [0.0, 0.0]}, [t])

    overlay: Dict[str, Any] = {
        "name": "nuscenes_style + intersection geometry",
        "aov": {
            "res_aov": {"polygon": [[-5.0, -25.0], [60.0, -25.0], [60.0, 20.0], [-5.0, 20.0]]},
            "sut_aov": {"sector": {"origin": [0.0, 0.0], "heading": 0.0, "range_m": 35.0, "fov_rad": 2.0944}},
        },
        "areas": {"exclude": [[[15.0, 15.0], [30.0, 15.0], [30.0, 19.5], [15.0, 19.5]]]},
        "occlusion": {"policy": "exclude_if_occluded", "theta": 1.0},
    }

    baseline = _verdicts(_INTERSECTION_RES, _INTERSECTION_SUT)
    cases = (
        PolicyCase("baseline", {}, {"tp": 3, "fp": 3, "fn": 5, "excluded": 7, "id_switches": 0}, baseline),
        PolicyCase(
            "fuzzy_rescue", {"corner_cases": {"border": "fuzzy_rescue", "margin_m": 1.0}},
            {"tp": 4, "fp": 3, "fn": 4, "excluded": 6, "id_switches": 0},
            {**baseline, **_verdicts({"pedestrian_at_roadworks_edge": ("tp",)},
                                     {"pedestrian_at_roadworks_edge_det": ("tp",)})},
        ),
        PolicyCase(
            "duplicates_allowed", {"assignment": {"cardinality": "n_one"}},
            {"tp": 4, "fp": 2, "fn": 5, "excluded": 7, "id_switches": 0},
            {**baseline, **_verdicts({"pedestrian_crossing": ("tp", "tp")}, {"pedestrian_crossing_dup": ("tp",)})},
        ),
        PolicyCase(
            "sut_reach", {"aov": {"exclude_outside_sut_aov": True}},
            {"tp": 3, "fp": 3, "fn": 4, "excluded": 8, "id_switches": 0},
            {**baseline, **_verdicts({"pedestrian_far": ("excluded:outside_sut_aov",)}, {})},
        ),
        PolicyCase(
            "occlusion_reported", {"occlusion": {"policy": "test_anyway"}},
            {"tp": 3, "fp": 3, "fn": 7, "excluded": 5, "id_switches": 0},
            {**baseline, **_verdicts({"cyclist_behind_truck": ("fn",), "pedestrian_behind_truck": ("fn",)}, {})},
        ),
    )
    return ConstructedScene("intersection", res, sut, "nuscenes_style", overlay, cases)


# ---------------------------------------------------------------------------
# Timelines
# ---------------------------------------------------------------------------

def _async_pair_scene() -> ConstructedScene:
    """
    A ReS track sampled at 0.0, 0.1, ..., 1.0 s and a SUT track at 0.04,
    0.14, ..., 0.94 s on the same path, 0.1 m to the side. Every SUT frame is a
    TP against the interpolated reference; the ReS frames at 0.0 s (lead,
    0.04 s early) and 1.0 s (tail, 0.06 s late) lie outside the SUT span.

    A second pair 8 m to the left: trailing_car is referenced on the SUT
    sample times 0.04 to 0.44 s only, while trailing_car_det goes on until
    0.94 s. Its five late frames are SUT overhangs 0.1 to 0.5 s past the
    reference.
    """
    res_times = [round(0.1 * k, 1) for k in range(11)]
    sut_times = [round(0.04 + 0.1 * k, 2) for k in range(10)]
    res = build_recording(Role.RES, [
        *(_obs("lead_car", "car", t, 5.0 + 2.0 * t, 0.0, vx=2.0) for t in res_times),
        *(_obs("trailing_car", "car", t, 5.0 + 2.0 * t, 8.0, vx=2.0) for t in sut_times[:5]),
    ], {"source": "timeline scene"})
    sut = build_recording(Role.SUT, [
        *(_obs("lead_car_det", "car", t, 5.0 + 2.0 * t, 0.1, vx=2.0) for t in sut_times),
        *(_obs("trailing_car_det", "car", t, 5.0 + 2.0 * t, 8.1, vx=2.0) for t in sut_times),
    ], {"source": "timeline scene"}, sut_times)

    def verdicts(lead: Outcomes, trailing_tail: Outcomes) -> Dict[Tuple[Role, str], Outcomes]:
        return _verdicts({"lead_car": ("tp",) * 10 + lead, "trailing_car": ("tp",) * 5},
                         {"lead_car_det": ("tp",) * 10, "trailing_car_det": ("tp",) * 5 + trailing_tail})

    dropped = "excluded:overhang_discarded"
    cases = (
        PolicyCase("fn_fp", {"temporal": {"overhang": "fn_fp"}},
                   {"tp": 15, "fp": 5, "fn": 2, "excluded": 0, "id_switches": 0},
                   verdicts(("fn", "fn"), ("fp",) * 5)),
        PolicyCase("discard", {"temporal": {"overhang": "discard"}},
                   {"tp": 15, "fp": 0, "fn": 0, "excluded": 7, "id_switches": 0},
                   verdicts((dropped,) * 2, (dropped,) * 5)),
        PolicyCase("subsequence_discard",
                   {"assignment": {"lifetime": "subsequence"}, "temporal": {"overhang": "discard"}},
                   {"tp": 15, "fp": 0, "fn": 0, "excluded": 7, "id_switches": 0},
                   verdicts((dropped,) * 2, (dropped,) * 5)),
        PolicyCase("threshold_50ms", {"temporal": {"overhang": "threshold", "dt_max_s": 0.05}},
                   {"tp": 15, "fp": 5, "fn": 1, "excluded": 1, "id_switches": 0},
                   verdicts(("fn", dropped), ("fp",) * 5)),
        PolicyCase("threshold_30ms", {"temporal": {"overhang": "threshold", "dt_max_s": 0.03}},
                   {"tp": 15, "fp": 5, "fn": 2, "excluded": 0, "id_switches": 0},
                   verdicts(("fn", "fn"), ("fp",) * 5)),
        PolicyCase("threshold_250ms", {"temporal": {"overhang": "threshold", "dt_max_s": 0.25}},
                   {"tp": 15, "fp": 3, "fn": 0, "excluded": 4, "id_switches": 0},
                   verdicts((dropped,) * 2, ("fp",) * 3 + (dropped,) * 2)),
    )
    return ConstructedScene("async_pair", res, sut, "", {}, cases)


def _fragmented_scene() -> ConstructedScene:
    """
    10 Hz, frames 0..16 on the path x = 10 + t. The ReS loses the object at
    frame 10 (crossing_car for frames 0-9, crossing_car_reacquired for 11-16);
    the SUT loses it at frame 6 (sut_track_early for 0-5, sut_track_late for 7-16).
    """
    times = [round(0.1 * k, 1) for k in range(17)]

    def frames(lo: int, hi: int) -> range:
        return range(lo, hi + 1)

    res = build_recording(Role.RES, [
        *(_obs("crossing_car", "car", times[k], 10.0 + times[k], 0.0, vx=1.0) for k in frames(0, 9)),
        *(_obs("crossing_car_reacquired", "car", times[k], 10.0 + times[k], 0.0, vx=1.0) for k in frames(11, 16)),
    ], {"source": "timeline scene"})
    sut = build_recording(Role.SUT, [
        *(_obs("sut_track_early", "car", times[k], 10.0 + times[k], 0.2, vx=1.0) for k in frames(0, 5)),
        *(_obs("sut_track_late", "car", times[k], 10.0 + times[k], 0.2, vx=1.0) for k in frames(7, 16)),
    ], {"source": "timeline scene"}, times)

    per_frame = _verdicts(
        {"crossing_car": ("tp",) * 9 + ("fn",), "crossing_car_reacquired": ("tp",) * 6},
        {"sut_track_early": ("tp",) * 6, "sut_track_late": ("tp",) * 9 + ("fp",)},
    )
    track_wise = _verdicts(
        {"crossing_car": ("tp",) * 6 + ("fn",) * 4, "crossing_car_reacquired": ("tp",) * 6},
        {"sut_track_early": ("tp",) * 6, "sut_track_late": ("tp",) * 6 + ("fp",) * 4},
    )
    cases = (
        PolicyCase("frame", {"assignment": {"lifetime": "frame"}},
                   {"tp": 15, "fp": 1, "fn": 1, "excluded": 0, "id_switches": 0}, per_frame),
        PolicyCase("subsequence", {"assignment": {"lifetime": "subsequence"}},
                   {"tp": 15, "fp": 1, "fn": 1, "excluded": 0, "id_switches": 1}, per_frame),
        PolicyCase("track", {"assignment": {"lifetime": "track", "track_threshold_mean_m": 1.5}},
                   {"tp": 12, "fp": 4, "fn": 4, "excluded": 0, "id_switches": 0}, track_wise),
        PolicyCase("track_discard", {"assignment": {"lifetime": "track", "track_threshold_mean_m": 1.5},
                                     "temporal": {"overhang": "discard"}},
                   {"tp": 12, "fp": 0, "fn": 0, "excluded": 8, "id_switches": 0},
                   _verdicts({"crossing_car": ("tp",) * 6 + ("excluded:overhang_discarded",) * 4},
                             {"sut_track_late": ("tp",) * 6 + ("excluded:overhang_discarded",) * 4})),
    )
    return ConstructedScene("fragmented", res, sut, "", {}, cases)


def timeline_scenes() -> Dict[str, ConstructedScene]:
    """The asynchronous-sampling scene and the fragmented-track scene, by name."""
    return {scene.name: scene for scene in (_async_pair_scene(), _fragmented_scene())}
