from hypothesis import given
from hypothesis import strategies as st

from builders import frames, make_recording, make_track
from config_types import Algorithm, AssignmentConfig, Cardinality, Lifetime, OracleConfig
from custom_types import EventKind, Role
from oracle import evaluate
from property.settings import DETERMINISM_SETTINGS, QUICK_SETTINGS, STANDARD_SETTINGS
from report import emit_report
from verdict import aggregate, check_conservation


@st.composite
def track_sets(draw, prefix: str, times):
    """Gap-free constant-velocity tracks packed into a few lanes so that they compete."""
    observations = []
    for k in range(draw(st.integers(0, 4))):
        start = draw(st.integers(0, len(times) - 1))
        end = draw(st.integers(start, len(times) - 1))
        observations += make_track(
            f"{prefix}{k}", times[start:end + 1],
            x0=draw(st.floats(-6.0, 6.0)), y0=3.0 * draw(st.integers(0, 2)), vx=draw(st.floats(-1.0, 1.0)),
            cls=draw(st.sampled_from(["car", "truck"])),
        )
    return observations


@st.composite
def scenes(draw):
    times = frames(draw(st.integers(1, 6)))
    res = make_recording(Role.RES, draw(track_sets("r", times)), frame_times=times)
    sut = make_recording(Role.SUT, draw(track_sets("s", times)), frame_times=times)
    return res, sut


@st.composite
def assignment_configs(draw) -> OracleConfig:
    lifetime = draw(st.sampled_from([Lifetime.FRAME, Lifetime.SUBSEQUENCE]))
    return OracleConfig(assignment=AssignmentConfig(
        algorithm=draw(st.sampled_from(list(Algorithm))),
        cardinality=draw(st.sampled_from(list(Cardinality))),
        lifetime=lifetime,
        sticky=lifetime == Lifetime.SUBSEQUENCE and draw(st.booleans()),
        max_gap_frames=draw(st.integers(0, 2)),
    ))


def counts(ledger):
    return ledger.count(EventKind.TP), ledger.count(EventKind.FP), ledger.count(EventKind.FN)


# ---------------------------------------------------------------------------
# Conservation
# ---------------------------------------------------------------------------

class TestConservation:
    @given(scene=scenes(), cfg=assignment_configs())
    @STANDARD_SETTINGS
    def test_every_observation_is_accounted_for(self, scene, cfg):
        res, sut = scene
        ledger = evaluate(res, sut, cfg)
        check_conservation(ledger)
        assert (ledger.context.sut_input, ledger.context.res_input) == (sut.n_observations, res.n_observations)

    @given(scene=scenes())
    @STANDARD_SETTINGS
    def test_one_one_counts_add_up(self, scene):
        res, sut = scene
        tp, fp, fn = counts(evaluate(res, sut, OracleConfig()))
        assert tp + fp == sut.n_observations
        assert tp + fn == res.n_observations

    @given(scene=scenes(), cfg=assignment_configs())
    @QUICK_SETTINGS
    def test_summary_agrees_with_ledger(self, scene, cfg):
        res, sut = scene
        ledger = evaluate(res, sut, cfg)
        summary = aggregate(ledger)
        assert (summary.tp, summary.fp, summary.fn + summary.gap_forgiven) == counts(ledger)


# ---------------------------------------------------------------------------
# Symmetry and determinism
# ---------------------------------------------------------------------------

class TestSymmetry:
    @given(scene=scenes())
    @STANDARD_SETTINGS
    def test_swapping_roles_swaps_fp_and_fn(self, scene):
        res, sut = scene
        swapped_res = make_recording(Role.RES, sut.observations(), frame_times=sut.frame_times)
        swapped_sut = make_recording(Role.SUT, res.observations(), frame_times=res.frame_times)
        tp, fp, fn = counts(evaluate(res, sut, OracleConfig()))
        assert counts(evaluate(swapped_res, swapped_sut, OracleConfig())) == (tp, fn, fp)


class TestDeterminism:
    @given(scene=scenes(), cfg=assignment_configs())
    @DETERMINISM_SETTINGS
    def test_report_is_byte_stable(self, scene, cfg):
        res, sut = scene
        first, second = evaluate(res, sut, cfg), evaluate(res, sut, cfg)
        assert emit_report(first, aggregate(first)) == emit_report(second, aggregate(second))
