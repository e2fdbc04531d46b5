import pytest

from builders import frames, make_recording, make_track
from config_types import (
    AlignmentConfig, AovSpec, AreaPolicy, AssignmentConfig, BorderPolicy, Cardinality, ClassPolicy, CornerCaseConfig,
    Lifetime, OracleConfig, OverhangPolicy, Polygon2D, ProbabilisticConfig, TemporalPolicy, TimestampBasis, Transform,
    TransformKind,
)
from custom_types import EventFlag, EventKind, ExclusionReason, Role
from oracle import N_N_NOTE, OracleEngine, evaluate
from verdict import aggregate


def counts(ledger):
    return (ledger.count(EventKind.TP), ledger.count(EventKind.FP), ledger.count(EventKind.FN))


# ---------------------------------------------------------------------------
# Basic verdicts
# ---------------------------------------------------------------------------

class TestEvaluate:
    def test_close_pairs_are_true_positives(self, paired_recordings, default_config):
        res, sut = paired_recordings
        ledger = evaluate(res, sut, default_config)
        assert counts(ledger) == (10, 0, 0)
        assert {(e.sut_id, e.res_id) for e in ledger.events} == {("s1", "r1"), ("s2", "r2")}

    def test_identity_has_zero_cost(self, paired_recordings, default_config):
        res, _ = paired_recordings
        ledger = evaluate(res, make_recording(Role.SUT, res.observations()), default_config)
        assert counts(ledger) == (10, 0, 0)
        assert all(e.cost is not None and e.cost.total == 0.0 for e in ledger.events)

    def test_empty_sut_gives_only_misses(self, paired_recordings, default_config):
        res, _ = paired_recordings
        ledger = evaluate(res, make_recording(Role.SUT, []), default_config)
        assert counts(ledger) == (0, 0, 10)

    def test_empty_reference_gives_only_false_positives(self, paired_recordings, default_config):
        _, sut = paired_recordings
        ledger = evaluate(make_recording(Role.RES, []), sut, default_config)
        assert counts(ledger) == (0, 10, 0)

    def test_far_offset_splits_into_fp_and_fn(self, default_config):
        times = frames(3)
        res = make_recording(Role.RES, make_track("r", times, x0=10.0))
        sut = make_recording(Role.SUT, make_track("s", times, x0=13.0), frame_times=times)
        assert counts(evaluate(res, sut, default_config)) == (0, 3, 3)

    def test_context_records_inputs(self, paired_recordings, default_config):
        res, sut = paired_recordings
        ctx = evaluate(res, sut, default_config).context
        assert (ctx.sut_input, ctx.res_input) == (10, 10)
        assert ctx.frame_period_s == pytest.approx(0.1)
        assert ctx.res_track_starts == {"r1": 0.0, "r2": 0.0}

    def test_config_is_echoed(self, paired_recordings, default_config):
        res, sut = paired_recordings
        assert evaluate(res, sut, default_config).config_echo is default_config

    def test_repeated_runs_are_identical(self, paired_recordings, default_config):
        res, sut = paired_recordings
        engine = OracleEngine(default_config)
        assert engine.evaluate(res, sut) == engine.evaluate(res, sut)


# ---------------------------------------------------------------------------
# Configured stages
# ---------------------------------------------------------------------------

class TestStages:
    def test_alignment_moves_reference_into_sut_frame(self):
        times = frames(3)
        res = make_recording(Role.RES, make_track("r", times, x0=7.0))
        sut = make_recording(Role.SUT, make_track("s", times, x0=10.0), frame_times=times)
        assert counts(evaluate(res, sut, OracleConfig())) == (0, 3, 3)
        shifted = OracleConfig(alignment=AlignmentConfig(transform=Transform(kind=TransformKind.RIGID2D, tx=3.0)))
        assert counts(evaluate(res, sut, shifted)) == (3, 0, 0)

    def test_reference_area_of_vision_excludes_outside_objects(self, paired_recordings):
        res, sut = paired_recordings
        box = Polygon2D(((0.0, -5.0), (15.0, -5.0), (15.0, 4.0), (0.0, 4.0)))
        ledger = evaluate(res, sut, OracleConfig(aov=AovSpec(res_aov=box)))
        assert counts(ledger) == (5, 0, 0)
        assert len(ledger.exclusions) == 10
        assert {t.reason for t in ledger.exclusions} == {ExclusionReason.OUTSIDE_RES_AOV}
        assert {t.track_id for t in ledger.exclusions} == {"r2", "s2"}

    def test_argmax_relabels_before_the_class_gate(self):
        times = frames(2)
        res = make_recording(Role.RES, make_track("r", times))
        confs = {"car": 0.8, "truck": 0.2}
        sut = make_recording(Role.SUT, make_track("s", times, cls="truck", class_confs=confs), frame_times=times)
        assert counts(evaluate(res, sut, OracleConfig())) == (0, 2, 2)
        argmax = OracleConfig(probabilistic=ProbabilisticConfig(class_policy=ClassPolicy.ARGMAX))
        assert counts(evaluate(res, sut, argmax)) == (2, 0, 0)

    def test_n_n_adds_a_note(self, paired_recordings):
        res, sut = paired_recordings
        cfg = OracleConfig(assignment=AssignmentConfig(cardinality=Cardinality.N_N))
        assert N_N_NOTE in evaluate(res, sut, cfg).context.notes


# ---------------------------------------------------------------------------
# Availability basis
# ---------------------------------------------------------------------------

class TestAvailabilityBasis:
    @pytest.fixture
    def ledger(self):
        times = frames(5)
        res = make_recording(Role.RES, make_track("r", times, x0=10.0))
        sut = make_recording(Role.SUT, make_track("s", times, x0=10.0))
        cfg = OracleConfig(temporal=TemporalPolicy(basis=TimestampBasis.AVAILABILITY, sut_latency_s=0.1))
        return evaluate(res, sut, cfg)

    def test_counts(self, ledger):
        assert counts(ledger) == (4, 1, 1)

    def test_early_miss_is_attributed_to_latency(self, ledger):
        misses = [e for e in ledger.events if e.kind == EventKind.FN]
        assert misses[0].timestamp == pytest.approx(0.0)
        assert EventFlag.LATENCY in misses[0].flags
        assert aggregate(ledger).fn_latency == 1

    def test_matches_carry_the_delay(self, ledger):
        delays = [e.delay_s for e in ledger.events if e.kind == EventKind.TP]
        assert delays == pytest.approx([0.1] * 4)

    def test_basis_recorded(self, ledger):
        assert ledger.context.basis == "availability"


# ---------------------------------------------------------------------------
# SUT frames beyond the reference
# ---------------------------------------------------------------------------

class TestSutOverhangs:
    """ReS car at 0.0-0.5 s, SUT car at 0.0-1.0 s on the same spot, 10 Hz."""

    @pytest.fixture
    def recordings(self):
        times = frames(11)
        res = make_recording(Role.RES, make_track("r", times[:6], x0=10.0))
        sut = make_recording(Role.SUT, make_track("s", times, x0=10.0), frame_times=times)
        return res, sut

    @staticmethod
    def config(lifetime, overhang, dt_max_s=None):
        return OracleConfig(assignment=AssignmentConfig(lifetime=lifetime),
                            temporal=TemporalPolicy(overhang=overhang, dt_max_s=dt_max_s))

    @pytest.mark.parametrize("lifetime", [Lifetime.FRAME, Lifetime.SUBSEQUENCE])
    def test_discard_excludes_the_tail(self, recordings, lifetime):
        ledger = evaluate(*recordings, self.config(lifetime, OverhangPolicy.DISCARD))
        assert counts(ledger) + (len(ledger.exclusions),) == (6, 0, 0, 5)
        assert {(t.role, t.reason) for t in ledger.exclusions} == {(Role.SUT, ExclusionReason.OVERHANG_DISCARDED)}

    @pytest.mark.parametrize("lifetime", [Lifetime.FRAME, Lifetime.SUBSEQUENCE])
    def test_fn_fp_counts_the_tail_as_flagged_false_positives(self, recordings, lifetime):
        ledger = evaluate(*recordings, self.config(lifetime, OverhangPolicy.FN_FP))
        assert counts(ledger) + (len(ledger.exclusions),) == (6, 5, 0, 0)
        tail = [e for e in ledger.events if e.kind == EventKind.FP]
        assert all(EventFlag.OVERHANG in e.flags for e in tail)
        assert tail[0].detail == "tail overhang 0.100 s"

    def test_threshold_discards_only_the_near_tail(self, recordings):
        ledger = evaluate(*recordings, self.config(Lifetime.FRAME, OverhangPolicy.THRESHOLD, 0.25))
        assert counts(ledger) + (len(ledger.exclusions),) == (6, 3, 0, 2)

    def test_unpartnered_detections_stay_plain_false_positives(self):
        times = frames(4)
        res = make_recording(Role.RES, make_track("r", times[:2], x0=10.0))
        sut = make_recording(Role.SUT, make_track("ghost", times, x0=30.0), frame_times=times)
        ledger = evaluate(res, sut, self.config(Lifetime.FRAME, OverhangPolicy.DISCARD))
        assert counts(ledger) == (0, 4, 2)
        assert ledger.exclusions == ()

    def test_gap_between_two_partners_is_not_an_overhang(self):
        times = frames(7)
        res = make_recording(Role.RES, make_track("a", times[:3], x0=10.0) + make_track("b", times[4:], x0=10.0))
        sut = make_recording(Role.SUT, make_track("s", times, x0=10.0), frame_times=times)
        ledger = evaluate(res, sut, self.config(Lifetime.FRAME, OverhangPolicy.DISCARD))
        assert counts(ledger) == (6, 1, 0)
        assert ledger.exclusions == ()

    def test_sut_overhangs_keep_inputs_conserved(self, recordings):
        ledger = evaluate(*recordings, self.config(Lifetime.SUBSEQUENCE, OverhangPolicy.DISCARD))
        assert ledger.context.sut_input == 11
        assert aggregate(ledger).tp == 6


# ---------------------------------------------------------------------------
# Border rescue
# ---------------------------------------------------------------------------

class TestBorderRescue:
    """Roadworks at x 10-20; the SUT car sits 0.4 m inside its edge."""

    ROADWORKS = Polygon2D(((10.0, -5.0), (20.0, -5.0), (20.0, 5.0), (10.0, 5.0)))

    def ledger(self, res_x, border=BorderPolicy.FUZZY_RESCUE):
        res = make_recording(Role.RES, make_track("r", [0.0], x0=res_x))
        sut = make_recording(Role.SUT, make_track("s", [0.0], x0=10.4), frame_times=[0.0])
        cfg = OracleConfig(areas=AreaPolicy(exclude=(self.ROADWORKS,)),
                           corner_cases=CornerCaseConfig(border=border, margin_m=1.0))
        return evaluate(res, sut, cfg)

    def test_accepted_rescue_lifts_the_exclusion(self):
        ledger = self.ledger(9.5)
        assert counts(ledger) == (1, 0, 0)
        assert EventFlag.BORDER_RESCUED in ledger.events[0].flags
        assert ledger.exclusions == ()

    def test_refused_pairing_leaves_the_candidate_excluded(self):
        ledger = self.ledger(7.0)
        assert counts(ledger) == (0, 0, 1)
        assert [(t.role, t.reason) for t in ledger.exclusions] == [(Role.SUT, ExclusionReason.NO_TEST_AREA)]

    def test_hard_cut_never_rescues(self):
        ledger = self.ledger(9.5, BorderPolicy.HARD_CUT)
        assert counts(ledger) == (0, 0, 1)
        assert len(ledger.exclusions) == 1
