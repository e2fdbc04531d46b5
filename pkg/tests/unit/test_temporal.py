import logging
import math

import pytest

from builders import make_obs, make_recording, make_track
from config_types import OverhangPolicy, TemporalPolicy, TimestampBasis
from custom_types import EventFlag, EventKind, ExclusionReason, Role, TemporalError, Track
from format_types import OverhangFrame
from temporal import (
    apply_timestamp_basis, latency_at, resolve_overhangs, sampling_grid, sut_delays, synchronize,
)

AVAILABILITY = TemporalPolicy(basis=TimestampBasis.AVAILABILITY, sut_latency_s=0.1)


def track_of(observations) -> Track:
    return Track(track_id=observations[0].track_id, observations=tuple(observations))


# ---------------------------------------------------------------------------
# Latency and timestamp basis
# ---------------------------------------------------------------------------

class TestTimestampBasis:
    def test_constant_latency(self):
        assert latency_at(AVAILABILITY, 3.0) == pytest.approx(0.1)

    def test_latency_series_is_interpolated_and_held(self):
        policy = TemporalPolicy(basis=TimestampBasis.AVAILABILITY, sut_latency_s=((0.0, 0.1), (1.0, 0.3)))
        assert latency_at(policy, 0.5) == pytest.approx(0.2)
        assert latency_at(policy, 2.0) == pytest.approx(0.3)

    def test_missing_latency_raises(self):
        with pytest.raises(TemporalError):
            latency_at(TemporalPolicy(), 0.0)

    def test_acquisition_basis_is_a_no_op(self):
        res = make_recording(Role.RES, make_track("r", [0.0, 0.1]))
        sut = make_recording(Role.SUT, make_track("s", [0.0, 0.1]))
        out_res, out_sut = apply_timestamp_basis(res, sut, TemporalPolicy())
        assert out_res is res and out_sut is sut

    def test_availability_shifts_only_sut(self):
        res = make_recording(Role.RES, make_track("r", [0.0, 0.1]))
        sut = make_recording(Role.SUT, make_track("s", [0.0, 0.1]), frame_times=[0.0, 0.1])
        out_res, out_sut = apply_timestamp_basis(res, sut, AVAILABILITY)
        assert out_res is res
        assert out_sut.timestamps() == pytest.approx([0.1, 0.2])
        assert out_sut.frame_times == pytest.approx((0.1, 0.2))

    def test_availability_without_latency_raises(self):
        rec = make_recording(Role.SUT, make_track("s", [0.0]))
        with pytest.raises(TemporalError):
            apply_timestamp_basis(rec, rec, TemporalPolicy(basis=TimestampBasis.AVAILABILITY))

    def test_delays_keyed_by_shifted_time(self):
        sut = make_recording(Role.SUT, make_track("s", [0.0]))
        assert sut_delays(sut, AVAILABILITY) == {("s", 0.1): pytest.approx(0.1)}
        assert sut_delays(sut, TemporalPolicy()) == {}


# ---------------------------------------------------------------------------
# Sampling grid
# ---------------------------------------------------------------------------

class TestSamplingGrid:
    def test_union_of_frame_times_and_observations(self):
        sut = make_recording(Role.SUT, make_track("s", [0.1, 0.25]), frame_times=[0.0, 0.1, 0.2])
        res = make_recording(Role.RES, [])
        assert sampling_grid(sut, res) == [0.0, 0.1, 0.2, 0.25]

    def test_missing_frame_times_warns(self, caplog):
        sut = make_recording(Role.SUT, make_track("s", [0.0, 0.1]))
        with caplog.at_level(logging.WARNING):
            grid = sampling_grid(sut, make_recording(Role.RES, []))
        assert grid == [0.0, 0.1]
        assert "frame_times" in caplog.text

    def test_empty_sut_falls_back_to_reference_times(self):
        res = make_recording(Role.RES, make_track("r", [0.0, 0.5]))
        assert sampling_grid(make_recording(Role.SUT, []), res) == [0.0, 0.5]


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

class TestSynchronize:
    def test_interpolates_between_samples(self):
        track = track_of(make_track("r", [0.0, 0.2], vx=10.0))
        pair = synchronize(track, [0.0, 0.1, 0.2, 0.3])
        assert [o.timestamp for o in pair.resampled] == [0.0, 0.1, 0.2]
        middle = pair.resampled[1]
        assert middle.x == pytest.approx(1.0)
        assert middle.interpolated
        assert not pair.resampled[0].interpolated
        assert pair.overhangs == ()

    def test_never_extrapolates(self):
        track = track_of(make_track("r", [0.1, 0.2]))
        pair = synchronize(track, [0.0, 0.1, 0.2, 0.3])
        assert [o.timestamp for o in pair.resampled] == [0.1, 0.2]

    def test_observations_outside_grid_become_overhangs(self):
        track = track_of(make_track("r", [0.0, 0.1, 0.2, 0.3, 0.4]))
        pair = synchronize(track, [0.1, 0.2])
        sides = [(o.side, o.obs.timestamp) for o in pair.overhangs]
        assert sides == [("lead", 0.0), ("tail", 0.3), ("tail", 0.4)]
        assert pair.overhangs[2].offset_s == pytest.approx(0.2)

    def test_yaw_takes_shortest_arc(self):
        a = make_obs(t=0.0, track_id="r", yaw=3.0)
        b = make_obs(t=0.2, track_id="r", yaw=-3.0)
        pair = synchronize(Track("r", (a, b)), [0.1])
        assert abs(pair.resampled[0].yaw) == pytest.approx(math.pi, abs=1e-6)

    def test_empty_grid(self):
        pair = synchronize(track_of(make_track("r", [0.0])), [])
        assert pair.resampled == () and pair.overhangs == ()


# ---------------------------------------------------------------------------
# Overhangs
# ---------------------------------------------------------------------------

class TestOverhangs:
    def _frames(self):
        return [
            OverhangFrame(make_obs(t=0.0, track_id="r"), Role.RES, "lead", 0.1),
            OverhangFrame(make_obs(t=0.5, track_id="s"), Role.SUT, "tail", 0.2),
        ]

    def test_discard(self):
        events, tags = resolve_overhangs(self._frames(), TemporalPolicy(overhang=OverhangPolicy.DISCARD))
        assert events == []
        assert [t.reason for t in tags] == [ExclusionReason.OVERHANG_DISCARDED] * 2

    def test_fn_fp(self):
        events, tags = resolve_overhangs(self._frames(), TemporalPolicy(overhang=OverhangPolicy.FN_FP))
        assert tags == []
        assert [(e.kind, e.res_id, e.sut_id) for e in events] == [
            (EventKind.FN, "r", None), (EventKind.FP, None, "s")]
        assert all(EventFlag.OVERHANG in e.flags for e in events)
        assert events[0].detail == "lead overhang 0.100 s"

    def test_threshold_discards_only_short_overhangs(self):
        policy = TemporalPolicy(overhang=OverhangPolicy.THRESHOLD, dt_max_s=0.15)
        events, tags = resolve_overhangs(self._frames(), policy)
        assert [t.track_id for t in tags] == ["r"]
        assert [e.sut_id for e in events] == ["s"]
