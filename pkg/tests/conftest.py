import pytest

from builders import frames, make_recording, make_track
from config_types import OracleConfig
from custom_types import Role

# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def default_config() -> OracleConfig:
    """Built-in defaults: no AoV, center2d gate of 2 m, Hungarian one_one per frame."""
    return OracleConfig()


@pytest.fixture
def paired_recordings() -> tuple:  # type: ignore[type-arg]
    """Two cars seen by both systems over five frames, SUT offset by 0.5 m."""
    times = frames(5)
    res = make_recording(Role.RES, make_track("r1", times, x0=10.0) + make_track("r2", times, x0=20.0, y0=5.0))
    sut = make_recording(Role.SUT, make_track("s1", times, x0=10.5) + make_track("s2", times, x0=20.5, y0=5.0))
    return res, sut
