"""
Hypothesis profiles shared by the property tests.

Import one of these instead of writing inline @settings(max_examples=...):

    @given(matrix=cost_matrices())
    @STANDARD_SETTINGS
    def test_something(matrix):
        ...

Tiers:
- ACCEPTANCE_SETTINGS: 1000 examples, the release properties (assignment
  optimality and the closed-form distance relations)
- DETERMINISM_SETTINGS: 300 examples, byte-stable rendering
- STANDARD_SETTINGS: 100 examples, regular property tests
- QUICK_SETTINGS: 25 examples, whole-pipeline runs
"""

from hypothesis import HealthCheck, settings

ACCEPTANCE_SETTINGS = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])

DETERMINISM_SETTINGS = settings(max_examples=300, deadline=None)

STANDARD_SETTINGS = settings(max_examples=100, deadline=None)

# Whole evaluations are slow enough to trip the too_slow health check on CI.
QUICK_SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
