import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from assignment_strategy import cols_exclusive, get_assigner, rows_exclusive
from config_types import Algorithm, Cardinality
from property.settings import ACCEPTANCE_SETTINGS, STANDARD_SETTINGS

cells = st.one_of(st.floats(min_value=0.0, max_value=10.0, allow_nan=False), st.just(math.inf))


@st.composite
def cost_matrices(draw, max_side: int = 7) -> np.ndarray:
    n = draw(st.integers(1, max_side))
    m = draw(st.integers(1, max_side))
    values = draw(st.lists(cells, min_size=n * m, max_size=n * m))
    return np.array(values, dtype=float).reshape(n, m)


def keys(k: int):
    return [f"k{i}" for i in range(k)]


def assign(total: np.ndarray, algorithm: Algorithm, cardinality: Cardinality):
    n, m = total.shape
    return get_assigner(algorithm).assign(total, cardinality, keys(n), keys(m))


def brute_force(total: np.ndarray):
    """(most finite pairs, least cost among those) over every one-to-one assignment."""
    matrix = total if total.shape[0] <= total.shape[1] else total.T
    n, m = matrix.shape
    best = (0, 0.0)
    for cols in permutations(range(m), n):
        finite = [matrix[i, j] for i, j in zip(range(n), cols) if math.isfinite(matrix[i, j])]
        candidate = (len(finite), float(sum(finite)))
        if candidate[0] > best[0] or (candidate[0] == best[0] and candidate[1] < best[1]):
            best = candidate
    return best


# ---------------------------------------------------------------------------
# Optimality
# ---------------------------------------------------------------------------

class TestHungarianOptimality:
    @given(total=cost_matrices())
    @ACCEPTANCE_SETTINGS
    def test_matches_exhaustive_search(self, total):
        pairs = assign(total, Algorithm.HUNGARIAN, Cardinality.ONE_ONE)
        count, cost = brute_force(total)
        assert len(pairs) == count
        assert sum(total[i, j] for i, j in pairs) == pytest.approx(cost, abs=1e-9)

    @given(total=cost_matrices(max_side=5))
    @STANDARD_SETTINGS
    def test_never_worse_than_greedy(self, total):
        hungarian = assign(total, Algorithm.HUNGARIAN, Cardinality.ONE_ONE)
        greedy = assign(total, Algorithm.GREEDY, Cardinality.ONE_ONE)
        assert len(hungarian) >= len(greedy)
        if len(hungarian) == len(greedy):
            assert sum(total[i, j] for i, j in hungarian) <= sum(total[i, j] for i, j in greedy) + 1e-9


# ---------------------------------------------------------------------------
# Validity under every cardinality
# ---------------------------------------------------------------------------

class TestAssignmentValidity:
    @pytest.mark.parametrize("algorithm", list(Algorithm))
    @pytest.mark.parametrize("cardinality", list(Cardinality))
    @given(total=cost_matrices(max_side=5))
    @STANDARD_SETTINGS
    def test_respects_gate_and_exclusivity(self, algorithm, cardinality, total):
        pairs = assign(total, algorithm, cardinality)
        assert pairs == sorted(set(pairs))
        assert all(math.isfinite(total[i, j]) for i, j in pairs)
        if rows_exclusive(cardinality):
            assert len({i for i, _ in pairs}) == len(pairs)
        if cols_exclusive(cardinality):
            assert len({j for _, j in pairs}) == len(pairs)

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    @given(total=cost_matrices(max_side=5))
    @STANDARD_SETTINGS
    def test_one_one_is_maximal(self, algorithm, total):
        pairs = assign(total, algorithm, Cardinality.ONE_ONE)
        free_rows = set(range(total.shape[0])) - {i for i, _ in pairs}
        free_cols = set(range(total.shape[1])) - {j for _, j in pairs}
        assert not any(math.isfinite(total[i, j]) for i in free_rows for j in free_cols)

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    @given(total=cost_matrices(max_side=5))
    @STANDARD_SETTINGS
    def test_n_one_matches_every_row_with_a_candidate(self, algorithm, total):
        matched = {i for i, _ in assign(total, algorithm, Cardinality.N_ONE)}
        assert matched == {i for i in range(total.shape[0]) if np.isfinite(total[i, :]).any()}

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    @given(total=cost_matrices(max_side=5))
    @STANDARD_SETTINGS
    def test_one_n_matches_every_column_with_a_candidate(self, algorithm, total):
        matched = {j for _, j in assign(total, algorithm, Cardinality.ONE_N)}
        assert matched == {j for j in range(total.shape[1]) if np.isfinite(total[:, j]).any()}

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    @given(total=cost_matrices(max_side=5))
    @STANDARD_SETTINGS
    def test_n_n_matches_every_finite_cell(self, algorithm, total):
        rows, cols = np.nonzero(np.isfinite(total))
        assert assign(total, algorithm, Cardinality.N_N) == sorted(zip(rows.tolist(), cols.tolist()))

    @given(total=cost_matrices(max_side=5))
    @STANDARD_SETTINGS
    def test_same_input_same_pairs(self, total):
        assert assign(total, Algorithm.HUNGARIAN, Cardinality.ONE_ONE) == \
            assign(total.copy(), Algorithm.HUNGARIAN, Cardinality.ONE_ONE)
