from abc import ABC, abstractmethod
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from config_types import Algorithm, Cardinality

Pair = Tuple[int, int]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def rows_exclusive(cardinality: Cardinality) -> bool:
    """True when each SUT row may take part in at most one match."""
    return cardinality in (Cardinality.ONE_ONE, Cardinality.N_ONE)


def cols_exclusive(cardinality: Cardinality) -> bool:
    """True when each ReS column may take part in at most one match."""
    return cardinality in (Cardinality.ONE_ONE, Cardinality.ONE_N)


def _cheapest(costs: np.ndarray, keys: Sequence[str]) -> int:
    """Index of the smallest finite entry, ties broken by key; -1 if none is finite."""
    finite = [k for k in range(len(costs)) if np.isfinite(costs[k])]
    if not finite:
        return -1
    return min(finite, key=lambda k: (float(costs[k]), keys[k]))


# ---------------------------------------------------------------------------
# Base class
# ---------------------------------------------------------------------------

class AssignmentStrategy(ABC):
    """
    Abstract base class for per-frame assignment algorithms (Strategy pattern).

    *total* is a SUT × ReS matrix whose gated cells are +inf. Implementations
    return the matched (row, col) pairs, sorted, never using a gated cell.
    """

    @abstractmethod
    def assign(
        self,
        total: np.ndarray,
        cardinality: Cardinality,
        row_keys: Sequence[str],
        col_keys: Sequence[str],
    ) -> List[Pair]:
        """Matches rows to columns under *cardinality*; keys break ties deterministically."""


class GreedyAssignment(AssignmentStrategy):
    """
    Repeatedly takes the cheapest non-gated cell, ties broken by (sut_id, res_id).
    A taken row leaves the pool when rows are exclusive, a taken column when
    columns are exclusive; under n_n every non-gated cell matches.
    """

    def assign(self, total: np.ndarray, cardinality: Cardinality,
               row_keys: Sequence[str], col_keys: Sequence[str]) -> List[Pair]:
        rows, cols = np.nonzero(np.isfinite(total))
        cells = sorted(
            zip(rows.tolist(), cols.tolist()),
            key=lambda rc: (float(total[rc[0], rc[1]]), row_keys[rc[0]], col_keys[rc[1]]),
        )
        used_rows: Set[int] = set()
        used_cols: Set[int] = set()
        pairs: List[Pair] = []
        for i, j in cells:
            if rows_exclusive(cardinality) and i in used_rows:
                continue
            if cols_exclusive(cardinality) and j in used_cols:
                continue
            pairs.append((i, j))
            used_rows.add(i)
            used_cols.add(j)
        return sorted(pairs)


class HungarianAssignment(AssignmentStrategy):
    """
    Minimum-cost one-to-one assignment over the non-gated cells with the most
    matches possible. Gated cells are padded with a finite value larger than the
    sum of all real costs, so they are only chosen when nothing else fits and
    are dropped afterwards. n_one then attaches every unmatched row to its
    cheapest column, one_n every unmatched column to its cheapest row.
    """

    def assign(self, total: np.ndarray, cardinality: Cardinality,
               row_keys: Sequence[str], col_keys: Sequence[str]) -> List[Pair]:
        finite = np.isfinite(total)
        if not finite.any():
            return []
        if cardinality == Cardinality.N_N:
            rows, cols = np.nonzero(finite)
            return sorted(zip(rows.tolist(), cols.tolist()))

        big = float(np.abs(total[finite]).sum()) + 1.0
        padded = np.where(finite, total, big)
        match_rows, match_cols = linear_sum_assignment(padded)
        pairs = [(int(i), int(j)) for i, j in zip(match_rows, match_cols) if finite[i, j]]

        if cardinality == Cardinality.N_ONE:
            matched = {i for i, _ in pairs}
            for i in range(total.shape[0]):
                if i not in matched:
                    j = _cheapest(total[i, :], col_keys)
                    if j >= 0:
                        pairs.append((i, j))
        elif cardinality == Cardinality.ONE_N:
            matched = {j for _, j in pairs}
            for j in range(total.shape[1]):
                if j not in matched:
                    i = _cheapest(total[:, j], row_keys)
                    if i >= 0:
                        pairs.append((i, j))
        return sorted(pairs)


ASSIGNMENT_REGISTRY: Dict[Algorithm, AssignmentStrategy] = {
    Algorithm.GREEDY: GreedyAssignment(),
    Algorithm.HUNGARIAN: HungarianAssignment(),
}


def get_assigner(algorithm: Algorithm) -> AssignmentStrategy:
    """Looks up *algorithm* in ASSIGNMENT_REGISTRY."""
    try:
        return ASSIGNMENT_REGISTRY[algorithm]
    except KeyError:
        raise ValueError(f"No assignment strategy registered for '{algorithm}'.") from None
