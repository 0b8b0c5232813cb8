"""Set matching: target padding, optimal assignment, and the matching loss.

Targets are padded with the "no person" class to the query count, a cost
matrix of per-pair cross-entropies is built, and the minimum-cost bijection
between target slots and prediction slots is found in O(n^3).  The loss sums
the matched cross-entropies in a canonical order, so its value is invariant
to any permutation of the prediction rows.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

NO_PERSON = 0  # label-side id of the "no person" class
PROB_FLOOR = 1e-12


def class_column(label: int, n_act: int) -> int:
    """Logit column for a label id; the empty class sits last."""
    if label == NO_PERSON:
        return n_act
    if not 1 <= label <= n_act:
        raise ValueError(f"activity id {label} outside 1..{n_act}")
    return label - 1


def pad_targets(labels, n_q: int) -> tuple[int, ...]:
    """Real labels first, then "no person" fill up to the query count."""
    labels = tuple(labels)
    if len(labels) > n_q:
        raise ValueError(f"{len(labels)} labels exceed {n_q} query slots")
    return labels + (NO_PERSON,) * (n_q - len(labels))


def build_cost_matrix(padded, probs: np.ndarray, n_act: int) -> np.ndarray:
    """cost[i, j] = cross-entropy of prediction row j against target i."""
    probs = np.asarray(probs)
    cols = [class_column(t, n_act) for t in padded]
    return -np.log(np.maximum(probs[:, cols].T, PROB_FLOOR))


def _solve_assignment(cost: np.ndarray):
    """Shortest-augmenting-path assignment; returns (row->col, u, v)."""
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        way = np.zeros(n + 1, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            idx = np.nonzero(free)[0]
            cur = cost[i0 - 1, idx - 1] - u[i0] - v[idx]
            better = cur < minv[idx]
            minv[idx] = np.where(better, cur, minv[idx])
            way[idx[better]] = j0
            k = idx[np.argmin(minv[idx])]
            delta = minv[k]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = k
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def hungarian(cost: np.ndarray, lexicographic: bool = True) -> tuple[np.ndarray, float]:
    """Minimum-cost bijection rows -> columns.

    When the optimum is not unique and ``lexicographic`` is set, the
    lexicographically smallest permutation among minimizers is returned
    (checked row by row via zero-reduced-cost candidates, so the generic
    unique case stays O(n^3)).  The training loss disables the refinement:
    its ties come from duplicated target rows, where every optimum yields
    the same multiset of matched costs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] < 1:
        raise ValueError(f"cost must be square and non-empty, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    n = cost.shape[0]
    row_to_col, u, v = _solve_assignment(cost)
    total = float(cost[np.arange(n), row_to_col].sum())
    if not lexicographic:
        return row_to_col, total

    # Reduced costs vanish on every edge that can appear in an optimal
    # assignment; more than one zero per row signals a possible tie.
    reduced = cost - u[:, None] - v[None, :]
    scale = max(1.0, np.abs(cost).max())
    zeroish = np.abs(reduced) <= 1e-9 * scale
    if np.all(zeroish.sum(axis=1) <= 1):
        return row_to_col, total

    # Tie refinement: fix rows in order, choosing the smallest column that
    # preserves the optimal total (verified by re-solving the subproblem).
    remaining = list(range(n))
    result = np.zeros(n, dtype=np.int64)
    sub_rows = list(range(n))
    for i in range(n):
        sub_rows = [r for r in sub_rows if r != i]
        candidates = [j for j in remaining if zeroish[i, j]]
        if not candidates:
            candidates = list(remaining)
        best_j, best_t = None, None
        for j in candidates:
            rest_cols = [c for c in remaining if c != j]
            if sub_rows:
                sub = cost[np.ix_(sub_rows, rest_cols)]
                sub_assign, _, _ = _solve_assignment(sub)
                t = float(cost[i, j] + sub[np.arange(len(sub_rows)), sub_assign].sum())
            else:
                t = float(cost[i, j])
            if best_t is None or t < best_t:  # first minimizer = smallest column
                best_j, best_t = j, t
        result[i] = best_j
        remaining.remove(best_j)
    total = float(cost[np.arange(n), result].sum())
    return result, total


def matching_loss(padded, probs: Tensor, n_act: int) -> tuple[Tensor, np.ndarray]:
    """Hungarian-matched total cross-entropy for one sample.

    probs is (N_q, N_act+1); returns (scalar loss, assignment target->pred).
    The assignment is treated as a constant: gradients flow only through the
    selected probability entries.
    """
    n_q = probs.shape[0]
    if len(padded) != n_q:
        raise ValueError(f"{len(padded)} targets vs {n_q} predictions")
    cost = build_cost_matrix(padded, probs.data, n_act)
    assign, _ = hungarian(cost, lexicographic=False)
    loss = pairwise_loss(padded, probs, assign, n_act)
    return loss, assign


def pairwise_loss(padded, probs: Tensor, assign: np.ndarray, n_act: int) -> Tensor:
    """Cross-entropy of probs under a fixed assignment.

    The matched terms are summed in ascending value order.  That canonical
    order makes the loss bitwise invariant to prediction-row permutations
    even when duplicate target labels leave the optimal assignment tied.
    """
    n_classes = probs.shape[1]
    cols = np.array([class_column(t, n_act) for t in padded], dtype=np.int64)
    flat_idx = assign * n_classes + cols
    flat = probs.reshape(probs.shape[0] * n_classes)
    terms = -T.log(T.clamp_min(T.embedding(flat, flat_idx), PROB_FLOOR))
    order = np.argsort(terms.data, kind="stable")
    return T.tsum(T.embedding(terms, order))


def total_loss(
    layer_probs: list[Tensor],
    padded,
    n_act: int,
    alpha_aux: float,
    rvq_term: Tensor | None = None,
) -> Tensor:
    """Deep-supervised training loss for one sample.

    Final layer is Hungarian-matched; earlier layers reuse the final layer's
    assignment, weighted by alpha_aux; the quantizer loss is added on top.
    """
    final_loss, assign = matching_loss(padded, layer_probs[-1], n_act)
    total = final_loss
    if alpha_aux:
        for probs in layer_probs[:-1]:
            total = total + alpha_aux * pairwise_loss(padded, probs, assign, n_act)
    if rvq_term is not None:
        total = total + rvq_term
    return total


def hypothesis_space_sizes(n_act: int, n_p: int) -> tuple[int, int, float]:
    """(ordered sequences, unordered multisets, reduction ratio)."""
    ordered = n_act**n_p
    multisets = math.comb(n_act + n_p - 1, n_p)
    return ordered, multisets, ordered / multisets
