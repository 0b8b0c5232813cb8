"""Assignment solver and set-matching loss against brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from multihar import tensor as T
from multihar.matching import (
    NO_PERSON,
    PROB_FLOOR,
    build_cost_matrix,
    class_column,
    hungarian,
    hypothesis_space_sizes,
    matching_loss,
    pad_targets,
    pairwise_loss,
    total_loss,
)
from multihar.tensor import Tensor


def brute_force(cost):
    n = cost.shape[0]
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        t = sum(cost[i, p] for i, p in enumerate(perm))
        if t < best - 1e-15:
            best, best_perm = t, perm
    return np.array(best_perm), best


def random_probs(rng, n_q, n_classes):
    x = rng.random((n_q, n_classes)) + 1e-3
    return x / x.sum(axis=1, keepdims=True)


def test_pad_targets_examples():
    assert pad_targets((3, 1), 6) == (3, 1, 0, 0, 0, 0)
    assert pad_targets((), 4) == (0, 0, 0, 0)
    with pytest.raises(ValueError):
        pad_targets((1, 2, 3), 2)


def test_class_column_layout():
    assert class_column(1, 9) == 0
    assert class_column(9, 9) == 8
    assert class_column(NO_PERSON, 9) == 9
    with pytest.raises(ValueError):
        class_column(10, 9)


def test_hungarian_known_example():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assign, total = hungarian(cost)
    assert np.array_equal(assign, [1, 0, 2])
    assert total == 5.0


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(300):
        n = int(rng.integers(1, 8))
        cost = rng.random((n, n)) * 10
        assign, total = hungarian(cost)
        bf_assign, bf_total = brute_force(cost)
        assert abs(total - bf_total) < 1e-9, trial
        assert sorted(assign) == list(range(n))


def test_hungarian_tie_breaks_lexicographically():
    # all zeros: every permutation is optimal; identity is lexicographically first
    assign, total = hungarian(np.zeros((5, 5)))
    assert np.array_equal(assign, np.arange(5))
    assert total == 0.0
    # two optimal assignments; [0, 1] beats [1, 0]
    cost = np.array([[1.0, 2.0], [2.0, 3.0]])
    assign, _ = hungarian(cost)
    assert np.array_equal(assign, [0, 1])


def test_hungarian_rejects_bad_input():
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf, 1.0], [1.0, 1.0]]))


def test_matching_loss_equals_min_permutation_cross_entropy():
    rng = np.random.default_rng(1)
    for trial in range(100):
        n_act = 5
        n_q = int(rng.integers(2, 7))
        n_p = int(rng.integers(0, n_q + 1))
        padded = pad_targets(tuple(rng.integers(1, n_act + 1, n_p)), n_q)
        probs = random_probs(rng, n_q, n_act + 1)
        loss, _ = matching_loss(padded, Tensor(probs), n_act)
        cost = build_cost_matrix(padded, probs, n_act)
        _, bf_total = brute_force(cost)
        assert abs(loss.data - bf_total) < 1e-10, trial


def test_loss_invariant_to_prediction_row_permutation():
    rng = np.random.default_rng(2)
    for trial in range(50):
        padded = pad_targets(tuple(rng.integers(1, 6, 2)), 5)
        probs = random_probs(rng, 5, 6)
        base, _ = matching_loss(padded, Tensor(probs), 5)
        for _ in range(10):
            perm = rng.permutation(5)
            v, _ = matching_loss(padded, Tensor(probs[perm]), 5)
            assert v.data == base.data, trial  # bitwise: summed in target order


def test_loss_invariant_to_target_order():
    rng = np.random.default_rng(3)
    probs = random_probs(rng, 4, 6)
    a, _ = matching_loss(pad_targets((2, 5), 4), Tensor(probs), 5)
    b, _ = matching_loss(pad_targets((5, 2), 4), Tensor(probs), 5)
    assert abs(a.data - b.data) < 1e-12


def test_uniform_predictions_loss_value():
    """Uniform rows make every assignment cost n_q * ln(n_classes)."""
    n_q, n_act = 5, 9
    probs = np.full((n_q, n_act + 1), 1.0 / (n_act + 1))
    loss, _ = matching_loss(pad_targets((1, 2), n_q), Tensor(probs), n_act)
    assert abs(loss.data - n_q * math.log(10)) < 1e-12


def test_probability_floor_keeps_loss_finite():
    probs = np.zeros((3, 4))
    probs[:, 3] = 1.0  # all mass on "no person"
    loss, _ = matching_loss(pad_targets((1, 2, 3), 3), Tensor(probs), 3)
    assert np.isfinite(loss.data)
    assert abs(loss.data - 3 * (-math.log(PROB_FLOOR))) < 1e-9


def test_gradient_flows_only_through_matched_entries():
    rng = np.random.default_rng(4)
    probs = Tensor(random_probs(rng, 4, 6), requires_grad=True)
    loss, assign = matching_loss(pad_targets((2,), 4), probs, 5)
    loss.backward()
    padded = pad_targets((2,), 4)
    nz = {(int(assign[i]), class_column(t, 5)) for i, t in enumerate(padded)}
    for r in range(4):
        for c in range(6):
            if (r, c) in nz:
                assert probs.grad[r, c] != 0
            else:
                assert probs.grad[r, c] == 0


def test_total_loss_composition():
    rng = np.random.default_rng(5)
    padded = pad_targets((1, 3), 4)
    layers = [Tensor(random_probs(rng, 4, 6)) for _ in range(3)]
    rvq_term = Tensor(np.array(2.5))
    final, assign = matching_loss(padded, layers[-1], 5)
    expect = final.data + 0.25 * sum(
        pairwise_loss(padded, p, assign, 5).data for p in layers[:-1]
    ) + 2.5
    got = total_loss(layers, padded, 5, alpha_aux=0.25, rvq_term=rvq_term)
    assert abs(got.data - expect) < 1e-12
    # alpha_aux=0 drops the auxiliary terms
    got0 = total_loss(layers, padded, 5, alpha_aux=0.0)
    assert abs(got0.data - final.data) < 1e-12


def test_hypothesis_space_reduction():
    ordered, multisets, ratio = hypothesis_space_sizes(9, 5)
    assert ordered == 59_049
    assert multisets == 1_287
    assert abs(ratio - 45.9) < 0.05  # the "46-fold" reduction


def test_hungarian_cubic_scaling():
    """Doubling n should cost ~8x, not ~n! — a smoke check for O(n^3)."""
    import time

    rng = np.random.default_rng(6)
    times = {}
    for n in (30, 60):
        c = rng.random((n, n))
        reps = 5
        t0 = time.perf_counter()
        for _ in range(reps):
            hungarian(c)
        times[n] = (time.perf_counter() - t0) / reps
    assert times[60] / times[30] < 20
