import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import prob_batches, random_simplex
from drive import losses as L
from drive.distributions import mutual_information
from drive.numerics import Tape, Tensor, _central_diff
from loss_cases import cases


def test_tsv_one_hot_agreement_is_minus_log2():
    P = np.eye(2)[[0, 1, 0, 1]]
    assert L.loss_tsv(Tensor(P), P).item() == pytest.approx(-math.log(2), abs=1e-12)


def test_tsv_uniform_pseudo_labels_is_zero():
    P = random_simplex(np.random.default_rng(0), 6, 3)
    assert abs(L.loss_tsv(Tensor(P), np.full((6, 3), 1 / 3)).item()) < 1e-12


@given(prob_batches())
def test_mi_losses_within_bounds(pair):
    P, Q = pair
    C = P.shape[1]
    for fn in (L.loss_tsv, L.loss_mic_stage1, L.loss_mic_stage2, L.adversarial_objective):
        v = fn(Tensor(P), Q if fn in (L.loss_tsv, L.adversarial_objective) else Tensor(Q)).item()
        assert -math.log(C) - 1e-12 <= v <= 1e-12


@pytest.mark.parametrize("fn", [L.loss_mic_stage1, L.loss_mic_stage2])
def test_mic_identical_pair_is_minus_entropy_of_mean(fn):
    P = np.eye(3)[[0, 1, 2, 2]]
    expected = -mutual_information(P, P).item()
    assert fn(Tensor(P), Tensor(P)).item() == pytest.approx(expected, abs=1e-12)
    mean = P.mean(axis=0)
    assert expected == pytest.approx(float(np.sum(mean * np.log(mean))), abs=1e-12)


@pytest.mark.parametrize("fn", [L.loss_mic_stage1, L.loss_mic_stage2])
def test_mic_uniform_perturbed_is_zero(fn):
    P = random_simplex(np.random.default_rng(1), 5, 4)
    assert abs(fn(Tensor(P), Tensor(np.full((5, 4), 0.25))).item()) < 1e-12


@given(prob_batches())
def test_mic_symmetric(pair):
    P, Q = pair
    a = L.loss_mic_stage1(Tensor(P), Tensor(Q)).item()
    b = L.loss_mic_stage1(Tensor(Q), Tensor(P)).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_batch_mismatch_and_empty():
    with pytest.raises(ValueError, match="batch sizes"):
        L.loss_mic_stage2(Tensor(np.full((2, 2), 0.5)), Tensor(np.full((3, 2), 0.5)))
    with pytest.raises(ValueError, match="empty"):
        L.loss_tsv(Tensor(np.zeros((0, 2))), np.zeros((0, 2)))
    with pytest.raises(ValueError, match="empty"):
        L.loss_pc(Tensor(np.zeros((0, 2))), np.zeros((0, 2)), 1.0)


def test_balance_term_examples():
    uniform = np.full((4, 3), 1 / 3)
    assert abs(L.balance_term(Tensor(uniform)).item()) < 1e-15
    one_hot = np.eye(3)[[1, 1, 1]]
    assert L.balance_term(Tensor(one_hot)).item() == pytest.approx(math.log(3), abs=1e-12)


def test_pc_without_balance_is_negative_mi():
    rng = np.random.default_rng(2)
    P, Q = random_simplex(rng, 6, 3), random_simplex(rng, 6, 3)
    loss, bal = L.loss_pc(Tensor(P), Q, 0.0)
    assert loss.item() == pytest.approx(-mutual_information(P, Q).item(), abs=1e-15)
    full, _ = L.loss_pc(Tensor(P), Q, 2.0)
    assert full.item() == pytest.approx(loss.item() + 2.0 * bal.item(), abs=1e-14)


def test_mce_hand_value_three_classes():
    probs = np.array([[1.0, 0.0, 0.0]])
    val = L.loss_mce(Tensor(probs), probs, n_top=1, tau=1.0).item()
    assert val == pytest.approx(-1 + math.log(2), abs=1e-12)


def test_mce_hand_value_uniform_two_classes():
    probs = np.full((1, 2), 0.5)
    val = L.loss_mce(Tensor(probs), probs, n_top=1, tau=1.0).item()
    assert val == pytest.approx(-0.25, abs=1e-12)


def test_mce_lower_with_more_top_mass():
    pseudo = np.array([[0.6, 0.3, 0.1]])
    rest = np.array([0.75, 0.25])
    vals = []
    for m in np.linspace(0.2, 0.95, 16):
        probs = np.array([[m, *(1 - m) * rest]])
        vals.append(L.loss_mce(Tensor(probs), pseudo, 1, 0.5).item())
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_mce_ties_go_to_lower_index():
    assert L.top_n_indices(np.array([[0.4, 0.4, 0.2]]), 1).tolist() == [[0]]
    assert L.top_n_indices(np.array([[0.2, 0.4, 0.4]]), 2).tolist() == [[1, 2]]


def test_mce_rejects_bad_n():
    p = np.full((2, 3), 1 / 3)
    with pytest.raises(ValueError, match="N"):
        L.loss_mce(Tensor(p), p, n_top=3, tau=1.0)
    with pytest.raises(ValueError, match="N"):
        L.loss_mce(Tensor(p), p, n_top=0, tau=1.0)


@given(prob_batches(max_c=6), st.integers(0, 2**32 - 1))
def test_mce_permutation_equivariant(pair, seed):
    P, Q = pair
    C = P.shape[1]
    perm = np.random.default_rng(seed).permutation(C)
    # a strict ordering keeps the top-N set well defined under the permutation
    Q = Q + 1e-9 * np.arange(C)[np.argsort(perm)]
    Q = Q / Q.sum(axis=1, keepdims=True)
    n = max(1, C // 2)
    a = L.loss_mce(Tensor(P), Q, n, 0.3).item()
    b = L.loss_mce(Tensor(P[:, perm]), Q[:, perm], n, 0.3).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_stage_totals_examples():
    assert L.stage_totals({"tsv": -0.4, "mic1": -0.3}, 1, beta=0.0).total == -0.4
    assert L.stage_totals({"mce": 1.0, "pc": 2.0, "mic2": 3.0}, 2, xi1=0.0, xi2=0.0).total == 1.0
    bd = L.stage_totals({"mce": 1.0, "pc": 2.0, "mic2": 3.0}, 2, xi1=0.5, xi2=0.1)
    assert bd.total == pytest.approx(2.3, abs=1e-12)
    assert bd.as_dict()["total"] == bd.total


def test_stage_totals_missing_component_named():
    with pytest.raises(KeyError, match="mic2"):
        L.stage_totals({"mce": 1.0, "pc": 2.0}, 2)
    with pytest.raises(KeyError, match="tsv"):
        L.weighted_total({"mic1": 0.0}, 1)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 3), st.floats(0, 3))
def test_breakdown_total_recomputes(mce, pc, mic2, xi1, xi2):
    bd = L.stage_totals({"mce": mce, "pc": pc, "mic2": mic2}, 2, xi1=xi1, xi2=xi2)
    assert bd.total == mce + xi1 * pc + xi2 * mic2


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("name", ["tsv", "mic1", "mic2", "pc", "mce", "total1", "total2"])
def test_loss_gradients_and_frozen_groups(seed, name):
    fn, trained, frozen = cases(seed)[name]
    with Tape() as tape:
        root = fn()
    g = tape.backward(root)
    for p in trained:
        numeric = _central_diff(lambda: fn().item(), p.data, 1e-6)
        # absolute floor at the rounding level of step-1e-6 differences
        np.testing.assert_allclose(g[p], numeric, rtol=1e-5, atol=1e-9, err_msg=p.name)
    for p in frozen:
        assert not np.any(g[p]), p.name
