import numpy as np
import pytest

from ntkadv import ntk
from ntkadv.attacks import (
    AttackConfig,
    Perturbation,
    attack_report,
    clean_accuracy,
    fgsm_kernel_binary,
    fgsm_kernel_multiclass,
    kernel_classifier,
    pgd_attack,
    pgd_kernel,
    robust_accuracy,
    save_attack_report,
    taylor_attack_binary,
    taylor_attack_max_l1,
    taylor_attack_sum_dz,
)
from ntkadv.datasets import SplitSpec, generate_gaussian_blobs, label_matrix, split_dataset
from ntkadv.errors import ParameterError
from ntkadv.regression import INF_TIME, Predictor


@pytest.fixture(scope="module")
def binary_setup():
    ds = generate_gaussian_blobs(60, 8, 2, 4.0, seed=0)
    train, val = split_dataset(ds, SplitSpec(0.5, seed=1))
    p = Predictor.fit(ntk.two_layer_kernel(), train.inputs, label_matrix(train))
    return p, train, val


@pytest.fixture(scope="module")
def multiclass_setup():
    ds = generate_gaussian_blobs(60, 8, 3, 5.0, seed=2)
    train, val = split_dataset(ds, SplitSpec(0.5, seed=3))
    p = Predictor.fit(ntk.two_layer_kernel(), train.inputs, label_matrix(train))
    return p, train, val


def signed(label):
    return 2 * int(label) - 1


class TestConfig:
    def test_validation(self):
        with pytest.raises(ParameterError):
            AttackConfig(epsilon=-0.1)
        with pytest.raises(ParameterError):
            AttackConfig(epsilon=0.1, steps=0)
        with pytest.raises(ParameterError):
            AttackConfig(epsilon=0.1, steps=5)  # missing step_size

    def test_oversized_step_warns(self):
        with pytest.warns(UserWarning, match="step_size"):
            AttackConfig(epsilon=0.1, steps=2, step_size=0.5)

    def test_budget_enforced(self):
        with pytest.raises(ParameterError):
            Perturbation(np.array([0.2, 0.0]), budget=0.1)


class TestFgsmBinary:
    def test_flipping_label_negates_delta(self, binary_setup):
        p, _, val = binary_setup
        x = val.inputs[0]
        d_pos = fgsm_kernel_binary(p, x, +1, INF_TIME, 0.3).delta
        d_neg = fgsm_kernel_binary(p, x, -1, INF_TIME, 0.3).delta
        np.testing.assert_array_equal(d_pos, -d_neg)

    def test_zero_gradient_gives_zero_delta(self, binary_setup):
        p, _, val = binary_setup
        p0 = p.with_labels(np.zeros(p.n))
        d = fgsm_kernel_binary(p0, val.inputs[0], +1, INF_TIME, 0.3).delta
        np.testing.assert_array_equal(d, np.zeros_like(d))

    def test_cross_entropy_route_matches_bitwise(self, binary_setup):
        # The sigmoid residual sigma(f) - yhat never vanishes, so the CE loss
        # gradient and -y*grad f share sign patterns exactly.
        p, _, val = binary_setup
        cfg = AttackConfig(epsilon=0.25)
        for x, lab in zip(val.inputs[:10], val.labels[:10]):
            direct = fgsm_kernel_binary(p, x, signed(lab), INF_TIME, 0.25).delta
            via_loss = pgd_kernel(p, x, signed(lab), INF_TIME, cfg).delta
            np.testing.assert_array_equal(direct, via_loss)

    def test_deterministic(self, binary_setup):
        p, _, val = binary_setup
        a = fgsm_kernel_binary(p, val.inputs[1], +1, 3.0, 0.1).delta
        b = fgsm_kernel_binary(p, val.inputs[1], +1, 3.0, 0.1).delta
        np.testing.assert_array_equal(a, b)


class TestFgsmMulticlass:
    def test_two_class_reduces_to_binary_direction(self, binary_setup):
        p, train, val = binary_setup
        labels01 = (label_matrix(train) > 0).astype(float)
        one_hot = np.column_stack([1.0 - labels01, labels01])
        p2 = p.with_labels(one_hot)
        agree, total = 0, 0
        for x, lab in zip(val.inputs[:10], val.labels[:10]):
            d_bin = fgsm_kernel_binary(p, x, signed(lab), INF_TIME, 0.2).delta
            d_mc = fgsm_kernel_multiclass(p2, x, int(lab), INF_TIME, 0.2).delta
            agree += np.sum(np.sign(d_bin) == np.sign(d_mc))
            total += d_bin.size
        assert agree / total >= 0.99

    def test_zero_labels_zero_delta(self, multiclass_setup):
        p, _, val = multiclass_setup
        p0 = p.with_labels(np.zeros((p.n, 3)))
        d = fgsm_kernel_multiclass(p0, val.inputs[0], 1, INF_TIME, 0.3).delta
        np.testing.assert_array_equal(d, np.zeros_like(d))

    def test_small_step_increases_cross_entropy(self, multiclass_setup):
        p, train, _ = multiclass_setup
        clf = kernel_classifier(p)
        rng = np.random.default_rng(4)
        increased = 0
        for _ in range(100):
            x = rng.standard_normal(train.d) + train.inputs[rng.integers(p.n)]
            lab = rng.integers(3)
            d = fgsm_kernel_multiclass(p, x, int(lab), INF_TIME, 1e-3).delta
            increased += clf.loss(x + d, int(lab)) >= clf.loss(x, int(lab))
        assert increased >= 90


class TestPgd:
    def test_single_step_equals_one_step_attack(self, binary_setup):
        p, _, val = binary_setup
        cfg = AttackConfig(epsilon=0.3, steps=1)
        for x, lab in zip(val.inputs[:5], val.labels[:5]):
            one = fgsm_kernel_binary(p, x, signed(lab), INF_TIME, 0.3).delta
            multi = pgd_kernel(p, x, signed(lab), INF_TIME, cfg).delta
            np.testing.assert_array_equal(one, multi)

    def test_budget_and_box_respected(self, binary_setup):
        p, _, val = binary_setup
        cfg = AttackConfig(epsilon=0.21, steps=5, step_size=0.1,
                           clamp_box=(-6.0, 6.0))
        for x, lab in zip(val.inputs[:20], val.labels[:20]):
            d = pgd_kernel(p, x, signed(lab), INF_TIME, cfg).delta
            assert np.max(np.abs(d)) <= 0.21 + 1e-12
            assert np.all(x + d >= -6.0 - 1e-12)
            assert np.all(x + d <= 6.0 + 1e-12)

    def test_more_steps_do_not_lose_loss(self, binary_setup):
        p, _, val = binary_setup
        clf = kernel_classifier(p)
        cfg10 = AttackConfig(epsilon=0.4, steps=10, step_size=0.1)
        wins = 0
        for x, lab in zip(val.inputs, val.labels):
            d1 = fgsm_kernel_binary(p, x, signed(lab), INF_TIME, 0.4).delta
            d10 = pgd_kernel(p, x, signed(lab), INF_TIME, cfg10).delta
            wins += (clf.loss(x + d10, int(lab))
                     >= clf.loss(x + d1, int(lab)) - 1e-12)
        assert wins / val.n >= 0.95


class TestTaylorBinary:
    def test_sign_pattern_matches_fgsm_at_infinity(self, binary_setup):
        p, _, val = binary_setup
        for x, lab in zip(val.inputs, val.labels):
            tay = taylor_attack_binary(p, x, signed(lab), 0.3).delta
            one = fgsm_kernel_binary(p, x, signed(lab), INF_TIME, 0.3).delta
            grad = np.abs(one)
            assert np.all(grad > 0)  # no zero-gradient coordinates here
            np.testing.assert_array_equal(np.sign(tay), np.sign(one))

    def test_zero_labels(self, binary_setup):
        p, _, val = binary_setup
        p0 = p.with_labels(np.zeros(p.n))
        d = taylor_attack_binary(p0, val.inputs[0], 1, 0.3).delta
        np.testing.assert_array_equal(d, np.zeros_like(d))

    def test_linearization_predicts_output_shift(self, binary_setup):
        from ntkadv.regression import predict_infinite_time
        p, _, val = binary_setup
        eps = 1e-3
        for x in val.inputs[:10]:
            jac = ntk.cross_gradient(p.kernel, x, p.train_inputs)
            z = jac.T @ p.coefficients(INF_TIME)
            delta = taylor_attack_binary(p, x, +1, eps).delta
            shift = predict_infinite_time(p, x + delta) - predict_infinite_time(p, x)
            assert abs(shift - delta @ z) <= 0.10 * abs(delta @ z)


class TestTaylorMulticlass:
    def test_two_class_reduces_to_binary(self, binary_setup):
        p, train, val = binary_setup
        labels01 = (label_matrix(train) > 0).astype(float)
        p2 = p.with_labels(np.column_stack([1.0 - labels01, labels01]))
        for x, lab in zip(val.inputs[:10], val.labels[:10]):
            d_bin = taylor_attack_binary(p, x, signed(lab), 0.2).delta
            d_l1 = taylor_attack_max_l1(p2, x, int(lab), 0.2).delta
            d_sum = taylor_attack_sum_dz(p2, x, int(lab), 0.2).delta
            np.testing.assert_array_equal(np.sign(d_l1), np.sign(d_bin))
            np.testing.assert_array_equal(d_sum, d_l1)

    def test_margin_gain_is_epsilon_times_l1_norm(self, multiclass_setup):
        p, _, val = multiclass_setup
        x, lab = val.inputs[0], int(val.labels[0])
        jac = ntk.cross_gradient(p.kernel, x, p.train_inputs)
        z = jac.T @ p.coefficients(INF_TIME)
        diffs = z - z[:, [lab]]
        norms = np.abs(diffs).sum(axis=0)
        norms[lab] = -np.inf
        r = int(np.argmax(norms))
        d = taylor_attack_max_l1(p, x, lab, 0.2).delta
        assert d @ diffs[:, r] == pytest.approx(0.2 * norms[r])

    def test_argmax_against_brute_force(self):
        ds = generate_gaussian_blobs(50, 8, 5, 6.0, seed=5)
        p = Predictor.fit(ntk.two_layer_kernel(), ds.inputs, label_matrix(ds))
        rng = np.random.default_rng(6)
        for _ in range(5):
            x = rng.standard_normal(8) * 2.0
            lab = int(rng.integers(5))
            jac = ntk.cross_gradient(p.kernel, x, p.train_inputs)
            z = jac.T @ p.coefficients(INF_TIME)
            # Exhaustive oracle: linearized margin gain for every competitor.
            gains = {r: float(np.abs(z[:, r] - z[:, lab]).sum())
                     for r in range(5) if r != lab}
            best = max(gains, key=lambda r: (gains[r], -r))
            d = taylor_attack_max_l1(p, x, lab, 0.1).delta
            expect = 0.1 * np.sign(z[:, best] - z[:, lab])
            np.testing.assert_array_equal(d, expect)

    def test_sum_dz_invariant_to_class_permutation(self, multiclass_setup):
        p, _, val = multiclass_setup
        x, lab = val.inputs[1], int(val.labels[1])
        base = taylor_attack_sum_dz(p, x, lab, 0.2).delta
        others = [c for c in range(3) if c != lab]
        perm = list(range(3))
        perm[others[0]], perm[others[1]] = others[1], others[0]
        p_perm = p.with_labels(p.labels[:, perm])
        swapped = taylor_attack_sum_dz(p_perm, x, perm.index(lab), 0.2).delta
        np.testing.assert_allclose(swapped, base, atol=1e-12)

    def test_sum_dz_beats_random_signs(self, multiclass_setup):
        p, train, _ = multiclass_setup
        clf = kernel_classifier(p)
        rng = np.random.default_rng(7)
        eps = 1e-3
        wins = 0
        for _ in range(100):
            x = train.inputs[rng.integers(p.n)] + rng.standard_normal(train.d)
            lab = int(rng.integers(3))
            d = taylor_attack_sum_dz(p, x, lab, eps).delta
            rand = eps * rng.choice([-1.0, 1.0], size=train.d)
            gain = clf.loss(x + d, lab) - clf.loss(x, lab)
            gain_rand = clf.loss(x + rand, lab) - clf.loss(x, lab)
            wins += gain >= gain_rand - 1e-15
        assert wins >= 90

    def test_binary_predictor_rejected(self, binary_setup):
        p, _, val = binary_setup
        with pytest.raises(ParameterError):
            taylor_attack_max_l1(p, val.inputs[0], 0, 0.1)


def test_one_step_loss_monotone_in_budget(binary_setup):
    # Along the fixed sign direction the loss grows with the budget; a
    # nonlinear predictor can break this at large eps (observed past ~2.0
    # here), so the property is asserted on the small-budget regime.
    p, _, val = binary_setup
    clf = kernel_classifier(p)
    grid = np.linspace(0.0, 1.2, 17)
    for x, lab in zip(val.inputs, val.labels):
        direction = fgsm_kernel_binary(p, x, signed(lab), INF_TIME, 1.0).delta
        losses = [clf.loss(x + eps * direction, int(lab)) for eps in grid]
        assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))


class TestRobustAccuracy:
    def test_zero_epsilon_equals_clean_accuracy(self, binary_setup):
        p, _, val = binary_setup
        cfg = AttackConfig(epsilon=0.0)
        assert robust_accuracy(p, val, "fgsm", cfg) == clean_accuracy(p, val)

    def test_random_labels_near_chance(self):
        ds = generate_gaussian_blobs(80, 8, 2, 4.0, seed=8)
        rng = np.random.default_rng(9)
        y = rng.choice([-1.0, 1.0], size=40)
        train, val = split_dataset(ds, SplitSpec(0.5, seed=10))
        p = Predictor.fit(ntk.two_layer_kernel(), train.inputs, y)
        clean = clean_accuracy(p, val)
        robust = robust_accuracy(p, val, "fgsm", AttackConfig(epsilon=0.1))
        assert 0.2 <= clean <= 0.8
        assert 0.0 <= robust <= 0.8

    def test_large_budget_drives_accuracy_to_zero(self, binary_setup):
        p, _, val = binary_setup
        cfg = AttackConfig(epsilon=8.0, steps=10, step_size=2.0)
        assert robust_accuracy(p, val, "pgd", cfg) == 0.0

    def test_unknown_attack_rejected(self, binary_setup):
        p, _, val = binary_setup
        with pytest.raises(ParameterError, match="unknown attack"):
            robust_accuracy(p, val, "cw", AttackConfig(epsilon=0.1))


def test_attack_report_csv(tmp_path, binary_setup):
    p, _, val = binary_setup
    rows = attack_report(p, val.subset(np.arange(5)), "fgsm",
                         AttackConfig(epsilon=0.3))
    path = tmp_path / "attack.csv"
    save_attack_report(rows, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "example_id,clean_pred,adv_pred,loss_clean,loss_adv,linf_norm"
    assert len(lines) == 6
    cells = lines[1].split(",")
    assert cells[0] == "0"
    assert float(cells[5]) <= 0.3 + 1e-12
