import numpy as np
import pytest

from cogdiag.core import ResponseDataset, SignedResponseVector, build_vectors
from cogdiag.dataio import synth_irt
from cogdiag.errors import (
    DataFormatError,
    InfeasibleHyperparameterError,
    UndiagnosableError,
)
from cogdiag.girt import (
    GirtBounds,
    GirtModel,
    _batch_loss_and_grads,
    check_scale,
    feasible_scale_interval,
    generate_for_dataset,
    girt_diagnose_new,
    girt_gdf_item,
    girt_gdf_learner,
    girt_irf,
    girt_report,
    girt_train,
    load_girt,
    save_girt,
)


def make_model(
    proxy_ability, proxy_disc, proxy_diff, scale=1.25, bounds=None
) -> GirtModel:
    proxy_ability = np.asarray(proxy_ability, dtype=np.float64)
    proxy_disc = np.asarray(proxy_disc, dtype=np.float64)
    proxy_diff = np.asarray(proxy_diff, dtype=np.float64)
    bounds = bounds or GirtBounds()
    return GirtModel(
        proxy_ability=proxy_ability,
        proxy_disc=proxy_disc,
        proxy_diff=proxy_diff,
        scale=scale,
        bounds=bounds,
        learner_index={f"s{i}": i for i in range(proxy_ability.size)},
        item_index={f"e{j}": j for j in range(proxy_disc.size)},
        cohort_thetas=np.zeros(proxy_ability.size),
    )


class TestIrf:
    def test_ability_at_difficulty_is_half(self):
        assert girt_irf(0.3, 1.7, 0.3) == pytest.approx(0.5)

    def test_logistic_at_two(self):
        # 1 / (1 + e^-2)
        assert girt_irf(1.0, 2.0, 0.0) == pytest.approx(0.8808, abs=1e-4)

    def test_monotone_in_ability(self):
        grid = np.linspace(-4, 4, 101)
        vals = girt_irf(grid, 1.3, 0.2)
        assert (np.diff(vals) > 0).all()

    def test_nonpositive_discrimination_rejected(self):
        with pytest.raises(DataFormatError):
            girt_irf(0.0, -1.0, 0.0)


class TestScaleCalculus:
    def test_default_bounds_feasible_interval(self):
        lo, hi = feasible_scale_interval(GirtBounds())
        assert lo == pytest.approx(1.0)
        assert hi == pytest.approx(1.5)

    def test_boundary_scale_accepted_lower_rejected(self):
        check_scale(1.5, GirtBounds())
        with pytest.raises(InfeasibleHyperparameterError):
            check_scale(1.0, GirtBounds())  # strict lower bound
        with pytest.raises(InfeasibleHyperparameterError):
            check_scale(1.6, GirtBounds())

    def test_infeasible_region(self):
        # disc_high 1.5 pushes the lower bound up to the upper bound
        with pytest.raises(InfeasibleHyperparameterError, match="no feasible"):
            feasible_scale_interval(GirtBounds(disc_low=0.5, disc_high=1.5))

    def test_symmetric_bounds_branches_equal(self):
        b = GirtBounds(
            proxy_low=-1.0, proxy_high=1.0, ability_low=-4.0, ability_high=4.0
        )
        _, hi = feasible_scale_interval(b)
        assert hi == pytest.approx(b.disc_low * (b.ability_high - b.proxy_high))
        assert hi == pytest.approx(b.disc_low * (b.proxy_low - b.ability_low))

    def test_bounds_validation(self):
        with pytest.raises(DataFormatError):
            GirtBounds(proxy_low=1.0, proxy_high=-1.0)
        with pytest.raises(DataFormatError):
            GirtBounds(disc_low=-0.5)
        with pytest.raises(DataFormatError):
            GirtBounds(ability_low=-0.5)  # must lie below proxy_low


class TestGdfLearner:
    def test_symmetric_cancellation(self):
        model = make_model([0.0], [0.6, 0.6], [0.2, -0.2])
        vec = SignedResponseVector.from_values([1, -1])
        assert girt_gdf_learner(model, vec) == pytest.approx(0.0)

    def test_all_correct_constant_summands(self, wide_bounds):
        # proxy difficulties 0, proxy discriminations 1, scale 1: every
        # summand is exactly 1
        model = make_model(
            [0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], scale=1.0, bounds=wide_bounds
        )
        vec = SignedResponseVector.from_values([1, 1, 1])
        assert girt_gdf_learner(model, vec) == pytest.approx(1.0)

    def test_direct_evaluation(self):
        model = make_model([0.0], [0.8], [0.5])
        vec = SignedResponseVector.from_values([1])
        assert girt_gdf_learner(model, vec) == pytest.approx(0.5 + 1.25 / 0.8)

    def test_empty_evidence_errors(self):
        model = make_model([0.0], [0.8], [0.5])
        with pytest.raises(UndiagnosableError, match="no responses"):
            girt_gdf_learner(model, SignedResponseVector.from_values([0]))

    def test_vector_length_checked(self):
        model = make_model([0.0], [0.8], [0.5])
        with pytest.raises(DataFormatError):
            girt_gdf_learner(model, SignedResponseVector.from_values([1, 1]))


class TestGdfItem:
    def test_discrimination_direct(self, wide_bounds):
        # mean proxy difficulty 0, gaps +-0.5, scale 1 -> mean(|1/0.5|) = 2
        model = make_model(
            [0.5, -0.5], [1.0], [0.0], scale=1.0, bounds=wide_bounds
        )
        vec = SignedResponseVector.from_values([1, 1])
        a, _ = girt_gdf_item(model, vec)
        assert a == pytest.approx(2.0)

    def test_difficulty_direct(self, wide_bounds):
        # mean proxy discrimination 1, scale 1 -> b = mean(w - 1)
        model = make_model(
            [0.5, -0.5], [1.0], [0.0], scale=1.0, bounds=wide_bounds
        )
        vec = SignedResponseVector.from_values([1, 1])
        _, b = girt_gdf_item(model, vec)
        assert b == pytest.approx(-1.0)

    def test_discrimination_always_positive(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            n = int(rng.integers(2, 8))
            model = make_model(
                rng.uniform(-0.9, 0.9, n), rng.uniform(0.55, 0.95, 2), rng.uniform(-0.9, 0.9, 2)
            )
            vals = rng.choice([-1, 1], size=n)
            a, _ = girt_gdf_item(model, SignedResponseVector.from_values(vals))
            assert a > 0

    def test_empty_column_errors(self):
        model = make_model([0.0], [0.8], [0.5])
        with pytest.raises(UndiagnosableError):
            girt_gdf_item(model, SignedResponseVector.from_values([0]))


class TestTraining:
    def test_identical_rows_identical_theta(self):
        ds = ResponseDataset.from_triplets(
            [("a", "e0", 1), ("a", "e1", 0), ("b", "e0", 1), ("b", "e1", 0)]
        )
        model = girt_train(ds, epochs=3, seed=0)
        rows, _ = build_vectors(ds)
        assert girt_gdf_learner(model, rows[0]) == girt_gdf_learner(model, rows[1])

    def test_cold_start_all_correct(self):
        ds = ResponseDataset.from_triplets(
            [(f"s{i}", f"e{j}", 1) for i in range(4) for j in range(4)]
        )
        model = girt_train(ds, epochs=2, seed=1)
        theta, a, b, _ = generate_for_dataset(model, ds)
        assert (theta[:, None] - b[None, :] > 0).all()

    def test_loss_descends(self):
        ds, _ = synth_irt(60, 20, seed=5, density=0.8)
        losses = []
        girt_train(ds, epochs=5, lr=0.01, seed=2, on_epoch=lambda e, l: losses.append(l))
        assert losses[5] <= losses[0]

    def test_epochs_zero_is_seeded_init(self):
        ds, _ = synth_irt(20, 10, seed=6, density=1.0)
        a = girt_train(ds, epochs=0, seed=3)
        b = girt_train(ds, epochs=0, seed=3)
        assert np.array_equal(a.proxy_ability, b.proxy_ability)
        assert np.array_equal(a.proxy_disc, b.proxy_disc)
        assert np.array_equal(a.proxy_diff, b.proxy_diff)

    def test_deterministic_given_seed(self):
        ds, _ = synth_irt(30, 12, seed=7, density=0.7)
        a = girt_train(ds, epochs=4, seed=9)
        b = girt_train(ds, epochs=4, seed=9)
        assert np.array_equal(a.proxy_ability, b.proxy_ability)
        assert np.array_equal(a.proxy_disc, b.proxy_disc)
        assert np.array_equal(a.proxy_diff, b.proxy_diff)

    def test_infeasible_scale_rejected(self):
        ds, _ = synth_irt(5, 5, seed=0)
        with pytest.raises(InfeasibleHyperparameterError):
            girt_train(ds, scale=2.0, epochs=1, seed=0)

    def test_gradients_match_finite_differences(self):
        ds, _ = synth_irt(8, 6, seed=3, density=1.0)
        li, ji, y8 = ds.index_arrays
        y = y8.astype(float)
        r = 2 * y - 1
        rng = np.random.default_rng(0)
        wt = rng.uniform(-0.9, 0.9, 8)
        wb = rng.uniform(-0.9, 0.9, 6)
        wa = rng.uniform(0.55, 0.95, 6)
        batch = np.arange(li.size)

        def loss_at():
            l, *_ = _batch_loss_and_grads(wt, wa, wb, 1.25, li, ji, r, y, batch, 8, 6)
            return l

        _, g_wt, g_wa, g_wb = _batch_loss_and_grads(
            wt, wa, wb, 1.25, li, ji, r, y, batch, 8, 6
        )
        h = 1e-6
        for arr, grad in ((wt, g_wt), (wa, g_wa), (wb, g_wb)):
            for k in range(arr.size):
                old = arr[k]
                arr[k] = old + h
                up = loss_at()
                arr[k] = old - h
                down = loss_at()
                arr[k] = old
                fd = (up - down) / (2 * h)
                assert abs(grad[k] - fd) / (abs(grad[k]) + abs(fd) + 1e-8) < 1e-4


class TestMonotonicity:
    def test_flip_increases_theta_by_exact_amount(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            m = int(rng.integers(2, 10))
            model = make_model(
                [0.0], rng.uniform(0.55, 0.95, m), rng.uniform(-0.9, 0.9, m)
            )
            vals = rng.choice([-1, 1], size=m)
            wrong = np.flatnonzero(vals == -1)
            if wrong.size == 0:
                continue
            j = int(wrong[0])
            flipped = vals.copy()
            flipped[j] = 1
            before = girt_gdf_learner(model, SignedResponseVector.from_values(vals))
            after = girt_gdf_learner(model, SignedResponseVector.from_values(flipped))
            expected_gain = 2 * model.scale / (m * model.proxy_disc[j])
            assert after - before == pytest.approx(expected_gain, rel=1e-10)


class TestScaleContainment:
    def test_generated_theta_within_target_range_at_corners(self):
        bounds = GirtBounds()
        margin = 1e-6
        corners_b = np.array([bounds.proxy_low + margin, bounds.proxy_high - margin])
        corners_a = np.array([bounds.disc_low + margin, bounds.disc_high - margin])
        rng = np.random.default_rng(21)
        for scale in (1.25, 1.5):
            for _ in range(200):
                m = int(rng.integers(1, 12))
                wb = rng.choice(corners_b, size=m)
                wa = rng.choice(corners_a, size=m)
                r = rng.choice([-1.0, 1.0], size=m)
                theta = float((wb + scale * r / wa).mean())
                assert bounds.ability_low < theta < bounds.ability_high


class TestDiagnoseAndReport:
    def test_known_items_only(self, wide_bounds):
        model = make_model(
            [0.0, 0.0], [1.0, 1.0], [0.0, 0.0], scale=1.0, bounds=wide_bounds
        )
        theta, used, skipped = girt_diagnose_new(model, [("e0", 1), ("e1", 1)])
        assert theta == pytest.approx(1.0)
        assert (used, skipped) == (2, 0)

    def test_unknown_items_skipped_with_count(self, wide_bounds):
        model = make_model([0.0], [1.0], [0.0], scale=1.0, bounds=wide_bounds)
        theta, used, skipped = girt_diagnose_new(model, [("e0", 1), ("zz", 0)])
        assert theta == pytest.approx(1.0)
        assert (used, skipped) == (1, 1)

    def test_all_unknown_errors(self, wide_bounds):
        model = make_model([0.0], [1.0], [0.0], scale=1.0, bounds=wide_bounds)
        with pytest.raises(UndiagnosableError, match="zz"):
            girt_diagnose_new(model, [("zz", 1)])

    def test_repeat_call_is_pure(self):
        model = make_model([0.1, -0.3], [0.7, 0.9], [0.2, -0.1])
        first = girt_diagnose_new(model, [("e0", 1), ("e1", 0)])
        second = girt_diagnose_new(model, [("e0", 1), ("e1", 0)])
        assert first == second

    def test_percentile_examples(self):
        model = make_model([0.0], [0.8], [0.0])
        cohort = np.array([1.0, 2.0, 3.0, 4.0])
        assert girt_report(model, cohort, 2.5)["percentile"] == pytest.approx(0.5)
        assert girt_report(model, cohort, 9.0)["percentile"] == pytest.approx(1.0)
        assert girt_report(model, cohort, 1.0)["percentile"] == pytest.approx(0.0)

    def test_cdf_points_sorted_and_normalized(self):
        model = make_model([0.0], [0.8], [0.0])
        report = girt_report(model, np.array([3.0, 1.0, 2.0, 2.0]), 2.5)
        xs = [p[0] for p in report["cdf_points"]]
        cdfs = [p[1] for p in report["cdf_points"]]
        assert xs == sorted(xs)
        assert cdfs[-1] == pytest.approx(1.0)
        assert cdfs == sorted(cdfs)


class TestSerialization:
    def test_roundtrip_bitwise(self, tmp_path):
        ds, _ = synth_irt(15, 8, seed=2, density=0.9)
        model = girt_train(ds, epochs=3, seed=4)
        path = tmp_path / "m.json"
        save_girt(model, path)
        loaded = load_girt(path)
        assert np.array_equal(loaded.proxy_ability, model.proxy_ability)
        assert np.array_equal(loaded.proxy_disc, model.proxy_disc)
        assert np.array_equal(loaded.proxy_diff, model.proxy_diff)
        assert np.array_equal(loaded.cohort_thetas, model.cohort_thetas)
        assert loaded.scale == model.scale
        assert loaded.item_index == model.item_index

    def test_prediction_invariant_after_reload(self, tmp_path):
        ds, _ = synth_irt(15, 8, seed=2, density=0.9)
        model = girt_train(ds, epochs=3, seed=4)
        path = tmp_path / "m.json"
        save_girt(model, path)
        loaded = load_girt(path)
        responses = [("e0000", 1), ("e0003", 0)]
        assert girt_diagnose_new(model, responses) == girt_diagnose_new(loaded, responses)

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"kind": "other", "format_version": 1}')
        with pytest.raises(DataFormatError):
            load_girt(path)
