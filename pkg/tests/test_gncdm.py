import numpy as np
import pytest

from cogdiag.core import QMatrix, ResponseDataset, SignedResponseVector, signed_matrix
from cogdiag.dataio import synth_irt, synth_qmatrix
from cogdiag.errors import DataFormatError, UndiagnosableError
from cogdiag.gncdm import (
    GncdmDims,
    _batch_loss_and_grads,
    _init_model,
    gncdm_diagnose_new,
    gncdm_gdf_item,
    gncdm_gdf_learner,
    gncdm_irf,
    gncdm_report,
    gncdm_theta_exp,
    gncdm_train,
    gncdm_theta_exp as theta_exp,
    generate_learner_traits,
    load_gncdm,
    save_gncdm,
)

TOY_DIMS = GncdmDims(learner_hidden=6, item_hidden=5, head_hidden=4, agg_dim=3)


def toy_setup(n=6, m=6, k=3, seed=7, density=1.0, alpha=0.5, init_seed=11):
    ds, _ = synth_irt(n, m, seed=seed, density=density)
    q = synth_qmatrix(ds.item_ids, k, seed=3).aligned_to(ds)
    model = _init_model(n, m, q, alpha, TOY_DIMS, ds.learner_index, ds.item_index, init_seed)
    return ds, q, model


class TestThetaExp:
    def test_zero_row_gives_half(self, tiny_q):
        out = gncdm_theta_exp(SignedResponseVector.from_values([0, 0]), tiny_q)
        assert np.allclose(out, 0.5)

    def test_single_concept_value(self):
        # two correct responses on a one-concept Q: sigmoid(2 / sqrt(1))
        q = QMatrix(
            entries=np.array([[1], [1]], dtype=np.int8),
            knowledge_labels=("k",),
            item_ids=("e0", "e1"),
        )
        out = gncdm_theta_exp(SignedResponseVector.from_values([1, 1]), q)
        assert out[0] == pytest.approx(0.8808, abs=1e-4)

    def test_cancellation(self):
        q = QMatrix(
            entries=np.array([[1], [1]], dtype=np.int8),
            knowledge_labels=("k",),
            item_ids=("e0", "e1"),
        )
        out = gncdm_theta_exp(SignedResponseVector.from_values([1, -1]), q)
        assert out[0] == pytest.approx(0.5)

    def test_dimension_mismatch(self, tiny_q):
        with pytest.raises(DataFormatError):
            gncdm_theta_exp(SignedResponseVector.from_values([1]), tiny_q)


class TestGdfLearner:
    def test_alpha_one_equals_explicit_path(self):
        ds, q, model = toy_setup(alpha=1.0)
        vec = SignedResponseVector.from_values(signed_matrix(ds)[0])
        out = gncdm_gdf_learner(model, vec)
        expected = theta_exp(vec, q)
        assert np.array_equal(out, expected)

    def test_alpha_zero_equals_implicit_path(self):
        from cogdiag.nnkernel import forward

        ds, _, model = toy_setup(alpha=0.0)
        vec = SignedResponseVector.from_values(signed_matrix(ds)[0])
        out = gncdm_gdf_learner(model, vec)
        imp, _ = forward(model.learner_branch, vec.values.astype(float)[None, :])
        assert np.array_equal(out, imp[0])

    def test_identical_rows_identical_theta(self):
        ds, _, model = toy_setup()
        vec = SignedResponseVector.from_values(signed_matrix(ds)[2])
        same = SignedResponseVector.from_values(signed_matrix(ds)[2].copy())
        assert np.array_equal(gncdm_gdf_learner(model, vec), gncdm_gdf_learner(model, same))

    def test_components_in_unit_interval(self):
        ds, _, model = toy_setup()
        for row in signed_matrix(ds):
            out = gncdm_gdf_learner(model, SignedResponseVector.from_values(row))
            assert ((out > 0) & (out < 1)).all()


class TestGdfItem:
    def test_identical_columns_identical_psi(self):
        ds, _, model = toy_setup()
        col = SignedResponseVector.from_values(signed_matrix(ds)[:, 1])
        same = SignedResponseVector.from_values(signed_matrix(ds)[:, 1].copy())
        assert np.array_equal(gncdm_gdf_item(model, col), gncdm_gdf_item(model, same))

    def test_output_range(self):
        ds, _, model = toy_setup()
        for j in range(ds.n_items):
            out = gncdm_gdf_item(
                model, SignedResponseVector.from_values(signed_matrix(ds)[:, j])
            )
            assert ((out > 0) & (out < 1)).all()

    def test_zero_column_fixed_point(self):
        ds, _, model = toy_setup()
        zero = SignedResponseVector.from_values(np.zeros(ds.n_learners, dtype=np.int8))
        a = gncdm_gdf_item(model, zero)
        b = gncdm_gdf_item(model, zero)
        assert np.array_equal(a, b)


class TestIrf:
    def test_masked_component_exactly_ignored(self):
        _, q, model = toy_setup()
        rng = np.random.default_rng(5)
        q_row = q.entries[0].astype(float)
        masked = np.flatnonzero(q_row == 0)
        if masked.size == 0:
            q_row = q_row.copy()
            q_row[0] = 0
            masked = np.array([0])
        theta = rng.random(q.n_concepts)
        psi = rng.random(q.n_concepts)
        base = gncdm_irf(model, theta, psi, q_row)
        bumped = theta.copy()
        bumped[masked[0]] = rng.random()
        assert gncdm_irf(model, bumped, psi, q_row) == base

    def test_monotone_in_unmasked_theta(self):
        _, q, model = toy_setup()
        rng = np.random.default_rng(6)
        q_row = np.ones(q.n_concepts)
        for _ in range(50):
            theta = rng.random(q.n_concepts)
            psi = rng.random(q.n_concepts)
            k = int(rng.integers(q.n_concepts))
            bumped = theta.copy()
            bumped[k] = min(1.0, bumped[k] + rng.random() * 0.5)
            assert gncdm_irf(model, bumped, psi, q_row) >= gncdm_irf(model, theta, psi, q_row)

    def test_output_in_unit_interval(self):
        _, q, model = toy_setup()
        rng = np.random.default_rng(7)
        for _ in range(20):
            val = gncdm_irf(
                model, rng.random(q.n_concepts), rng.random(q.n_concepts), np.ones(q.n_concepts)
            )
            assert 0 < val < 1

    def test_all_zero_mask_rejected(self):
        _, q, model = toy_setup()
        with pytest.raises(DataFormatError):
            gncdm_irf(model, np.ones(q.n_concepts) / 2, np.ones(q.n_concepts) / 2,
                      np.zeros(q.n_concepts))


class TestTraining:
    def test_epochs_zero_is_seeded_init(self):
        ds, _ = synth_irt(10, 8, seed=2, density=1.0)
        q = synth_qmatrix(ds.item_ids, 3, seed=4)
        a = gncdm_train(ds, q, dims=TOY_DIMS, epochs=0, seed=5)
        b = gncdm_train(ds, q, dims=TOY_DIMS, epochs=0, seed=5)
        for la, lb in zip(a.learner_branch, b.learner_branch):
            assert np.array_equal(la.weights, lb.weights)

    def test_loss_decreases(self):
        ds, _ = synth_irt(50, 10, seed=8, density=1.0)
        q = synth_qmatrix(ds.item_ids, 4, seed=9)
        losses = []
        gncdm_train(
            ds, q, dims=TOY_DIMS, lr=0.01, epochs=10, seed=1,
            on_epoch=lambda e, l: losses.append(l),
        )
        assert losses[10] < losses[0]

    def test_duplicate_learners_identical_theta_after_training(self):
        triplets = [(f"s{i}", f"e{j}", (i + j) % 2) for i in range(4) for j in range(5)]
        triplets += [("twin", f"e{j}", (0 + j) % 2) for j in range(5)]  # copy of s0
        ds = ResponseDataset.from_triplets(triplets)
        q = synth_qmatrix(ds.item_ids, 3, seed=1)
        model = gncdm_train(ds, q, dims=TOY_DIMS, epochs=4, seed=2)
        mat = signed_matrix(ds)
        t0 = gncdm_gdf_learner(model, SignedResponseVector.from_values(mat[ds.learner_index["s0"]]))
        t1 = gncdm_gdf_learner(model, SignedResponseVector.from_values(mat[ds.learner_index["twin"]]))
        assert np.array_equal(t0, t1)

    def test_deterministic(self):
        ds, _ = synth_irt(20, 8, seed=3, density=0.9)
        q = synth_qmatrix(ds.item_ids, 3, seed=5)
        a = gncdm_train(ds, q, dims=TOY_DIMS, epochs=3, seed=6)
        b = gncdm_train(ds, q, dims=TOY_DIMS, epochs=3, seed=6)
        for la, lb in zip(a.head, b.head):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.bias, lb.bias)

    def test_alpha_validated(self):
        ds, _ = synth_irt(5, 5, seed=1)
        q = synth_qmatrix(ds.item_ids, 2, seed=2)
        with pytest.raises(DataFormatError):
            gncdm_train(ds, q, alpha=1.5, dims=TOY_DIMS, epochs=1, seed=0)


class TestGradients:
    def test_composite_matches_finite_differences(self):
        ds, q, model = toy_setup()
        smat = signed_matrix(ds).astype(float)
        li, ji, y8 = ds.index_arrays
        y = y8.astype(float)
        ul, inv_l = np.unique(li, return_inverse=True)
        ui, inv_i = np.unique(ji, return_inverse=True)
        q_ent = q.entries.astype(float)

        def compute(return_grads=False):
            loss, grads = _batch_loss_and_grads(
                model, smat[ul], smat.T.copy()[ui], inv_l, inv_i, q_ent[ji], y
            )
            return (loss, grads) if return_grads else loss

        loss, grads = compute(return_grads=True)
        h = 1e-5
        named = (
            list(zip(model.learner_branch, grads["learner_branch"]))
            + list(zip(model.item_branch, grads["item_branch"]))
            + [(model.theta_agg, grads["theta_agg"]), (model.psi_agg, grads["psi_agg"])]
            + list(zip(model.head, grads["head"]))
        )
        for layer, g in named:
            for arr, g_arr in ((layer.weights, g.d_weights), (layer.bias, g.d_bias)):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    old = arr[idx]
                    arr[idx] = old + h
                    up = compute()
                    arr[idx] = old - h
                    down = compute()
                    arr[idx] = old
                    fd = (up - down) / (2 * h)
                    ga = g_arr[idx]
                    assert abs(ga - fd) / (abs(ga) + abs(fd) + 1e-8) < 1e-4


class TestMonotonicityEndToEnd:
    def test_theta_monotone_in_responses(self):
        rng = np.random.default_rng(13)
        for alpha in (0.0, 0.5, 1.0):
            ds, q, model = toy_setup(alpha=alpha, init_seed=17)
            for _ in range(40):
                r = rng.choice([-1, 0, 1], size=ds.n_items)
                r_hi = r.copy()
                bump = rng.random(ds.n_items) < 0.4
                r_hi[bump] = np.minimum(r_hi[bump] + 1, 1)
                lo = gncdm_gdf_learner(model, SignedResponseVector.from_values(r))
                hi = gncdm_gdf_learner(model, SignedResponseVector.from_values(r_hi))
                assert (hi >= lo - 1e-12).all()

    def test_prediction_monotone_in_responses(self):
        ds, q, model = toy_setup(init_seed=19)
        rng = np.random.default_rng(23)
        psi = rng.random(q.n_concepts)
        q_row = q.entries[0].astype(float)
        for _ in range(30):
            r = rng.choice([-1, 0, 1], size=ds.n_items)
            r_hi = np.minimum(r + (rng.random(ds.n_items) < 0.5), 1)
            lo = gncdm_gdf_learner(model, SignedResponseVector.from_values(r))
            hi = gncdm_gdf_learner(model, SignedResponseVector.from_values(r_hi))
            assert gncdm_irf(model, hi, psi, q_row) >= gncdm_irf(model, lo, psi, q_row) - 1e-12


class TestDiagnoseAndReport:
    def test_empty_rows_share_one_fixed_point(self):
        ds, _, model = toy_setup()
        zero = SignedResponseVector.from_values(np.zeros(ds.n_items, dtype=np.int8))
        a = gncdm_gdf_learner(model, zero)
        b = gncdm_gdf_learner(model, zero)
        assert np.array_equal(a, b)

    def test_repeat_diagnosis_identical(self):
        ds, _, model = toy_setup()
        responses = [(ds.item_ids[0], 1), (ds.item_ids[1], 0)]
        ta, _, _ = gncdm_diagnose_new(model, responses)
        tb, _, _ = gncdm_diagnose_new(model, responses)
        assert np.array_equal(ta, tb)

    def test_unknown_items_skipped(self):
        ds, _, model = toy_setup()
        theta, used, skipped = gncdm_diagnose_new(model, [(ds.item_ids[0], 1), ("zz", 1)])
        assert (used, skipped) == (1, 1)

    def test_all_unknown_errors(self):
        ds, _, model = toy_setup()
        with pytest.raises(UndiagnosableError):
            gncdm_diagnose_new(model, [("zz", 1)])

    def test_adding_correct_response_never_decreases_theta(self):
        for alpha in (0.3, 1.0):
            ds, _, model = toy_setup(alpha=alpha, init_seed=29)
            base = [(ds.item_ids[0], 1), (ds.item_ids[1], 0)]
            extended = base + [(ds.item_ids[2], 1)]
            ta, _, _ = gncdm_diagnose_new(model, base)
            tb, _, _ = gncdm_diagnose_new(model, extended)
            assert (tb >= ta - 1e-12).all()

    def test_report_correct_rates(self):
        # concept k00 required by e0,e1,e2; learner answers 2 of 3 correctly
        q = QMatrix(
            entries=np.array([[1, 0], [1, 0], [1, 0], [0, 1]], dtype=np.int8),
            knowledge_labels=("k00", "k01"),
            item_ids=("e0", "e1", "e2", "e3"),
        )
        ds = ResponseDataset.from_triplets(
            [(f"s{i}", f"e{j}", 1) for i in range(3) for j in range(4)]
        )
        model = _init_model(3, 4, q.aligned_to(ds), 0.5, TOY_DIMS, ds.learner_index,
                            ds.item_index, seed=31)
        report = gncdm_report(model, [("e0", 1), ("e1", 1), ("e2", 0)])
        assert report["knowledge_correct_rates"][0] == pytest.approx(2 / 3)
        assert report["knowledge_correct_rates"][1] is None
        assert report["n_evidence"] == 3
        assert len(report["theta"]) == 2

    def test_report_theta_matches_diagnose(self):
        ds, _, model = toy_setup()
        responses = [(ds.item_ids[0], 1)]
        report = gncdm_report(model, responses)
        theta, _, _ = gncdm_diagnose_new(model, responses)
        assert report["theta"] == [float(v) for v in theta]


class TestSerialization:
    def test_roundtrip_bitwise(self, tmp_path):
        ds, _ = synth_irt(12, 7, seed=4, density=0.8)
        q = synth_qmatrix(ds.item_ids, 3, seed=6)
        model = gncdm_train(ds, q, dims=TOY_DIMS, epochs=2, seed=8)
        path = tmp_path / "m.json"
        save_gncdm(model, path)
        loaded = load_gncdm(path)
        responses = [(ds.item_ids[0], 1), (ds.item_ids[3], 0)]
        ta, _, _ = gncdm_diagnose_new(model, responses)
        tb, _, _ = gncdm_diagnose_new(loaded, responses)
        assert np.array_equal(ta, tb)
        assert loaded.alpha == model.alpha
        assert np.array_equal(loaded.qmatrix.entries, model.qmatrix.entries)

    def test_generate_traits_for_evidence(self):
        ds, _, model = toy_setup()
        theta = generate_learner_traits(model, ds)
        assert theta.shape == (ds.n_learners, model.n_concepts)
        vec = SignedResponseVector.from_values(signed_matrix(ds)[0])
        assert np.allclose(theta[0], gncdm_gdf_learner(model, vec))
