"""Model stages: shapes, invariants, determinism, gradient checks."""

import numpy as np
import pytest

from qeot import autodiff as ad
from qeot.data import DatasetSpec, generate, required_vocab
from qeot.errors import ConfigError, DataError
from qeot.loss import LossWeights, batch_loss
from qeot.model import ModelConfig, QEOTModel, resample_matrix, sincos_1d, sincos_2d

SPEC = DatasetSpec(seed=21, n_train=6, n_test=2, L=8, G=4, c_img=6, R=5,
                   max_triples=3, n_entity_patterns=6, sigma_noise=0.01)
CFG = ModelConfig(L=8, G=4, d=32, Q=3, R=5, heads=4, vocab=required_vocab(SPEC), c_img=6)


@pytest.fixture(scope="module")
def samples():
    train, _ = generate(SPEC)
    return train


@pytest.fixture(scope="module")
def model():
    return QEOTModel(CFG, seed=7)


class TestConfig:
    def test_heads_must_divide_d(self):
        with pytest.raises(ConfigError):
            ModelConfig(d=30, heads=4)


class TestEncodeText:
    def test_determinism(self, model):
        tokens = [0] * CFG.L
        a = model.encode_text(tokens).data
        b = model.encode_text(tokens).data
        assert np.array_equal(a, b)
        assert np.all(np.isfinite(a)) and a.shape == (CFG.L, CFG.d)

    def test_permuting_tokens_changes_output(self, model, samples):
        tokens = list(samples[0].tokens)
        permuted = tokens[::-1]
        assert not np.array_equal(model.encode_text(tokens).data,
                                  model.encode_text(permuted).data)

    def test_out_of_vocab_rejected(self, model):
        with pytest.raises(DataError):
            model.encode_text([CFG.vocab] + [0] * (CFG.L - 1))


class TestEncodeImage:
    def test_zero_grid_deterministic(self, model):
        zero = np.zeros((CFG.G, CFG.G, CFG.c_img))
        a, _ = model.encode_image(zero)
        b, _ = model.encode_image(zero)
        assert np.array_equal(a.data, b.data)
        assert a.shape == (CFG.L, CFG.d)

    def test_position_encoding_ignores_content(self, model, samples):
        _, pos_a = model.encode_image(np.zeros((CFG.G, CFG.G, CFG.c_img)))
        _, pos_b = model.encode_image(samples[0].grid)
        assert np.array_equal(pos_a.data, pos_b.data)

    def test_patch_perturbation_is_local(self, model):
        """Doubling one patch only moves outputs wired to it by the fixed
        resampling weights."""
        grid = np.full((CFG.G, CFG.G, CFG.c_img), 0.5)
        base, _ = model.encode_image(grid)
        bumped = grid.copy()
        bumped[1, 2] *= 2.0
        moved, _ = model.encode_image(bumped)
        changed = np.abs(moved.data - base.data).sum(axis=1) > 1e-12
        patch_index = 1 * CFG.G + 2
        expected = resample_matrix(CFG.G * CFG.G, CFG.L)[:, patch_index] > 0
        assert np.array_equal(changed, expected)
        assert 0 < changed.sum() < CFG.L

    def test_resample_identity_when_sizes_match(self):
        assert np.array_equal(resample_matrix(16, 16), np.eye(16))

    def test_sincos_halves(self):
        enc = sincos_2d(4, 32)
        assert enc.shape == (16, 32)
        # first half encodes x: constant along columns of equal x
        assert np.array_equal(enc[0, :16], enc[4, :16])   # same gx, different gy
        assert np.array_equal(enc[0, 16:], enc[1, 16:])   # same gy, different gx
        assert sincos_1d(8, 32).shape == (8, 32)


class TestSelectiveAttention:
    def test_length_one_passes_values_through(self):
        spec1 = DatasetSpec(seed=3, n_train=1, n_test=0, L=1, G=2, c_img=4, R=2,
                            max_triples=1, n_entity_patterns=3, sigma_noise=0.0)
        cfg1 = ModelConfig(L=1, G=2, d=16, Q=1, R=2, heads=2,
                           vocab=required_vocab(spec1), c_img=4)
        m = QEOTModel(cfg1, seed=0)
        h_text = m.encode_text_batch(np.array([[1]]))
        h_img, pos = m.encode_image_batch(np.zeros((1, 2, 2, 4)))
        t_attn, i_attn, w_t, w_i = m.selective_attention_batch(h_text, h_img, pos)
        assert np.allclose(w_t.data, 1.0)
        assert np.array_equal(t_attn.data, h_img.data)
        assert np.array_equal(i_attn.data, h_text.data)

    def test_rows_sum_to_one(self, model, samples):
        forwarded = model.forward_batch(samples[:4])
        for fs in forwarded.fusion:
            assert np.max(np.abs(fs.attn_text_img.sum(-1) - 1.0)) < 1e-9
            assert np.max(np.abs(fs.attn_img_text.sum(-1) - 1.0)) < 1e-9

    def test_gradient_matches_fd(self, model, samples):
        tokens = np.array([samples[0].tokens])
        grid = np.asarray(samples[0].grid)[None]

        def fwd():
            h_text = model.encode_text_batch(tokens)
            h_img, pos = model.encode_image_batch(grid)
            t_attn, i_attn, _, _ = model.selective_attention_batch(h_text, h_img, pos)
            return ad.tsum(t_attn * t_attn) + ad.tmean(i_attn)

        wrt = [(n, model.params[n].tensor) for n in
               ("text.embed", "img.patch.w", "img.patch.b", "text.attn.wq")]
        rep = ad.grad_check(fwd, wrt, max_checks_per_tensor=20, seed=5)
        assert rep.max_rel_err < 1e-4, rep


class TestGatedFusion:
    def test_convexity_fixed_point(self, model):
        h = ad.Tensor(np.random.default_rng(0).uniform(-1, 1, (1, CFG.L, CFG.d)))
        out, lam = model.gated_fusion_batch("text", h, h)
        assert np.allclose(out.data, h.data, atol=1e-12)
        assert np.all((lam.data > 0) & (lam.data < 1))

    def test_gate_limits(self, model):
        rng = np.random.default_rng(1)
        h_orig = ad.Tensor(rng.uniform(-1, 1, (1, CFG.L, CFG.d)))
        h_attn = ad.Tensor(rng.uniform(-1, 1, (1, CFG.L, CFG.d)))
        a = model.params["fusion.text.A"].tensor.data.copy()
        b = model.params["fusion.text.B"].tensor.data.copy()
        try:
            # force the gate toward 0: both projections hugely negative
            model.params["fusion.text.A"].tensor.data[...] = 0.0
            model.params["fusion.text.B"].tensor.data[...] = -1e3 * np.eye(CFG.d) @ np.eye(CFG.d)
            h_pos = ad.Tensor(np.abs(h_orig.data) + 0.1)
            out0, lam0 = model.gated_fusion_batch("text", h_pos, h_attn)
            assert np.max(lam0.data) < 1e-6
            assert np.allclose(out0.data, h_pos.data, atol=1e-4)
            # and toward 1
            model.params["fusion.text.B"].tensor.data[...] = 1e3 * np.eye(CFG.d)
            out1, lam1 = model.gated_fusion_batch("text", h_pos, h_attn)
            assert np.min(lam1.data) > 1 - 1e-6
            assert np.allclose(out1.data, h_attn.data, atol=1e-4)
        finally:
            model.params["fusion.text.A"].tensor.data[...] = a
            model.params["fusion.text.B"].tensor.data[...] = b


class TestQueryTransformer:
    def test_output_shape_and_determinism(self, model, samples):
        forwarded = model.forward_batch(samples[:2])
        again = model.forward_batch(samples[:2])
        assert forwarded.outputs[0].boxes.shape == (CFG.Q, 4)
        assert np.array_equal(forwarded.outputs[0].boxes.data, again.outputs[0].boxes.data)

    def test_decoder_cross_rows_stochastic(self, model, samples):
        forwarded = model.forward_batch(samples[:4])
        sums = forwarded.cross_attention.sum(axis=-1)
        assert np.max(np.abs(sums - 1.0)) < 1e-9


class TestHeads:
    def test_distributions_and_boxes(self, model, samples):
        forwarded = model.forward_batch(samples[:6])
        for out in forwarded.outputs:
            assert np.max(np.abs(out.start_dist.data.sum(-1) - 1.0)) < 1e-9
            assert np.max(np.abs(out.end_dist.data.sum(-1) - 1.0)) < 1e-9
            assert np.all((out.boxes.data > 0.0) & (out.boxes.data < 1.0))
            assert out.rel_logits.shape == (CFG.Q, CFG.R + 1)
            assert np.all(np.isfinite(out.rel_logits.data))
            assert np.all(out.rel_logits.data >= 0.0)

    def test_identical_queries_give_identical_rows(self, samples):
        m = QEOTModel(CFG, seed=9)
        q = m.params["queries"].tensor.data
        q[1] = q[0]  # duplicate one query
        forwarded = m.forward_batch(samples[:1])
        out = forwarded.outputs[0]
        assert np.allclose(out.start_dist.data[0], out.start_dist.data[1], atol=1e-12)
        assert np.allclose(out.boxes.data[0], out.boxes.data[1], atol=1e-12)

    def test_rel_logits_shape_for_r21(self):
        spec = DatasetSpec(seed=2, n_train=1, n_test=0, L=16, G=4, R=21,
                           max_triples=2, n_entity_patterns=4, sigma_noise=0.0)
        cfg = ModelConfig(L=16, G=4, d=32, Q=5, R=21, vocab=required_vocab(spec), c_img=8)
        m = QEOTModel(cfg, seed=0)
        train, _ = generate(spec)
        out, _ = m.forward(train[0])
        assert out.rel_logits.shape == (5, 22)

    def test_entity_head_gradient(self, model, samples):
        def fwd():
            forwarded = model.forward_batch(samples[:1])
            out = forwarded.outputs[0]
            return ad.tsum(out.start_dist * out.start_dist) - ad.tmean(out.log_end)

        wrt = [(n, model.params[n].tensor) for n in
               ("ent_head.w1", "ent_head.w2", "ent_head.b1", "ent_head.b2")]
        rep = ad.grad_check(fwd, wrt, max_checks_per_tensor=12, seed=6)
        assert rep.max_rel_err < 1e-4, rep

    def test_rel_box_head_gradient(self, model, samples):
        def fwd():
            forwarded = model.forward_batch(samples[:1])
            out = forwarded.outputs[0]
            return ad.tsum(out.boxes * out.boxes) - ad.tmean(out.log_rel)

        wrt = [(n, model.params[n].tensor) for n in
               ("rel_head.cross_w", "rel_head.w", "box_head.w", "box_head.b")]
        rep = ad.grad_check(fwd, wrt, max_checks_per_tensor=12, seed=7)
        assert rep.max_rel_err < 1e-4, rep


class TestForward:
    def test_shape_contract_sweep(self):
        for (L, G, d, Q, R) in [(8, 4, 32, 3, 5), (16, 4, 64, 5, 21), (32, 8, 64, 7, 21)]:
            spec = DatasetSpec(seed=1, n_train=2, n_test=0, L=L, G=G, R=R,
                               max_triples=2, n_entity_patterns=4, sigma_noise=0.01)
            cfg = ModelConfig(L=L, G=G, d=d, Q=Q, R=R, vocab=required_vocab(spec),
                              c_img=spec.c_img)
            m = QEOTModel(cfg, seed=3)
            train, _ = generate(spec)
            out, fusion = m.forward(train[0])
            assert out.start_dist.shape == (Q, L)
            assert out.end_dist.shape == (Q, L)
            assert out.rel_logits.shape == (Q, R + 1)
            assert out.boxes.shape == (Q, 4)
            assert fusion.h_text_out.shape == (L, d)
            assert np.all((fusion.gate_text > 0) & (fusion.gate_text < 1))
            assert np.all((fusion.gate_img > 0) & (fusion.gate_img < 1))

    def test_invariant_sweep_random_inputs(self, model):
        rng = np.random.default_rng(10)
        for _ in range(25):
            tokens = rng.integers(0, CFG.vocab, (2, CFG.L))
            grids = rng.uniform(0, 1, (2, CFG.G, CFG.G, CFG.c_img))
            h_text = model.encode_text_batch(tokens)
            h_img, pos = model.encode_image_batch(grids)
            t_attn, i_attn, w_t, w_i = model.selective_attention_batch(h_text, h_img, pos)
            assert np.max(np.abs(w_t.data.sum(-1) - 1.0)) < 1e-9
            out_t, gate = model.gated_fusion_batch("text", h_text, t_attn)
            assert np.all((gate.data > 0) & (gate.data < 1))
            assert np.all(np.isfinite(out_t.data))

    def test_full_composite_gradient(self, model, samples):
        """End-to-end: joint loss vs finite differences on sampled coords."""
        weights = LossWeights()

        def fwd():
            forwarded = model.forward_batch(samples[:2])
            total, _ = batch_loss(forwarded.outputs, samples[:2], weights)
            return total

        wrt = list((n, p.tensor) for n, p in model.params.items())
        rep = ad.grad_check(fwd, wrt, max_checks_per_tensor=2, seed=8)
        assert rep.max_rel_err < 1e-3, rep
