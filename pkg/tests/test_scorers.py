import math

import numpy as np
import pytest
import torch

from conftest import torch_grad_error
from temprel import geometry
from temprel.exceptions import ConfigurationError, InvalidInputError
from temprel.numerics import SeededRng, softmax
from temprel.scorers import (
    AtthBlock,
    ParamLayout,
    RelationSet,
    TranslationalParams,
    givens_rotation,
    predict_distribution,
    relation_scores,
    score_atth,
    score_mure,
    score_murp,
    score_transe,
)


def vec(*vals):
    return torch.tensor(vals, dtype=torch.float64)


def rand(rng, n, scale=1.0):
    return torch.from_numpy(scale * rng.standard_normal(n))


class TestRelationSet:
    def test_rejects_duplicates(self):
        with pytest.raises(InvalidInputError):
            RelationSet(("A", "A"))

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            RelationSet(())

    def test_index(self, relset):
        assert relset.index("After") == 1
        with pytest.raises(InvalidInputError):
            relset.index("Maybe")


class TestTransE:
    def test_zero_at_exact_translation(self):
        h, t_r = vec(1.0, 2.0), vec(0.5, -1.0)
        assert float(score_transe(h, h + t_r, t_r)) == 0.0

    def test_hand_arithmetic(self):
        # (1,0) + (0,1) - (1,0) = (0,1) -> -1
        assert float(score_transe(vec(1.0, 0.0), vec(1.0, 0.0), vec(0.0, 1.0))) == -1.0

    def test_translation_invariance(self):
        rng = SeededRng(0)
        h, t, t_r, shift = (rand(rng, 4) for _ in range(4))
        a = float(score_transe(h, t, t_r))
        b = float(score_transe(h + shift, t + shift, t_r))
        assert a == pytest.approx(b, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            score_transe(vec(1.0, 0.0), vec(1.0), vec(0.0, 1.0))


class TestMuRE:
    def test_identity_transform(self):
        h = vec(0.3, -0.7)
        assert float(score_mure(h, h, vec(1.0, 1.0), vec(0.0, 0.0))) == 0.0

    def test_hand_arithmetic_exact(self):
        # (2,1) + (0,1) = (2,2)
        s = score_mure(vec(1.0, 2.0), vec(2.0, 2.0), vec(2.0, 0.5), vec(0.0, 1.0))
        assert float(s) == 0.0

    def test_hand_arithmetic_off_by_one(self):
        s = score_mure(vec(1.0, 2.0), vec(3.0, 2.0), vec(2.0, 0.5), vec(0.0, 1.0))
        assert float(s) == -1.0

    def test_degenerates_to_transe(self):
        rng = SeededRng(1)
        for _ in range(10):
            h, t, t_r = (rand(rng, 6) for _ in range(3))
            a = float(score_mure(h, t, torch.ones(6, dtype=torch.float64), t_r))
            b = float(score_transe(h, t, t_r))
            assert a == pytest.approx(b, abs=1e-12)


class TestMuRP:
    def test_identity_transform_origin_exact(self):
        z = vec(0.0, 0.0)
        assert float(score_murp(z, z, vec(1.0, 1.0), z)) == 0.0

    def test_identity_transform_generic(self):
        # away from the origin the exp/log round-trip leaves only rounding
        h = vec(0.2, -0.3)
        s = score_murp(h, h, vec(1.0, 1.0), vec(0.0, 0.0))
        assert float(s) == pytest.approx(0.0, abs=1e-24)

    def test_compositional_oracle(self):
        rng = SeededRng(2)
        for _ in range(5):
            h, t = rand(rng, 4, 0.4), rand(rng, 4, 0.4)
            w, t_r = rand(rng, 4, 0.5), rand(rng, 4, 0.3)
            got = float(score_murp(h, t, w, t_r))
            # step-by-step composition through the geometry primitives
            head = geometry.expmap0(
                w * geometry.logmap0(geometry.project_to_ball(h, 1.0), 1.0), 1.0
            )
            tail = geometry.mobius_add(
                geometry.project_to_ball(t, 1.0), geometry.expmap0(t_r, 1.0), 1.0
            )
            d = float(geometry.poincare_distance(head, tail, 1.0))
            assert got == pytest.approx(-d * d, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_parameter_gradients(self, seed):
        rng = SeededRng(10 + seed)
        h, t = rand(rng, 4, 0.3), rand(rng, 4, 0.3)
        w = rand(rng, 4, 0.4).requires_grad_(True)
        t_r = rand(rng, 4, 0.3).requires_grad_(True)
        err = torch_grad_error(lambda: score_murp(h, t, w, t_r), [w, t_r])
        assert err < 1e-4


class TestAttH:
    def _block(self, d, rng=None, zero=False):
        half = d // 2
        if zero:
            z = lambda n: torch.zeros(n, dtype=torch.float64)
            return AtthBlock(z(half), z(half), z(d), z(d), torch.zeros((), dtype=torch.float64))
        return AtthBlock(
            rand(rng, half),
            rand(rng, half),
            rand(rng, d, 0.5),
            rand(rng, d, 0.3),
            rand(rng, 1)[0],
        )

    def test_identity_transform(self):
        # Fixed points of the zero-parameter transform: the reflection block
        # at angle 0 maps (x1, x2) -> (x1, -x2), so the invariant inputs are
        # those with zero second coordinate per 2-block.
        h = vec(0.2, 0.0, 0.15, 0.0)
        s = score_atth(h, h, self._block(4, zero=True))
        assert float(s) == 0.0

    def test_rotation_by_pi_negates_block(self):
        x = vec(0.3, -0.2)
        out = givens_rotation(torch.tensor([math.pi], dtype=torch.float64), x)
        np.testing.assert_allclose(out.numpy(), [-0.3, 0.2], atol=1e-15)

    def test_compositional_oracle(self):
        rng = SeededRng(3)
        for _ in range(5):
            h, t = rand(rng, 4, 0.3), rand(rng, 4, 0.3)
            block = self._block(4, rng)
            got = float(score_atth(h, t, block))
            c = float(torch.nn.functional.softplus(block.curv_raw))
            from temprel.scorers import givens_reflection

            cr = givens_rotation(block.rot, h)
            cf = givens_reflection(block.ref, h)
            logits = torch.tensor(
                [float((block.att * cr).sum()), float((block.att * cf).sum())],
                dtype=torch.float64,
            )
            alpha = torch.softmax(logits, dim=0)
            comb = alpha[0] * cr + alpha[1] * cf
            head = geometry.mobius_add(
                geometry.expmap0(comb, c), geometry.expmap0(block.t, c), c
            )
            d = float(geometry.poincare_distance(head, geometry.expmap0(t, c), c))
            assert got == pytest.approx(-d * d, abs=1e-10)

    def test_odd_dimension_rejected(self):
        with pytest.raises(ConfigurationError):
            ParamLayout("atth", 3, RelationSet(("A", "B")))

    @pytest.mark.parametrize("seed", range(3))
    def test_parameter_gradients(self, seed):
        rng = SeededRng(20 + seed)
        h, t = rand(rng, 4, 0.3), rand(rng, 4, 0.3)
        block = self._block(4, rng)
        params = [block.rot, block.ref, block.att, block.t, block.curv_raw]
        for p in params:
            p.requires_grad_(True)
        err = torch_grad_error(lambda: score_atth(h, t, block), params)
        assert err < 1e-4


class TestParamLayout:
    def test_zero_flat_gives_identity_transforms(self, relset):
        layout = ParamLayout("mure", 3, relset)
        params = layout.unflatten(torch.zeros(layout.dim, dtype=torch.float64))
        for r in relset:
            np.testing.assert_array_equal(params.blocks[r]["W"].numpy(), np.ones(3))
            np.testing.assert_array_equal(params.blocks[r]["t"].numpy(), np.zeros(3))

    def test_slicing_roundtrip(self, relset):
        layout = ParamLayout("mure", 3, relset)
        rng = SeededRng(4)
        raw = rand(rng, layout.dim)
        params = layout.unflatten(raw)
        # manual slice oracle: W blocks first (offset +1), then t blocks
        n, d = len(relset), 3
        for i, r in enumerate(relset):
            np.testing.assert_allclose(
                params.blocks[r]["W"].numpy(), raw[i * d : (i + 1) * d].numpy() + 1.0
            )
            np.testing.assert_allclose(
                params.blocks[r]["t"].numpy(),
                raw[n * d + i * d : n * d + (i + 1) * d].numpy(),
            )
        # flat view equals raw plus the offsets
        np.testing.assert_allclose(
            params.flat.numpy(), raw.numpy() + np.concatenate([np.ones(n * d), np.zeros(n * d)])
        )

    def test_wrong_length_rejected(self, relset):
        layout = ParamLayout("transe", 3, relset)
        with pytest.raises(InvalidInputError):
            layout.unflatten(torch.zeros(layout.dim + 1, dtype=torch.float64))

    def test_scores_match_manual_slices(self, relset):
        layout = ParamLayout("mure", 3, relset)
        rng = SeededRng(5)
        raw = rand(rng, layout.dim)
        params = layout.unflatten(raw)
        h, t = rand(rng, 3), rand(rng, 3)
        for i, r in enumerate(relset):
            w = raw[i * 3 : (i + 1) * 3] + 1.0
            t_r = raw[len(relset) * 3 + i * 3 : len(relset) * 3 + (i + 1) * 3]
            assert float(params.score(h, t, r)) == pytest.approx(
                float(score_mure(h, t, w, t_r)), abs=1e-12
            )


class TestPredictDistribution:
    def _params(self, relset, d=3, seed=6, scorer="mure"):
        layout = ParamLayout(scorer, d, relset)
        rng = SeededRng(seed)
        return layout.unflatten(rand(rng, layout.dim, 0.5))

    def test_equal_scores_give_uniform(self, relset):
        layout = ParamLayout("mure", 3, relset)
        params = layout.unflatten(torch.zeros(layout.dim, dtype=torch.float64))
        h = vec(0.1, 0.2, 0.3)
        probs = predict_distribution(h, h, params, relset)
        np.testing.assert_allclose(probs, [0.25] * 4, atol=1e-12)

    def test_one_dominant_score(self, relset):
        # With one relation's transform exact and the others far off, the
        # distribution is effectively one-hot.
        layout = ParamLayout("transe", 2, relset)
        raw = torch.full((layout.dim,), 1e3, dtype=torch.float64)
        raw[:2] = 0.0  # Before: exact identity translation
        params = layout.unflatten(raw)
        h = vec(0.0, 0.0)
        probs = predict_distribution(h, h, params, relset)
        assert probs[0] == pytest.approx(1.0, abs=1e-9)

    def test_matches_softmax_oracle(self, relset):
        params = self._params(relset)
        rng = SeededRng(7)
        h, t = rand(rng, 3), rand(rng, 3)
        scores = relation_scores(h, t, params, relset).detach().numpy()
        np.testing.assert_allclose(
            predict_distribution(h, t, params, relset), softmax(scores), atol=1e-12
        )
        # derived softmax values for fixed scores
        np.testing.assert_allclose(
            softmax([-1.0, -2.0, -3.0, -4.0]),
            [0.6439142598879722, 0.23688281808991013, 0.08714431874203257, 0.032058603280084995],
            atol=1e-12,
        )

    def test_shift_invariance(self, relset):
        # adding a constant to all scores leaves the prediction unchanged
        a = softmax([-5.0, -6.0, -7.0, -8.0])
        b = softmax([-1.0, -2.0, -3.0, -4.0])
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_missing_relation_params(self, relset):
        other = RelationSet(("Before", "After"))
        params = self._params(other)
        with pytest.raises(InvalidInputError):
            predict_distribution(vec(0.1, 0.2, 0.3), vec(0.1, 0.2, 0.3), params, relset)


class TestScorerProperties:
    @pytest.mark.parametrize("scorer", ["transe", "mure", "murp", "atth"])
    def test_scores_nonpositive(self, scorer, relset):
        layout = ParamLayout(scorer, 4, relset)
        rng = SeededRng(8)
        for _ in range(10):
            params = layout.unflatten(rand(rng, layout.dim, 0.3))
            h, t = rand(rng, 4, 0.3), rand(rng, 4, 0.3)
            scores = relation_scores(h, t, params, relset)
            assert float(scores.max()) <= 0.0

    @pytest.mark.parametrize("scorer", ["transe", "mure", "murp", "atth"])
    def test_input_gradients(self, scorer, relset):
        layout = ParamLayout(scorer, 4, relset)
        rng = SeededRng(9)
        params_raw = rand(rng, layout.dim, 0.3).requires_grad_(True)
        h = rand(rng, 4, 0.3).requires_grad_(True)
        t = rand(rng, 4, 0.3).requires_grad_(True)

        def loss():
            p = layout.unflatten(params_raw)
            return relation_scores(h, t, p, relset).logsumexp(0)

        err = torch_grad_error(loss, [h, t, params_raw])
        assert err < 1e-4
