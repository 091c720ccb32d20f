"""
Loss function tests: scalar-loop oracles, softmax invariants and gradient checks
"""

import math

import numpy as np
import pytest
import torch

from exceptions import RejectedInputError
from models.training_models import LossConfig, PromptSet
from services.losses import (
    LearnableTemperature, TextInputs, det_loss, dice_loss, joint_loss, seg_loss, similarity,
    student_loss, teacher_loss, temperature_softmax, text_det_loss, text_loc_loss, text_loss
)


def ce_oracle(logits, label):
    """-log softmax(logits)[label] with plain Python floats"""
    top = max(logits)
    log_norm = top + math.log(sum(math.exp(v - top) for v in logits))
    return log_norm - logits[label]


def make_text(prompts=PromptSet.DET_LOC, n=3, dim=6, seed=0) -> TextInputs:
    gen = torch.Generator().manual_seed(seed)
    return TextInputs(
        i_det=torch.randn(n, dim, generator=gen),
        i_loc=torch.randn(n, dim, generator=gen),
        E_det=torch.nn.functional.normalize(torch.randn(2, dim, generator=gen), dim=1),
        E_loc=torch.nn.functional.normalize(torch.randn(5, dim, generator=gen), dim=1),
        diagnosis=torch.tensor([1, 0, 1][:n]),
        location=torch.tensor([2, 0, 4][:n]),
        T_det=0.07,
        T_loc=0.5,
        prompts=prompts,
    )


def seg_batch(seed=1):
    gen = torch.Generator().manual_seed(seed)
    logits = torch.randn(2, 2, 3, 3, 3, generator=gen)
    mask = (torch.rand(2, 3, 3, 3, generator=gen) > 0.6).long()
    return logits, mask


class TestDiceLoss:
    def test_perfect_prediction(self):
        mask = torch.zeros(1, 4, 4, 4)
        mask[0, 1:3, 1:3, 1:3] = 1
        assert dice_loss(mask.clone(), mask).item() == pytest.approx(0.0, abs=1e-6)

    def test_both_empty_is_zero(self):
        empty = torch.zeros(2, 3, 3, 3)
        assert dice_loss(empty, empty).item() == pytest.approx(0.0)

    def test_matches_scalar_oracle(self):
        probs = torch.tensor([[0.2, 0.9, 0.5, 0.0]])
        mask = torch.tensor([[0.0, 1.0, 1.0, 0.0]])
        expected = 1 - (2 * (0.9 + 0.5) + 1e-5) / (1.6 + 2.0 + 1e-5)
        assert dice_loss(probs, mask).item() == pytest.approx(expected, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(RejectedInputError):
            dice_loss(torch.zeros(1, 4), torch.zeros(1, 5))


class TestSegAndDetLoss:
    def test_seg_loss_matches_voxel_loop(self):
        logits, mask = seg_batch()
        ce_terms, dice_terms = [], []
        for n in range(2):
            flat_logits = logits[n].reshape(2, -1).T.tolist()
            flat_mask = mask[n].reshape(-1).tolist()
            ce_terms += [ce_oracle(v, m) for v, m in zip(flat_logits, flat_mask)]
            probs = [math.exp(v[1]) / (math.exp(v[0]) + math.exp(v[1])) for v in flat_logits]
            inter = sum(p * m for p, m in zip(probs, flat_mask))
            dice_terms.append(1 - (2 * inter + 1e-5) / (sum(probs) + sum(flat_mask) + 1e-5))
        expected = sum(ce_terms) / len(ce_terms) + sum(dice_terms) / 2
        assert seg_loss(logits, mask).item() == pytest.approx(expected, rel=1e-5)

    def test_seg_loss_shape_mismatch(self):
        logits, mask = seg_batch()
        with pytest.raises(RejectedInputError):
            seg_loss(logits, mask[:, :2])

    def test_det_loss_matches_oracle(self):
        logits = torch.tensor([[0.3, -1.2], [2.0, 0.5]])
        labels = torch.tensor([1, 0])
        expected = (ce_oracle([0.3, -1.2], 1) + ce_oracle([2.0, 0.5], 0)) / 2
        assert det_loss(logits, labels).item() == pytest.approx(expected, rel=1e-6)

    def test_det_loss_rejects_non_binary(self):
        with pytest.raises(RejectedInputError):
            det_loss(torch.zeros(1, 2), torch.tensor([2]))


class TestTextLosses:
    def test_single_sample_matches_oracle(self):
        i = torch.tensor([0.5, -0.2, 0.1])
        E = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        T = 0.2
        logits = [0.5 / T, -0.2 / T, 0.1 / T]
        assert text_loc_loss(i, E, torch.tensor(2), T).item() == pytest.approx(ce_oracle(logits, 2), rel=1e-6)

    def test_batch_is_mean_of_samples(self):
        text = make_text()
        batched = text_det_loss(text.i_det, text.E_det, text.diagnosis, text.T_det)
        single = [text_det_loss(text.i_det[k], text.E_det, text.diagnosis[k], text.T_det) for k in range(3)]
        assert batched.item() == pytest.approx(sum(s.item() for s in single) / 3, rel=1e-5)

    def test_label_out_of_range(self):
        text = make_text()
        with pytest.raises(RejectedInputError):
            text_loc_loss(text.i_loc, text.E_loc, torch.tensor([0, 1, 5]), 0.1)

    def test_non_positive_temperature(self):
        text = make_text()
        with pytest.raises(RejectedInputError):
            text_det_loss(text.i_det, text.E_det, text.diagnosis, 0.0)

    def test_dim_mismatch(self):
        with pytest.raises(RejectedInputError):
            similarity(torch.zeros(4), torch.zeros(2, 5))

    def test_prompt_selection(self):
        loc_only = make_text(PromptSet.LOC)
        expected = text_loc_loss(loc_only.i_loc, loc_only.E_loc, loc_only.location, loc_only.T_loc)
        assert text_loss(loc_only).item() == pytest.approx(expected.item())

        both = make_text(PromptSet.DET_LOC)
        components = {}
        total = text_loss(both, components)
        assert total.item() == pytest.approx(components["text_loc"] + components["text_det"], rel=1e-6)

    def test_gradcheck_wrt_features_and_temperature(self):
        gen = torch.Generator().manual_seed(3)
        i = torch.randn(3, 4, dtype=torch.float64, generator=gen, requires_grad=True)
        E = torch.randn(5, 4, dtype=torch.float64, generator=gen)
        T = torch.tensor(0.3, dtype=torch.float64, requires_grad=True)
        labels = torch.tensor([0, 3, 4])
        assert torch.autograd.gradcheck(lambda a, t: text_loc_loss(a, E, labels, t), (i, T))


class TestTemperatureSoftmax:
    def test_sums_to_one(self):
        probs = temperature_softmax(torch.tensor([[0.1, 0.7, -0.3], [5.0, 5.0, 5.0]]), 0.07)
        torch.testing.assert_close(probs.sum(dim=-1), torch.ones(2))

    def test_shift_invariant(self):
        s = torch.tensor([0.2, -0.4, 0.9])
        torch.testing.assert_close(temperature_softmax(s, 0.5), temperature_softmax(s + 3.0, 0.5))

    def test_large_logits_stay_finite(self):
        probs = temperature_softmax(torch.tensor([1000.0, 0.0]), 1e-3)
        assert torch.isfinite(probs).all()
        assert probs[0].item() == pytest.approx(1.0)

    def test_higher_temperature_flattens(self):
        s = torch.tensor([1.0, 0.0])
        assert temperature_softmax(s, 5.0)[0] < temperature_softmax(s, 0.1)[0]


class TestLearnableTemperature:
    def test_initial_value(self):
        assert LearnableTemperature(0.07)().item() == pytest.approx(0.07, rel=1e-6)

    def test_clamped_to_bounds(self):
        temperature = LearnableTemperature(0.07)
        with torch.no_grad():
            temperature.log_t.fill_(50.0)
        assert temperature().item() == pytest.approx(10.0)
        with torch.no_grad():
            temperature.log_t.fill_(-50.0)
        assert temperature().item() == pytest.approx(1e-3)

    def test_rejects_non_positive_init(self):
        with pytest.raises(RejectedInputError):
            LearnableTemperature(0.0)


class TestCompositions:
    def test_teacher_adds_weighted_text(self):
        logits, mask = seg_batch()
        text = make_text(n=2)
        cfg = LossConfig(lambda_=0.5)
        expected = seg_loss(logits, mask) + 0.5 * text_loss(text)
        assert teacher_loss(logits, mask, text, cfg).item() == pytest.approx(expected.item(), rel=1e-6)

    @pytest.mark.parametrize("lam,prompts", [(0.0, PromptSet.DET_LOC), (0.3, PromptSet.NONE)])
    def test_teacher_without_text_is_seg_loss(self, lam, prompts):
        logits, mask = seg_batch()
        loss = teacher_loss(logits, mask, make_text(prompts, n=2), LossConfig(lambda_=lam))
        assert loss.item() == pytest.approx(seg_loss(logits, mask).item())
        assert teacher_loss(logits, mask, None, LossConfig()).item() == pytest.approx(loss.item())

    def test_joint_weights_detection(self):
        logits, mask = seg_batch()
        det_logits = torch.tensor([[0.1, 0.4], [1.0, -1.0]])
        diagnosis = torch.tensor([1, 0])
        expected = seg_loss(logits, mask) + 0.1 * det_loss(det_logits, diagnosis)
        got = joint_loss(logits, mask, det_logits, diagnosis, LossConfig(beta=0.1))
        assert got.item() == pytest.approx(expected.item(), rel=1e-6)

    def test_student_alpha_zero_equals_joint(self):
        logits, mask = seg_batch()
        det_logits = torch.tensor([[0.1, 0.4], [1.0, -1.0]])
        diagnosis = torch.tensor([1, 0])
        cfg = LossConfig(alpha=0.0)
        student = student_loss(logits, mask, det_logits, diagnosis, make_text(n=2), cfg)
        joint = joint_loss(logits, mask, det_logits, diagnosis, cfg)
        assert student.item() == joint.item()

    @pytest.mark.parametrize("seed", range(5))
    def test_student_and_teacher_gradcheck(self, seed):
        gen = torch.Generator().manual_seed(seed)
        f64 = dict(dtype=torch.float64, requires_grad=True)
        seg_logits = torch.randn(2, 2, 2, 2, 2, generator=gen, dtype=torch.float64).requires_grad_()
        det_logits = torch.randn(2, 2, generator=gen, dtype=torch.float64).requires_grad_()
        i_det = torch.randn(2, 4, generator=gen, dtype=torch.float64).requires_grad_()
        i_loc = torch.randn(2, 4, generator=gen, dtype=torch.float64).requires_grad_()
        log_t = torch.tensor([-1.0, -0.5], **f64)
        mask = (torch.rand(2, 2, 2, 2, generator=gen) > 0.5).long()
        E_det = torch.randn(2, 4, generator=gen, dtype=torch.float64)
        E_loc = torch.randn(5, 4, generator=gen, dtype=torch.float64)
        diagnosis, location = torch.tensor([1, 0]), torch.tensor([3, 0])
        cfg = LossConfig(lambda_=0.3, alpha=0.2, beta=0.1)

        def text_for(a, b, t):
            return TextInputs(a, b, E_det, E_loc, diagnosis, location, t.exp()[0], t.exp()[1])

        def student(s, d, a, b, t):
            return student_loss(s, mask, d, diagnosis, text_for(a, b, t), cfg)

        def teacher(s, a, b, t):
            return teacher_loss(s, mask, text_for(a, b, t), cfg)

        assert torch.autograd.gradcheck(student, (seg_logits, det_logits, i_det, i_loc, log_t))
        assert torch.autograd.gradcheck(teacher, (seg_logits, i_det, i_loc, log_t))

    def test_student_records_components(self):
        logits, mask = seg_batch()
        components = {}
        student_loss(logits, mask, torch.zeros(2, 2), torch.tensor([1, 0]), make_text(n=2),
                     LossConfig(), components)
        assert {"seg", "det", "text", "text_loc", "text_det"} <= set(components)


class TestRandomOracles:
    """Float64 scalar-loop oracles over many small random inputs"""

    @staticmethod
    def random_case(rng):
        n, k, dim = int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(2, 5))
        i = rng.normal(size=(n, dim))
        E = rng.normal(size=(k, dim))
        labels = rng.integers(0, k, size=n)
        T = float(rng.uniform(0.05, 2.0))
        return i, E, labels, T

    def test_text_loss_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            i, E, labels, T = self.random_case(rng)
            expected = 0.0
            for row, label in zip(i.tolist(), labels.tolist()):
                logits = [sum(a * b for a, b in zip(row, e)) / T for e in E.tolist()]
                expected += ce_oracle(logits, label)
            expected /= len(labels)
            got = text_loc_loss(torch.from_numpy(i), torch.from_numpy(E), torch.from_numpy(labels), T)
            assert got.item() == pytest.approx(expected, abs=1e-10)

    def test_similarity_and_softmax_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            i, E, _, T = self.random_case(rng)
            s = similarity(torch.from_numpy(i), torch.from_numpy(E)).numpy()
            probs = temperature_softmax(torch.from_numpy(s), T).numpy()
            for row, s_row, p_row in zip(i.tolist(), s, probs):
                dots = [sum(a * b for a, b in zip(row, e)) for e in E.tolist()]
                exps = [math.exp((d - max(dots)) / T) for d in dots]
                np.testing.assert_allclose(s_row, dots, atol=1e-10)
                np.testing.assert_allclose(p_row, [x / sum(exps) for x in exps], atol=1e-10)

    def test_seg_det_and_compositions_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 3))
            logits = rng.normal(size=(n, 2, 2, 2, 2))
            mask = rng.integers(0, 2, size=(n, 2, 2, 2))
            det_logits = rng.normal(size=(n, 2))
            diagnosis = rng.integers(0, 2, size=n)
            beta = float(rng.uniform(0, 1))

            ce, dice = [], []
            for b in range(n):
                flat = logits[b].reshape(2, -1).T.tolist()
                m = mask[b].reshape(-1).tolist()
                ce += [ce_oracle(v, y) for v, y in zip(flat, m)]
                p = [1.0 / (1.0 + math.exp(v[0] - v[1])) for v in flat]
                inter = sum(a * y for a, y in zip(p, m))
                dice.append(1 - (2 * inter + 1e-5) / (sum(p) + sum(m) + 1e-5))
            seg = sum(ce) / len(ce) + sum(dice) / n
            det = sum(ce_oracle(v, y) for v, y in zip(det_logits.tolist(), diagnosis.tolist())) / n

            t_logits, t_mask = torch.from_numpy(logits), torch.from_numpy(mask)
            t_det, t_diag = torch.from_numpy(det_logits), torch.from_numpy(diagnosis)
            assert seg_loss(t_logits, t_mask).item() == pytest.approx(seg, abs=1e-10)
            assert det_loss(t_det, t_diag).item() == pytest.approx(det, abs=1e-10)
            joint = joint_loss(t_logits, t_mask, t_det, t_diag, LossConfig(beta=beta))
            assert joint.item() == pytest.approx(seg + beta * det, abs=1e-10)

    def test_softmax_invariants_across_temperatures(self):
        rng = np.random.default_rng(3)
        s = torch.from_numpy(rng.normal(size=(1000, 5)))
        shift = torch.from_numpy(rng.normal(size=(1000, 1)))
        for T in (0.01, 0.07, 1.0, 10.0):
            probs = temperature_softmax(s, T)
            torch.testing.assert_close(probs.sum(dim=-1), torch.ones(1000, dtype=torch.float64),
                                       atol=1e-6, rtol=0)
            torch.testing.assert_close(temperature_softmax(s + shift, T), probs, atol=1e-6, rtol=0)
            assert torch.equal(probs.argmax(dim=-1), s.argmax(dim=-1))
