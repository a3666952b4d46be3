import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphnas.tensor import (
    SGD, Adam, CosineRestartSchedule, Tensor, avg_pool2d, channel_affine, concat, conv2d, shift,
    cross_entropy, global_avg_pool, linear, lr_at, max_pool2d, no_grad, relu, sample_norm, softmax,
    weighted_sum,
)

from conftest import central_difference, direct_conv2d, relative_error


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 5, 5))
        w = np.zeros((3, 1, 3, 3))
        w[:, 0, 1, 1] = 1.0
        out = conv2d(Tensor(x), Tensor(w), groups=3)
        np.testing.assert_array_equal(out.data, x)

    def test_all_ones_kernel_border_counts(self):
        out = conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3)))).data[0, 0]
        assert out[2, 2] == 9 and out[1, 1] == 9
        assert out[0, 2] == 6 and out[2, 0] == 6 and out[4, 1] == 6
        assert out[0, 0] == out[0, 4] == out[4, 0] == out[4, 4] == 4

    def test_dilated_all_ones(self):
        out = conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), dilation=2).data[0, 0]
        assert out[2, 2] == 9
        assert out[0, 0] == 4 and out[4, 4] == 4

    @pytest.mark.parametrize("k,d,s,groups,cin,cout", [
        (1, 1, 1, 1, 3, 4), (1, 1, 2, 1, 4, 2), (3, 1, 1, 1, 2, 3), (3, 2, 2, 1, 2, 2),
        (5, 1, 1, 4, 4, 4), (3, 2, 2, 4, 4, 4), (7, 2, 1, 3, 3, 3), (3, 1, 1, 2, 4, 6),
    ])
    def test_matches_direct_convolution(self, rng, k, d, s, groups, cin, cout):
        x = rng.normal(size=(2, cin, 7, 6))
        w = rng.normal(size=(cout, cin // groups, k, k))
        got = conv2d(Tensor(x), Tensor(w), stride=s, dilation=d, groups=groups).data
        np.testing.assert_allclose(got, direct_conv2d(x, w, s, d, groups), atol=1e-12)

    @pytest.mark.parametrize("k", [1, 3, 5, 7])
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_same_padding_preserves_shape(self, rng, k, d):
        x = Tensor(rng.normal(size=(1, 2, 9, 8)))
        out = conv2d(x, Tensor(rng.normal(size=(2, 1, k, k))), dilation=d, groups=2)
        assert out.shape == x.shape

    @pytest.mark.parametrize("size,stride", [(8, 2), (7, 2), (5, 3)])
    def test_output_extent_is_ceiling(self, rng, size, stride):
        out = conv2d(Tensor(rng.normal(size=(1, 1, size, size))), Tensor(np.ones((1, 1, 3, 3))), stride=stride)
        assert out.shape[-1] == math.ceil(size / stride)

    def test_rejects_even_kernel(self):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 2, 3, 3))))
        with pytest.raises(ValueError):
            conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((3, 1, 3, 3))), groups=2)


class TestElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_relu_all_negative(self):
        x = Tensor(-np.arange(1.0, 5.0), requires_grad=True)
        y = relu(x)
        y.sum().backward()
        assert not y.data.any()
        assert not x.grad.any()

    def test_relu_gradient_matches_finite_difference(self):
        x = np.array([-1.0, 2.0])
        t = Tensor(x.copy(), requires_grad=True)
        relu(t).sum().backward()
        (fd,) = central_difference(lambda a: np.maximum(a, 0).sum(), [x])
        np.testing.assert_allclose(t.grad, [0, 1])
        np.testing.assert_allclose(fd, [0, 1], atol=1e-9)


class TestSoftmax:
    def test_known_values(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]).data, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(softmax([math.log(2), 0.0]).data, [2 / 3, 1 / 3], atol=1e-15)
        np.testing.assert_allclose(softmax([5.0, 5.0, 5.0]).data, [1 / 3] * 3, atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax([])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
    def test_normalized_and_shift_invariant(self, logits, shift):
        p = softmax(logits).data
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-12
        q = softmax([v + shift for v in logits]).data
        assert np.max(np.abs(p - q)) < 1e-12


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(Tensor(np.zeros((3, 7))), [0, 3, 6]).item() == pytest.approx(math.log(7), abs=1e-12)

    def test_dominant_true_class(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 200.0
        assert cross_entropy(Tensor(logits), [2]).item() < 1e-80

    def test_closed_form(self):
        assert cross_entropy(Tensor([[1.0, 0.0]]), [0]).item() == pytest.approx(math.log(1 + math.e ** -1), abs=1e-12)
        assert cross_entropy(Tensor([[1.0, 0.0]]), [0]).item() == pytest.approx(0.3133, abs=1e-4)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 3))), [3])
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 3))), [-1])


def _nudge_from_zero(a, margin=1e-2):
    """Keep inputs away from ReLU kinks and pooling ties."""
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin, a)


def _check(build, arrays, tol=1e-4):
    """Reverse-mode vs central differences for ``sum(build(*tensors) * probe)``."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    probe = np.random.default_rng(7).normal(size=out.shape)
    (out * Tensor(probe)).sum().backward()

    def scalar(*arrs):
        with no_grad():
            return float((build(*[Tensor(a) for a in arrs]).data * probe).sum())

    fds = central_difference(scalar, [a.copy() for a in arrays])
    for t, fd in zip(tensors, fds):
        assert relative_error(t.grad, fd) < tol


class TestGradients:
    def test_conv_pointwise(self, rng):
        _check(lambda x, w: conv2d(x, w), [rng.normal(size=(2, 3, 3, 3)), rng.normal(size=(2, 3, 1, 1))])

    def test_conv_pointwise_strided(self, rng):
        _check(lambda x, w: conv2d(x, w, stride=2), [rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 2, 1, 1))])

    def test_conv_depthwise_dilated(self, rng):
        _check(lambda x, w: conv2d(x, w, dilation=2, groups=2),
               [rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 1, 3, 3))])

    def test_conv_depthwise_strided(self, rng):
        _check(lambda x, w: conv2d(x, w, stride=2, groups=2),
               [rng.normal(size=(1, 2, 5, 4)), rng.normal(size=(2, 1, 3, 3))])

    def test_conv_dense(self, rng):
        _check(lambda x, w: conv2d(x, w, stride=2), [rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(2, 2, 3, 3))])

    def test_conv_grouped(self, rng):
        _check(lambda x, w: conv2d(x, w, groups=2), [rng.normal(size=(1, 4, 3, 3)), rng.normal(size=(4, 2, 3, 3))])

    def test_relu(self, rng):
        _check(relu, [_nudge_from_zero(rng.normal(size=(4, 8)))])

    def test_max_pool(self, rng):
        _check(lambda x: max_pool2d(x, 3, 1), [rng.permutation(32).reshape(1, 2, 4, 4) * 0.1])
        _check(lambda x: max_pool2d(x, 3, 2), [rng.permutation(50).reshape(2, 1, 5, 5) * 0.1])

    def test_avg_pool(self, rng):
        _check(lambda x: avg_pool2d(x, 3, 1), [rng.normal(size=(1, 2, 4, 4))])
        _check(lambda x: avg_pool2d(x, 3, 2), [rng.normal(size=(2, 1, 5, 5))])

    def test_softmax(self, rng):
        _check(softmax, [rng.normal(size=6)])
        _check(softmax, [rng.normal(size=(3, 4))])

    def test_cross_entropy(self, rng):
        _check(lambda z: cross_entropy(z, [0, 2, 1]), [rng.normal(size=(3, 4))])

    def test_linear(self, rng):
        _check(linear, [rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)])

    def test_global_avg_pool(self, rng):
        _check(global_avg_pool, [rng.normal(size=(2, 3, 3, 3))])

    def test_concat_and_shift(self, rng):
        _check(lambda a, b: concat([shift(a, 1, 1), b]), [rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(1, 1, 4, 4))])

    def test_channel_affine(self, rng):
        _check(channel_affine, [rng.normal(size=(2, 3, 2, 2)), rng.normal(size=3), rng.normal(size=3)])

    def test_sample_norm(self, rng):
        _check(sample_norm, [rng.normal(size=(2, 3, 2, 2)) * 3 + 1])

    def test_sample_norm_statistics(self, rng):
        x = rng.normal(size=(3, 2, 4, 4)) * 5 + 2
        y = sample_norm(Tensor(x)).data
        np.testing.assert_allclose(y.mean(axis=(1, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=(1, 2, 3)), 1.0, atol=1e-5)
        # samples are normalised independently
        np.testing.assert_array_equal(sample_norm(Tensor(x[:1])).data, y[:1])

    def test_weighted_sum(self, rng):
        _check(lambda a, b, w: weighted_sum([a, b], w),
               [rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)])

    def test_arithmetic(self, rng):
        _check(lambda a, b: (a * b + a - b).mean(axis=0), [rng.normal(size=(3, 4)), rng.normal(size=(1, 4))])

    def test_shared_subexpression(self, rng):
        # a feeds two branches; the tape must add both contributions
        _check(lambda a: relu(a) * a + a, [_nudge_from_zero(rng.normal(size=8))])


class TestOptimizers:
    def test_sgd_two_steps(self):
        p = Tensor([1.0], requires_grad=True)
        opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.0)
        p.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == pytest.approx(0.9, abs=1e-15)
        assert opt.velocity[0][0] == pytest.approx(1.0, abs=1e-15)
        p.grad = np.array([1.0])
        opt.step()
        assert opt.velocity[0][0] == pytest.approx(1.9, abs=1e-15)
        assert p.data[0] == pytest.approx(0.71, abs=1e-15)

    @pytest.mark.parametrize("g", [2.5, -3.0, 1.0])
    def test_adam_first_step_is_signed_lr(self, g):
        p = Tensor([0.4], requires_grad=True)
        opt = Adam([p], lr=0.1, betas=(0.5, 0.999), weight_decay=0.0)
        p.grad = np.array([g])
        opt.step()
        assert p.data[0] == pytest.approx(0.4 - 0.1 * math.copysign(1.0, g), abs=1e-9)
        assert opt.steps == 1

    def test_adam_weight_decay_is_added_to_gradient(self):
        p = Tensor([2.0], requires_grad=True)
        q = Tensor([2.0], requires_grad=True)
        a = Adam([p], lr=0.01, weight_decay=0.1)
        b = Adam([q], lr=0.01, weight_decay=0.0)
        for _ in range(3):
            p.grad = np.array([0.3])
            q.grad = np.array([0.3 + 0.1 * q.data[0]])
            a.step()
            b.step()
        assert p.data[0] == q.data[0]

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = SGD([p])
        p.grad = np.zeros(2)
        with pytest.raises(ValueError):
            opt.step()

    def test_deterministic_trajectories(self):
        def run():
            r = np.random.default_rng(3)
            p = Tensor(r.normal(size=5), requires_grad=True)
            q = Tensor(r.normal(size=5), requires_grad=True)
            sgd, adam = SGD([p], lr=0.05), Adam([q], lr=0.01)
            for _ in range(20):
                p.grad = r.normal(size=5)
                q.grad = r.normal(size=5)
                sgd.step()
                adam.step()
            return p.data.tobytes() + q.data.tobytes()

        assert run() == run()

    def test_state_round_trip(self):
        p = Tensor(np.ones(2), requires_grad=True)
        opt = Adam([p])
        p.grad = np.array([1.0, -2.0])
        opt.step()
        p2 = Tensor(p.data.copy(), requires_grad=True)
        opt2 = Adam([p2])
        opt2.load_state_dict(opt.state_dict())
        for o, t in ((opt, p), (opt2, p2)):
            t.grad = np.array([0.5, 0.5])
            o.step()
        np.testing.assert_array_equal(p.data, p2.data)


class TestSchedule:
    def test_cycle_endpoints(self):
        s = CosineRestartSchedule(lr_max=0.025, lr_min=0.01, epochs_in_cycle=15)
        assert lr_at(s, 0.0) == pytest.approx(0.025, abs=1e-15)
        assert lr_at(s, 1.0) == pytest.approx(0.01, abs=1e-15)
        assert lr_at(s, 0.5) == pytest.approx(0.0175, abs=1e-15)
        assert s.lr_at_epoch(15) == pytest.approx(0.01, abs=1e-15)

    def test_non_increasing(self):
        s = CosineRestartSchedule(0.025, 0.01, 10)
        values = [s.lr_at(f) for f in np.linspace(0, 1, 101)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("f", [-0.01, 1.01])
    def test_fraction_out_of_range(self, f):
        with pytest.raises(ValueError):
            CosineRestartSchedule().lr_at(f)
