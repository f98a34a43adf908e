"""Layer forward/backward oracles: nested-loop references and finite differences."""

import numpy as np
import pytest

from gxnor import (
    BatchNorm,
    Conv2d,
    Dense,
    DiscreteSpace,
    Flatten,
    MaxPool2d,
    PulseShape,
    QuantAct,
    SurrogateSpec,
    quantize_activation,
    svm_hinge_loss,
)

TERNARY = DiscreteSpace(n=1, h=1.0)
RECT = SurrogateSpec(shape=PulseShape.RECTANGULAR, a=0.5, r=0.5)


def central_diff(f, x, step=1e-6):
    """Elementwise central finite difference of scalar f at array x."""
    out = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    dflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        dflat[i] = (hi - lo) / (2 * step)
    return out


class TestDense:
    def make(self):
        return Dense(4, 3, TERNARY, seed=0, layer_index=0)

    def test_forward_oracle(self):
        layer = self.make()
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 4))
        out = layer.forward(x, training=False)
        expect = np.zeros((5, 3))
        for b in range(5):
            for o in range(3):
                for i in range(4):
                    expect[b, o] += x[b, i] * layer.weight.value[o, i]
        assert np.allclose(out, expect, atol=1e-12)

    def test_backward_gradients(self):
        layer = self.make()
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 4))
        g = rng.normal(size=(5, 3))
        layer.forward(x, training=True)
        dx = layer.backward(g)

        def loss():
            return float(np.sum(g * (x @ layer.weight.value.T)))

        assert np.allclose(dx, central_diff(loss, x), atol=1e-6)
        assert np.allclose(layer.weight.grad, central_diff(loss, layer.weight.value),
                           atol=1e-6)

    def test_weights_start_on_grid(self):
        layer = self.make()
        assert np.isin(layer.weight.value, TERNARY.states()).all()

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            self.make().forward(np.zeros((2, 5)), training=False)


class TestConv2d:
    def make(self):
        return Conv2d(2, 3, kernel_size=2, space=TERNARY, seed=0, layer_index=0)

    def test_forward_oracle(self):
        layer = self.make()
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 2, 4, 5))
        out = layer.forward(x, training=False)
        k = layer.weight.value
        expect = np.zeros((2, 3, 3, 4))
        for b in range(2):
            for o in range(3):
                for i in range(3):
                    for j in range(4):
                        for c in range(2):
                            for u in range(2):
                                for v in range(2):
                                    expect[b, o, i, j] += (
                                        x[b, c, i + u, j + v] * k[o, c, u, v])
        assert np.allclose(out, expect, atol=1e-12)

    def test_backward_gradients(self):
        layer = self.make()
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 2, 4, 4))
        layer.forward(x, training=True)
        g = rng.normal(size=(2, 3, 3, 3))
        dx = layer.backward(g)

        def loss():
            return float(np.sum(g * layer.forward(x, training=False)))

        assert np.allclose(dx, central_diff(loss, x), atol=1e-6)
        assert np.allclose(layer.weight.grad, central_diff(loss, layer.weight.value),
                           atol=1e-6)

    def test_rejects_too_small_input(self):
        with pytest.raises(ValueError):
            self.make().forward(np.zeros((1, 2, 1, 1)), training=False)

    def test_rejects_wrong_channels(self):
        with pytest.raises(ValueError):
            self.make().forward(np.zeros((1, 3, 4, 4)), training=False)


class TestMaxPool2d:
    def test_forward_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 4, 6))
        out = MaxPool2d(2).forward(x, training=False)
        expect = np.zeros((2, 3, 2, 3))
        for b in range(2):
            for c in range(3):
                for i in range(2):
                    for j in range(3):
                        expect[b, c, i, j] = x[b, c, 2 * i:2 * i + 2,
                                               2 * j:2 * j + 2].max()
        assert np.array_equal(out, expect)

    def test_backward_routes_to_max(self):
        layer = MaxPool2d(2)
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        layer.forward(x, training=True)
        dx = layer.backward(np.array([[[[5.0]]]]))
        assert np.array_equal(dx, [[[[0.0, 0.0], [0.0, 5.0]]]])

    def test_backward_tie_goes_to_first_in_scan_order(self):
        layer = MaxPool2d(2)
        x = np.full((1, 1, 2, 2), 7.0)
        layer.forward(x, training=True)
        dx = layer.backward(np.ones((1, 1, 1, 1)))
        assert dx[0, 0, 0, 0] == 1.0 and dx.sum() == 1.0

    def test_rejects_indivisible_input(self):
        with pytest.raises(ValueError):
            MaxPool2d(2).forward(np.zeros((1, 1, 3, 4)), training=False)


class TestFlatten:
    def test_round_trip(self):
        layer = Flatten()
        x = np.arange(24.0).reshape(2, 3, 2, 2)
        out = layer.forward(x, training=True)
        assert out.shape == (2, 12)
        assert np.array_equal(layer.backward(out), x)


class TestBatchNorm:
    def test_standardizes_batch(self):
        rng = np.random.default_rng(5)
        x = rng.normal(3.0, 2.0, size=(200, 4))
        out = BatchNorm(4).forward(x, training=True)
        assert np.allclose(out.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(out.var(axis=0), 1.0, atol=1e-4)

    def test_scale_and_shift_applied(self):
        layer = BatchNorm(2)
        layer.gamma.value = np.array([2.0, 3.0])
        layer.beta.value = np.array([-1.0, 4.0])
        x = np.random.default_rng(6).normal(size=(50, 2))
        out = layer.forward(x, training=True)
        assert np.allclose(out.mean(axis=0), [-1.0, 4.0], atol=1e-12)

    def test_running_stats_feed_inference(self):
        layer = BatchNorm(1, momentum=0.1)
        x = np.array([[2.0], [4.0]])  # mean 3, biased var 1
        layer.forward(x, training=True)
        assert np.allclose(layer.running_mean, [0.3])
        assert np.allclose(layer.running_var, [0.9 + 0.1 * 1.0])
        y = layer.forward(np.array([[0.3]]), training=False)
        assert np.allclose(y, [[0.0]])

    def test_backward_finite_difference_2d(self):
        layer = BatchNorm(3)
        layer.gamma.value = np.array([1.5, 0.7, -0.3])
        layer.beta.value = np.array([0.1, -0.2, 0.0])
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 3))
        g = rng.normal(size=(6, 3))
        layer.forward(x, training=True)
        dx = layer.backward(g)

        def loss():
            return float(np.sum(g * layer.forward(x, training=True)))

        assert np.allclose(dx, central_diff(loss, x), atol=1e-5)
        assert np.allclose(layer.gamma.grad, central_diff(loss, layer.gamma.value),
                           atol=1e-5)
        assert np.allclose(layer.beta.grad, central_diff(loss, layer.beta.value),
                           atol=1e-5)

    def test_backward_finite_difference_4d(self):
        layer = BatchNorm(2)
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 2, 2, 2))
        g = rng.normal(size=(3, 2, 2, 2))
        layer.forward(x, training=True)
        dx = layer.backward(g)

        def loss():
            return float(np.sum(g * layer.forward(x, training=True)))

        assert np.allclose(dx, central_diff(loss, x), atol=1e-5)

    def test_rejects_tiny_batch_and_bad_rank(self):
        with pytest.raises(ValueError):
            BatchNorm(3).forward(np.zeros((1, 3)), training=True)
        with pytest.raises(ValueError):
            BatchNorm(3).forward(np.zeros((2, 3, 4)), training=True)


def relaxed_ramp(x, space, spec):
    """Odd piecewise-linear ramp whose exact derivative is the rect surrogate.

    Integrates each rect pulse (height dz/2a over [c-a, c+a] in |x|) from zero,
    so finite differences on this forward validate the layer's backward pass.
    """
    assert spec.shape is PulseShape.RECTANGULAR
    if space.n == 0:
        centers = np.array([0.0])
    else:
        half = 2 ** (space.n - 1)
        band = (space.h - spec.r) / half
        centers = spec.r + band * np.arange(half)
    height = space.dz / (2 * spec.a)
    ax = np.abs(x)[..., None]
    lo = np.maximum(centers - spec.a, 0.0)
    hi = centers + spec.a
    overlap = np.maximum(0.0, np.minimum(ax, hi) - lo)
    return np.sign(x) * overlap.sum(axis=-1) * height


class RelaxedQuantAct(QuantAct):
    """Quantizer stand-in with a kink-free forward matched to the surrogate."""

    def _activation(self, x):
        return relaxed_ramp(x, self.space, self.spec)


class TestQuantAct:
    def test_forward_quantizes_to_grid(self):
        layer = QuantAct(TERNARY, RECT)
        x = np.array([[-2.0, -0.4, 0.0, 0.6, 3.0]])
        out = layer.forward(x, training=True)
        assert np.array_equal(out, [[-1.0, 0.0, 0.0, 1.0, 1.0]])
        assert layer.last_sparsity == pytest.approx(0.4)

    def test_forward_matches_standalone_quantizer(self):
        space = DiscreteSpace(n=2, h=1.0)
        spec = SurrogateSpec(shape=PulseShape.RECTANGULAR, a=0.1, r=0.2)
        layer = QuantAct(space, spec)
        x = np.random.default_rng(9).normal(size=(4, 7))
        assert np.array_equal(layer.forward(x, training=False),
                              quantize_activation(x, space, spec.r))

    def test_multilevel_pulse_span_validated(self):
        with pytest.raises(ValueError):
            QuantAct(DiscreteSpace(n=2, h=1.0),
                     SurrogateSpec(shape=PulseShape.RECTANGULAR, a=0.6, r=0.5))
        # Ternary thresholds may exceed the grid bound (sparsity dial).
        QuantAct(TERNARY, SurrogateSpec(shape=PulseShape.RECTANGULAR, a=0.5, r=3.5))

    @pytest.mark.parametrize("space,spec", [
        (DiscreteSpace(n=0, h=1.0), SurrogateSpec(shape=PulseShape.RECTANGULAR, a=0.5, r=0.0)),
        (TERNARY, RECT),
        (DiscreteSpace(n=2, h=1.0), SurrogateSpec(shape=PulseShape.RECTANGULAR, a=0.2, r=0.1)),
    ])
    def test_backward_is_derivative_of_relaxed_forward(self, space, spec):
        layer = RelaxedQuantAct(space, spec)
        rng = np.random.default_rng(10)
        x = rng.normal(0.0, 1.0, size=(3, 40))
        # Stay clear of the ramp kinks so central differences are exact.
        if space.n == 0:
            kinks = np.array([spec.a])
        else:
            half = 2 ** (space.n - 1)
            band = (space.h - spec.r) / half
            centers = spec.r + band * np.arange(half)
            kinks = np.concatenate([centers - spec.a, centers + spec.a])
        near = np.min(np.abs(np.abs(x)[..., None] - kinks), axis=-1) < 1e-3
        x[near] += 5e-3
        g = rng.normal(size=x.shape)
        layer.forward(x, training=True)
        dx = layer.backward(g)

        def loss():
            return float(np.sum(g * layer.forward(x, training=False)))

        assert np.allclose(dx, central_diff(loss, x, step=1e-5), atol=1e-7)

    def test_backward_zero_outside_pulses(self):
        layer = QuantAct(TERNARY, RECT)
        x = np.array([[5.0, -5.0, 0.2]])
        layer.forward(x, training=True)
        dx = layer.backward(np.ones_like(x))
        assert dx[0, 0] == 0.0 and dx[0, 1] == 0.0 and dx[0, 2] != 0.0


class TestSvmHingeLoss:
    def test_satisfied_margins_give_zero(self):
        scores = np.array([[2.0, -3.0], [-1.5, 4.0]])
        out = svm_hinge_loss(scores, np.array([0, 1]))
        assert out.loss == 0.0
        assert not out.dscores.any()

    def test_zero_scores_cost_one_per_class(self):
        out = svm_hinge_loss(np.zeros((3, 5)), np.array([0, 2, 4]))
        assert out.loss == pytest.approx(5.0)

    def test_hand_computed_example(self):
        out = svm_hinge_loss(np.array([[0.5, 0.2]]), np.array([0]))
        assert out.loss == pytest.approx(0.5**2 + 1.2**2)
        assert np.allclose(out.dscores, [[-1.0, 2.4]])

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(11)
        scores = rng.normal(size=(4, 6))
        labels = rng.integers(0, 6, 4)
        out = svm_hinge_loss(scores, labels)

        def loss():
            return svm_hinge_loss(scores, labels).loss

        assert np.allclose(out.dscores, central_diff(loss, scores, step=1e-6),
                           atol=1e-6)

    def test_batch_averaging(self):
        one = svm_hinge_loss(np.zeros((1, 3)), np.array([0])).loss
        many = svm_hinge_loss(np.zeros((10, 3)), np.zeros(10, dtype=int)).loss
        assert one == pytest.approx(many)

    def test_validation(self):
        with pytest.raises(ValueError):
            svm_hinge_loss(np.zeros(4), np.array([0]))
        with pytest.raises(ValueError):
            svm_hinge_loss(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(ValueError):
            svm_hinge_loss(np.zeros((2, 3)), np.array([0]))
