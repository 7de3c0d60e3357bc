"""Shared gradient-check case builders for unit and acceptance tests.

Each case is (name, make) where make(rng) returns (f, x): a scalar-valued
function of one DiffTensor plus the input to probe. finite_difference_check
runs central differences against the tape gradients.
"""

import numpy as np

from purlab import tensor as T
from purlab.tensor import DiffTensor


def _t(rng, *shape):
    return DiffTensor(rng.standard_normal(shape))


def _const(rng, *shape):
    return rng.standard_normal(shape)


def primitive_cases():
    cases = []

    def case(name):
        def wrap(fn):
            cases.append((name, fn))
            return fn
        return wrap

    @case("add")
    def _(rng):
        b = _const(rng, 4, 5)
        return lambda x: (x + DiffTensor(b)).sum(), _t(rng, 4, 5)

    @case("sub_scalar")
    def _(rng):
        return lambda x: (1.5 - x).mean(), _t(rng, 3, 7)

    @case("mul")
    def _(rng):
        b = _const(rng, 6)
        return lambda x: (x * DiffTensor(b)).sum(), _t(rng, 6)

    @case("mul_scalar")
    def _(rng):
        return lambda x: (x * -2.5).sum(), _t(rng, 2, 3)

    @case("matmul_left")
    def _(rng):
        b = DiffTensor(_const(rng, 5, 4))
        return lambda x: T.matmul(x, b).sum(), _t(rng, 3, 5)

    @case("matmul_right")
    def _(rng):
        a = DiffTensor(_const(rng, 4, 6))
        return lambda x: T.matmul(a, x).mean(), _t(rng, 6, 2)

    @case("conv2d_s1_input")
    def _(rng):
        w = DiffTensor(_const(rng, 4, 3, 3, 3))
        return lambda x: T.conv2d(x, w, stride=1, padding=1).sum(), _t(rng, 2, 3, 6, 6)

    @case("conv2d_s1_weight")
    def _(rng):
        x = DiffTensor(_const(rng, 2, 3, 6, 6))
        return lambda w: T.conv2d(x, w, stride=1, padding=1).sum(), _t(rng, 4, 3, 3, 3)

    @case("conv2d_s2_input")
    def _(rng):
        w = DiffTensor(_const(rng, 5, 2, 3, 3))
        return lambda x: T.conv2d(x, w, stride=2, padding=1).sum(), _t(rng, 2, 2, 8, 8)

    @case("conv2d_s2_weight")
    def _(rng):
        x = DiffTensor(_const(rng, 2, 2, 8, 8))
        return lambda w: T.conv2d(x, w, stride=2, padding=1).mean(), _t(rng, 5, 2, 3, 3)

    @case("conv2d_1x1")
    def _(rng):
        w = DiffTensor(_const(rng, 3, 4, 1, 1))
        return lambda x: T.conv2d(x, w).sum(), _t(rng, 2, 4, 5, 5)

    @case("conv2d_bias")
    def _(rng):
        x = DiffTensor(_const(rng, 2, 3, 5, 5))
        w = DiffTensor(_const(rng, 4, 3, 3, 3))
        return lambda b: T.conv2d(x, w, bias=b, padding=1).sum(), _t(rng, 4)

    @case("upsample2x")
    def _(rng):
        return lambda x: T.square(T.upsample2x(x)).sum(), _t(rng, 2, 3, 4, 4)

    @case("relu")
    def _(rng):
        return lambda x: T.relu(x).sum(), _t(rng, 4, 4)

    @case("silu")
    def _(rng):
        return lambda x: T.silu(x).sum(), _t(rng, 4, 4)

    @case("tanh")
    def _(rng):
        return lambda x: T.tanh(x).sum(), _t(rng, 3, 3)

    @case("sigmoid")
    def _(rng):
        return lambda x: T.sigmoid(x).mean(), _t(rng, 5,)

    @case("square")
    def _(rng):
        return lambda x: T.square(x).sum(), _t(rng, 3, 4)

    @case("exp")
    def _(rng):
        return lambda x: T.exp(x).sum(), _t(rng, 3, 4)

    @case("log")
    def _(rng):
        x = DiffTensor(rng.uniform(0.5, 3.0, (3, 4)))
        return lambda v: T.log(v).sum(), x

    @case("add_rows")
    def _(rng):
        x = DiffTensor(_const(rng, 4, 3))
        return lambda v: T.square(T.add_rows(x, v)).sum(), _t(rng, 4)

    @case("sqrt")
    def _(rng):
        x = DiffTensor(rng.uniform(0.5, 2.0, (3, 4)))
        return lambda v: T.sqrt(v).sum(), x

    @case("clamp")
    def _(rng):
        # keep probes away from the clamp kinks, where central differences
        # straddle the nondifferentiable point
        vals = rng.uniform(-2.0, 2.0, (4, 4))
        vals[np.abs(np.abs(vals) - 1.0) < 0.05] = 0.5
        return lambda x: T.clamp(x, -1.0, 1.0).sum(), DiffTensor(vals)

    @case("mean_axis")
    def _(rng):
        return lambda x: T.square(x.mean(axis=(1, 2))).sum(), _t(rng, 3, 4, 5)

    @case("sum_axis")
    def _(rng):
        return lambda x: T.square(x.sum(axis=1)).mean(), _t(rng, 3, 4)

    @case("mse")
    def _(rng):
        b = DiffTensor(_const(rng, 3, 4))
        return lambda x: T.mse(x, b), _t(rng, 3, 4)

    @case("l2norm_channels")
    def _(rng):
        # project onto a random direction; the plain squared norm of the
        # normalized field is near-constant and starves central differences
        c = DiffTensor(_const(rng, 2, 4, 3, 3))
        return lambda x: (T.l2norm_channels(x) * c).sum(), _t(rng, 2, 4, 3, 3)

    @case("concat_channels")
    def _(rng):
        b = DiffTensor(_const(rng, 2, 3, 4, 4))
        return lambda x: T.square(T.concat_channels([x, b])).sum(), _t(rng, 2, 2, 4, 4)

    @case("add_bias_2d")
    def _(rng):
        x = DiffTensor(_const(rng, 5, 3))
        return lambda v: T.square(T.add_bias(x, v)).sum(), _t(rng, 3)

    @case("add_bias_chan")
    def _(rng):
        x = DiffTensor(_const(rng, 2, 3, 4, 4))
        return lambda v: T.square(T.add_bias(x, v)).sum(), _t(rng, 2, 3)

    @case("scale_rows")
    def _(rng):
        s = DiffTensor(_const(rng, 3))
        return lambda x: T.square(T.scale_rows(x, s)).sum(), _t(rng, 3, 2, 2)

    @case("scale_rows_scale")
    def _(rng):
        x = DiffTensor(_const(rng, 3, 2, 2))
        return lambda s: T.square(T.scale_rows(x, s)).sum(), _t(rng, 3)

    @case("reshape")
    def _(rng):
        return lambda x: T.square(x.reshape(6, 2)).sum(), _t(rng, 3, 4)

    @case("composed_conv_relu_mean")
    def _(rng):
        w = DiffTensor(_const(rng, 4, 3, 3, 3) * 0.5)
        return lambda x: T.relu(T.conv2d(x, w, padding=1)).mean(), _t(rng, 1, 3, 8, 8)

    return cases
