"""Finite-difference gradient cases shared by the unit and acceptance suites.

Each case builds a scalar from its parameters by contracting the op output
with a fixed random weight, so no gradient component cancels by symmetry.
Every instance uses T <= 8.
"""

from __future__ import annotations

import numpy as np

from tokendance import autodiff as ad
from tokendance import fsq
from tokendance.autodiff import Parameter, Tensor
from tokendance.generator import GeneratorConfig, LGLGenerator
from tokendance.motion import axis_angle_to_matrix, dance_loss, forward_kinematics, matrix_to_rot6d, rot6d_to_matrix
from tokendance.nn import RMSNorm
from tokendance.ssm import BiMambaBlock, MambaBlock, MambaConfig, discretize, selective_scan

from helpers import random_poses

TOL = 1e-3


def _p(rng, *shape, lo=-1.0, hi=1.0):
    return Parameter(rng.uniform(lo, hi, shape))


def _contract(out: Tensor, seed: int = 99) -> Tensor:
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.tsum(out * w)


def _unary(op, lo=-1.5, hi=1.5):
    def build(rng):
        a = _p(rng, 3, 4, lo=lo, hi=hi)
        return (lambda: _contract(op(a))), [a]
    return build


def _binary(op, lo_b=-1.0, hi_b=1.0):
    def build(rng):
        a, b = _p(rng, 3, 4), _p(rng, 4, lo=lo_b, hi=hi_b)  # broadcast on purpose
        return (lambda: _contract(op(a, b))), [a, b]
    return build


def _case_conv1d(rng):
    x, w, b = _p(rng, 2, 8, 3), _p(rng, 4, 3, 5), _p(rng, 5)
    return (lambda: _contract(ad.conv1d(x, w, b, stride=2, padding=1))), [x, w, b]


def _case_conv_t(rng):
    x, w, b = _p(rng, 2, 4, 3), _p(rng, 4, 3, 2), _p(rng, 2)
    return (lambda: _contract(ad.conv_transpose1d(x, w, b, stride=2, padding=1))), [x, w, b]


def _case_depthwise(rng):
    x, w, b = _p(rng, 2, 7, 3), _p(rng, 4, 3), _p(rng, 3)
    return (lambda: _contract(ad.depthwise_conv1d_causal(x, w, b))), [x, w, b]


def _case_scan(method):
    def build(rng):
        a, b = _p(rng, 2, 8, 3, lo=0.2, hi=0.95), _p(rng, 2, 8, 3)
        return (lambda: _contract(ad.linear_scan(a, b, method=method))), [a, b]
    return build


def _case_matmul(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 4, 5)
    return (lambda: _contract(ad.matmul(a, b))), [a, b]


def _case_batched_matmul(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 2, 4, 2)
    return (lambda: _contract(ad.matmul(a, b))), [a, b]


def _case_linear(rng):
    x, w, b = _p(rng, 2, 3, 4), _p(rng, 4, 5), _p(rng, 5)
    return (lambda: _contract(ad.linear(x, w, b))), [x, w, b]


def _case_cross_entropy(rng):
    logits = _p(rng, 2, 5, 7, lo=-2, hi=2)
    targets = rng.integers(0, 7, (2, 5))
    return (lambda: ad.cross_entropy(logits, targets)), [logits]


def _case_embedding(rng):
    table = _p(rng, 6, 3)
    ids = np.array([[0, 2, 2, 5], [1, 1, 4, 0]])
    return (lambda: _contract(ad.embedding(table, ids))), [table]


def _case_losses(rng):
    a, b = _p(rng, 3, 4), _p(rng, 3, 4, lo=2.0, hi=3.0)
    return (lambda: ad.mse_loss(a, b) + ad.l1_loss(a, b)), [a]


def _case_shapes(rng):
    a = _p(rng, 2, 3, 4)

    def fn():
        h = ad.swapaxes(ad.reshape(a, (2, 4, 3)), 1, 2)
        h = ad.expand_dims(h, 0)[0]
        h = ad.reverse(ad.permute_last(h, [2, 0, 3, 1]), 1)
        h = ad.concat([h, h[:, :2] * 2.0], axis=1)
        h = ad.stack([h, ad.cumsum(h, axis=1)], axis=0)
        return _contract(ad.mean(h, axis=-1, keepdims=True)) + ad.tsum(h[0, :, [0, 2, 2]])
    return fn, [a]


def _case_softmax(rng):
    a = _p(rng, 2, 3, 5, lo=-2, hi=2)
    return (lambda: _contract(ad.softmax(a)) + _contract(ad.log_softmax(a), seed=7)), [a]


def _case_expm1_over_x(rng):
    a = Parameter(np.array([-8.0, -1.0, -1e-2, 2e-3, 0.7, 3.0]))
    return (lambda: _contract(ad.expm1_over_x(a))), [a]


def _case_rmsnorm(rng):
    norm = RMSNorm(4)
    norm.weight.data = rng.uniform(0.5, 1.5, 4).astype(np.float32)
    x = _p(rng, 2, 3, 4)
    return (lambda: _contract(norm(x))), [x, norm.weight]


def _case_rot6d(rng):
    r = Parameter(matrix_to_rot6d(axis_angle_to_matrix(np.array([0.0, 0.6, 0.8]), np.array([0.7, -1.1, 2.0])))
                  + rng.uniform(-0.1, 0.1, (3, 6)))
    return (lambda: _contract(rot6d_to_matrix(r))), [r]


def _case_fk(rng):
    pose = Parameter(random_poses(rng, 2))
    return (lambda: _contract(forward_kinematics(pose))), [pose]


def _case_dance_loss(rng):
    target = random_poses(rng, 6)[None]
    pred = Parameter(target + rng.uniform(-0.05, 0.05, target.shape))
    return (lambda: dance_loss(pred, target, fps=30.0)[0]), [pred]


def fsq_straight_through_error(seed: int = 0, eps: float = 1e-4) -> float:
    """Straight-through gradient vs central differences of its surrogate.

    Rounding has zero derivative almost everywhere, so the finite-difference
    side uses bound(z) plus the rounding residual frozen at the base point.
    Both sides agree with the forward value there, and the straight-through
    estimator is exactly the derivative of that surrogate.
    """
    rng = np.random.default_rng(seed)
    z = Parameter(rng.uniform(-1.5, 1.5, (2, 3, 4)))
    with ad.precision(np.float64):
        z.data = z.data.astype(np.float64)
        with ad.no_grad():
            f0 = fsq.bound(z).data
        residual = np.sign(f0) * np.floor(np.abs(f0) + 0.5) - f0
        tape = ad.Tape()
        with tape:
            zhat, _ = fsq.quantize_st(z)
            loss = _contract(fsq.to_grid(zhat))
        grad = ad._collect(tape, loss, [z])[0]
        surrogate = lambda: _contract(fsq.to_grid(fsq.bound(z) + residual))
        if not np.allclose(surrogate().data, loss.data):
            return float("inf")
        num = ad.numerical_gradient(surrogate, z, eps)
    return max(abs(grad[i] - g) / max(abs(grad[i]), abs(g), 1e-6) for i, g in num.items())


def _case_discretize(rng):
    A = Parameter(-rng.uniform(0.5, 2.0, (3, 2)))
    delta = _p(rng, 2, 4, 3, lo=0.05, hi=0.5)
    B = _p(rng, 2, 4, 2)

    def fn():
        a_bar, b_bar = discretize(A, delta, B)
        return _contract(a_bar) + _contract(b_bar, seed=3)
    return fn, [A, delta, B]


def _case_selective_scan(rng):
    x = _p(rng, 2, 8, 3)
    a_bar = _p(rng, 2, 8, 3, 2, lo=0.3, hi=0.95)
    b_bar = _p(rng, 2, 8, 3, 2)
    c = _p(rng, 2, 8, 2)
    return (lambda: _contract(selective_scan(x, a_bar, b_bar, c))), [x, a_bar, b_bar, c]


def _block_case(kind):
    def build(rng):
        cfg = MambaConfig(d_model=4, d_state=3, d_conv=3, expand=2)
        blk = (MambaBlock if kind == "mamba" else BiMambaBlock)(np.random.default_rng(5), cfg)
        blk.finalize_names()
        x = _p(rng, 2, 6, 4)
        return (lambda: _contract(blk(x))), [x] + blk.parameters()
    return build


def _case_lgl(rng):
    cfg = GeneratorConfig(d_model=4, d_state=2, d_conv=2, expand=1, music_depth=1, global_depth=1, dance_depth=1,
                          vocab=6, n_genres=3)
    gen = LGLGenerator(np.random.default_rng(11), cfg)
    music = [rng.integers(0, 6, (2, 5)), rng.integers(0, 6, (2, 5))]
    up, lo = rng.integers(0, 6, (2, 5)), rng.integers(0, 6, (2, 5))
    return (lambda: gen.loss(music, np.array([0, 2]), up, lo)[0]), gen.parameters()


CASES = {
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "div": _binary(ad.div, 0.5, 2.0),
    "neg": _unary(ad.neg),
    "power": _unary(lambda a: ad.power(a, 3.0)),
    "power_frac": _unary(lambda a: ad.power(a, 0.5), 0.5, 2.0),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, 0.2, 3.0),
    "sigmoid": _unary(ad.sigmoid),
    "tanh": _unary(ad.tanh),
    "silu": _unary(ad.silu),
    "softplus": _unary(ad.softplus),
    "absolute": _unary(ad.absolute, 0.2, 1.5),
    "expm1_over_x": _case_expm1_over_x,
    "shape_ops": _case_shapes,
    "matmul": _case_matmul,
    "batched_matmul": _case_batched_matmul,
    "linear": _case_linear,
    "softmax": _case_softmax,
    "cross_entropy": _case_cross_entropy,
    "embedding": _case_embedding,
    "mse_l1": _case_losses,
    "conv1d": _case_conv1d,
    "conv_transpose1d": _case_conv_t,
    "depthwise_conv1d_causal": _case_depthwise,
    "linear_scan_parallel": _case_scan("parallel"),
    "linear_scan_sequential": _case_scan("sequential"),
    "rmsnorm": _case_rmsnorm,
    "rot6d_to_matrix": _case_rot6d,
    "forward_kinematics": _case_fk,
    "dance_loss": _case_dance_loss,
    "discretize": _case_discretize,
    "selective_scan": _case_selective_scan,
    "mamba_block": _block_case("mamba"),
    "bimamba_block": _block_case("bimamba"),
    "lgl_forward": _case_lgl,
}

NAMES = list(CASES) + ["fsq_straight_through"]

# sampled entries per parameter for the larger composites
MAX_ENTRIES = {"mamba_block": 6, "bimamba_block": 4, "lgl_forward": 2, "dance_loss": 40, "forward_kinematics": 40}


def run_case(name: str, seed: int = 0) -> float:
    if name == "fsq_straight_through":
        return fsq_straight_through_error(seed)
    fn, params = CASES[name](np.random.default_rng(seed))
    return ad.gradcheck(fn, params, eps=1e-3, max_entries=MAX_ENTRIES.get(name), seed=seed)
