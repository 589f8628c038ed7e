"""Finite-difference verification of every kernel, cumax, a block and the full LM loss."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .attention import AttentionConfig, init_layer_params, ordered_attention_forward
from .config import ModelConfig
from .model import init_weights, lm_forward, lm_loss
from .tensor import Tensor, grad_check

THRESHOLD = 1e-4
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float = THRESHOLD

    @property
    def passed(self) -> bool:
        return self.error <= self.threshold

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.error:.3e} (limit {self.threshold:g})"


def _weighted(out: Tensor, rng) -> Tensor:
    # random projection so that no coordinate of the gradient is trivially constant
    w = Tensor(rng.normal(size=out.shape))
    return tn.sum_all(tn.mul(out, w))


def kernel_cases():
    """``name -> (make_point(rng), make_f(rng))`` covering every kernel."""
    ids = np.array([[0, 3, 3], [2, 1, 4]])
    mask = np.array([[False, True, False, False], [True, False, False, True], [False, False, True, False]])

    def fixed(shape):
        return lambda rng: rng.normal(size=shape)

    def use(fn):
        def make(rng):
            seed = int(rng.integers(2**31))
            return lambda x: _weighted(fn(x, np.random.default_rng(seed)), np.random.default_rng(seed + 1))

        return make

    return {
        "matmul(left)": (fixed((3, 4)), use(lambda x, r: tn.matmul(x, Tensor(r.normal(size=(4, 2)))))),
        "matmul(right,batched)": (fixed((4, 2)), use(lambda x, r: tn.matmul(Tensor(r.normal(size=(2, 3, 4))), x))),
        "add(broadcast)": (fixed((4,)), use(lambda x, r: tn.add(Tensor(r.normal(size=(3, 4))), x))),
        "mul": (fixed((3, 4)), use(lambda x, r: tn.mul(x, tn.tanh(x)))),
        "scale": (fixed((5,)), use(lambda x, r: tn.scale(x, -2.5))),
        "sigmoid": (fixed((6,)), use(lambda x, r: tn.sigmoid(x))),
        "tanh": (fixed((6,)), use(lambda x, r: tn.tanh(x))),
        "relu": (fixed((6,)), use(lambda x, r: tn.relu(x))),
        "softmax_lastdim": (fixed((3, 5)), use(lambda x, r: tn.softmax(x))),
        "cumsum_lastdim": (fixed((2, 5)), use(lambda x, r: tn.cumsum(x))),
        "cumax": (fixed((2, 5)), use(lambda x, r: tn.cumax(x))),
        "sum_lastdim": (fixed((3, 4)), use(lambda x, r: tn.sum_lastdim(x))),
        "mean": (fixed((3, 4)), lambda rng: (lambda x: tn.mean(tn.mul(x, x)))),
        "concat_lastdim": (fixed((2, 3)), use(lambda x, r: tn.concat([x, Tensor(r.normal(size=(2, 2))), tn.tanh(x)]))),
        "slice": (fixed((4, 5)), use(lambda x, r: tn.slice_(x, (slice(1, 3), slice(None, None, 2))))),
        "transpose_last_two": (fixed((2, 3, 4)), use(lambda x, r: tn.transpose_last_two(x))),
        "mask_fill": (fixed((3, 4)), use(lambda x, r: tn.softmax(tn.mask_fill(x, mask)))),
        "layer_norm(x)": (fixed((3, 6)), use(lambda x, r: tn.layer_norm(x, Tensor(r.normal(size=6)), Tensor(r.normal(size=6))))),
        "layer_norm(gamma)": (fixed((6,)), use(lambda x, r: tn.layer_norm(Tensor(r.normal(size=(3, 6))), x, Tensor(r.normal(size=6))))),
        "layer_norm(beta)": (fixed((6,)), use(lambda x, r: tn.layer_norm(Tensor(r.normal(size=(3, 6))), Tensor(r.normal(size=6)), x))),
        "embedding_lookup": (fixed((5, 3)), use(lambda x, r: tn.embedding_lookup(x, ids))),
        "reverse_lastdim": (fixed((3, 4)), use(lambda x, r: tn.reverse_lastdim(x))),
        "reshape": (fixed((3, 4)), use(lambda x, r: tn.reshape(x, (2, 6)))),
        "permute": (fixed((2, 3, 4)), use(lambda x, r: tn.permute(x, (2, 0, 1)))),
        "repeat_lastdim": (fixed((2, 3)), use(lambda x, r: tn.repeat_lastdim(x, 3))),
        "sum_all": (fixed((3, 4)), lambda rng: (lambda x: tn.sum_all(tn.mul(x, x)))),
        "cross_entropy": (
            fixed((4, 5)),
            lambda rng: (lambda x: tn.cross_entropy(x, np.array([0, 4, 2, 2]), np.array([1.0, 1.0, 0.0, 1.0]))),
        ),
    }


def check_kernels(n_points: int = 10, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    results = []
    for name, (make_point, make_f) in kernel_cases().items():
        worst = max(grad_check(make_f(rng), make_point(rng), EPS) for _ in range(n_points))
        results.append(CheckResult(f"kernel {name}", worst))
    return results


def check_cumax(n_points: int = 10, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        w = Tensor(rng.normal(size=8))
        worst = max(worst, grad_check(lambda x: tn.sum_all(tn.mul(tn.cumax(x), w)), rng.normal(size=8), EPS))
    return CheckResult("cumax", worst)


def check_block(seed: int = 2, t: int = 4) -> CheckResult:
    """Gradient of a block's scalar output w.r.t. its input and every parameter."""
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(d_model=8, n_heads=2, gate_dim=2, chunk_factor=2)
    params = init_layer_params(cfg, 16, rng, "wide")
    h = rng.normal(size=(t, cfg.d_model))
    w = Tensor(rng.normal(size=(t, cfg.d_model)))

    def loss(x, p):
        return tn.sum_all(tn.mul(ordered_attention_forward(x, p, cfg)[0], w))

    worst = grad_check(lambda x: loss(x, params), h, EPS)
    for name, value in params.items():
        worst = max(worst, grad_check(lambda x, name=name: loss(Tensor(h), {**params, name: x}), value, EPS))
    return CheckResult("ordered-attention block", worst)


def tiny_lm_config() -> ModelConfig:
    return ModelConfig(vocab_size=11, d_model=8, n_layers=1, n_heads=2, gate_dim=2, chunk_factor=2, max_seq_len=8, precision="wide")


def check_lm(seed: int = 3) -> CheckResult:
    """End-to-end LM loss (V=11, d_model=8, L=1, T=4) w.r.t. every weight."""
    rng = np.random.default_rng(seed)
    weights = init_weights(tiny_lm_config(), rng)
    tokens = np.array([3, 7, 1, 10])
    targets = np.array([7, 1, 10, 2])
    named = weights.named_parameters()
    worst = 0.0
    for name, value in named.items():
        def f(x, name=name):
            saved = named[name]
            _swap(weights, name, x)
            try:
                return lm_loss(lm_forward(tokens, weights), targets)
            finally:
                _swap(weights, name, saved)

        worst = max(worst, grad_check(f, value, EPS))
    return CheckResult("language-model loss", worst)


def _swap(weights, name: str, t: Tensor):
    if name == "token_embedding":
        weights.token_embedding = t
    elif name == "positional_table":
        weights.positional_table = t
    else:
        _, i, key = name.split(".", 2)
        weights.layers[int(i)][key] = t


def run_suite() -> list:
    start = time.perf_counter()
    results = check_kernels() + [check_cumax(), check_block(), check_lm()]
    results.append(CheckResult("suite runtime [s]", time.perf_counter() - start, threshold=120.0))
    return results
