"""Central finite-difference checks of every differentiable op and of the full model."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .model import ModelConfig, build_model
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

STEP = 1e-5
REL_TOL = 1e-4
# gradients below this magnitude are compared in absolute terms
GRAD_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float, floor: float = GRAD_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, index, h: float = STEP) -> float:
    """Central difference of ``f`` w.r.t. ``arr[index]``; ``arr`` is perturbed in place and restored."""
    old = arr[index]
    arr[index] = old + h
    up = f()
    arr[index] = old - h
    down = f()
    arr[index] = old
    return (up - down) / (2.0 * h)


@dataclass
class CheckResult:
    name: str
    checked: int
    max_error: float
    tol: float = REL_TOL

    @property
    def ok(self) -> bool:
        return self.max_error < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.checked} entries, max rel err {self.max_error:.2e} (tol {self.tol:.0e})"


def check_function(
    name: str,
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    rng: np.random.Generator,
    max_entries: int | None = None,
    tol: float = REL_TOL,
) -> CheckResult:
    """Compare analytic gradients of ``sum(fn(*inputs) * R)`` against finite differences.

    ``R`` is a fixed random projection so every output entry contributes.
    """
    with no_grad():
        probe = fn(*inputs)
    weights = rng.standard_normal(probe.shape)
    for t in inputs:
        t.grad = None
    backward((fn(*inputs) * Tensor(weights)).sum())

    def scalar() -> float:
        with no_grad():
            return float((fn(*inputs).data * weights).sum())

    worst, count = 0.0, 0
    for t in inputs:
        if not t.requires_grad:
            continue
        flat = range(t.size)
        if max_entries is not None and t.size > max_entries:
            flat = rng.choice(t.size, max_entries, replace=False)
        for k in flat:
            idx = np.unravel_index(int(k), t.shape)
            num = numerical_gradient(scalar, t.data, idx)
            worst = max(worst, relative_error(float(t.grad[idx]), num))
            count += 1
    return CheckResult(name, count, worst, tol)


def _op_cases(rng: np.random.Generator):
    def rand(*shape, grad=True):
        return Tensor(rng.standard_normal(shape), requires_grad=grad)

    b = int(rng.integers(1, 3))
    c, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h, w = 2 * int(rng.integers(2, 4)), 2 * int(rng.integers(2, 4))
    kk = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    yield "conv2d", lambda x, wt, bias: F.conv2d(x, wt, bias, stride, pad), [rand(b, c, h, w), rand(k, c, kk, kk), rand(k)]
    yield "conv_transpose2d", F.conv_transpose2d, [rand(b, c, h // 2, w // 2), rand(c, k, 2, 2), rand(k)]
    yield "max_pool2d", F.max_pool2d, [rand(b, c, h, w)]
    nb = b + 1

    def bn(training):
        rm, rv = rng.standard_normal(k), rng.random(k) + 0.5
        return lambda x, s, t: F.batch_norm(x, s, t, rm.copy(), rv.copy(), training)

    yield "batch_norm[train,4d]", bn(True), [rand(nb, k, h, w), rand(k), rand(k)]
    yield "batch_norm[train,2d]", bn(True), [rand(nb + 2, k), rand(k), rand(k)]
    yield "batch_norm[eval]", bn(False), [rand(nb, k, h, w), rand(k), rand(k)]
    yield "elu", F.elu, [rand(b, c, h, w)]
    yield "sigmoid", F.sigmoid, [Tensor(3 * rng.standard_normal((b, c, h)), requires_grad=True)]
    yield "linear", F.linear, [rand(b + 1, c + 2), rand(k + 1, c + 2), rand(k + 1)]
    yield "film", F.film, [rand(b, k, h, w), rand(b, k), rand(b, k)]

    from .training import dice_loss

    g = (rng.random((b, h, w)) < 0.3).astype(float)
    p = Tensor(rng.uniform(0.05, 0.95, (b, h, w)), requires_grad=True)
    yield "dice_loss", lambda q: dice_loss(q, g), [p]


def check_ops(trials: int = 20, seed: int = 0) -> list[CheckResult]:
    """Run every op through ``trials`` randomized finite-difference checks."""
    rng = np.random.default_rng(seed)
    merged: dict[str, CheckResult] = {}
    for _ in range(trials):
        for name, fn, inputs in _op_cases(rng):
            r = check_function(name, fn, inputs, rng)
            prev = merged.get(name)
            merged[name] = r if prev is None else CheckResult(
                name, prev.checked + r.checked, max(prev.max_error, r.max_error)
            )
    return list(merged.values())


def check_model(
    seed: int = 0,
    base_filters: int = 2,
    page_shape: tuple[int, int] = (48, 32),
    batch: int = 3,
    film_blocks: str = "A-I",
    entries_per_param: int = 3,
) -> list[CheckResult]:
    """Dice-loss gradient of every parameter tensor of a tiny model vs finite differences."""
    from .audio import EXCERPT_FRAMES, N_BANDS
    from .training import dice_loss

    rng = np.random.default_rng(seed)
    model = build_model(ModelConfig(base_filters=base_filters, film_blocks=film_blocks), seed)
    pages = rng.random((batch,) + page_shape)
    excerpts = rng.random((batch, N_BANDS, EXCERPT_FRAMES))
    masks = (rng.random((batch,) + page_shape) < 0.2).astype(float)

    def loss() -> Tensor:
        return dice_loss(model(pages, excerpts, training=True)[:, 0], masks)

    model.zero_grad()
    backward(loss())

    def scalar() -> float:
        with no_grad():
            return loss().item()

    results = []
    for name, p in model.named_parameters():
        picks = rng.choice(p.size, min(entries_per_param, p.size), replace=False)
        worst = 0.0
        for k in picks:
            idx = np.unravel_index(int(k), p.shape)
            num = numerical_gradient(scalar, p.data, idx)
            worst = max(worst, relative_error(float(p.grad[idx]), num))
        results.append(CheckResult(f"model.{name}", len(picks), worst))
    return results


def run_all(seed: int = 0, trials: int = 20, log: Callable[[str], None] = print) -> bool:
    started = time.monotonic()
    ok = True
    for r in check_ops(trials, seed) + check_model(seed):
        ok &= r.ok
        if not r.ok or not r.name.startswith("model."):
            log(str(r))
    log(f"{'PASS' if ok else 'FAIL'} gradcheck finished in {time.monotonic() - started:.1f}s")
    return ok
