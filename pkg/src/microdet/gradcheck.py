"""Finite-difference verification of analytic gradients.

Central differences at step 1e-5 in float64 are the independent oracle for
every backward implementation: `check_gradients` compares them against
tape gradients and reports the worst relative error. The named suites at
the bottom back both the test suite and the `gradcheck` CLI subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .rng import substream
from .tensor import Tape, Tensor, backward

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4
# Entries where both gradients are below this magnitude are treated as
# matching zeros rather than fed into the relative-error quotient.
ZERO_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(|a|, |n|), with a floor for near-zeros."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ZERO_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def avoid_kinks(values: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Push entries within `margin` of 0 away from it (relu/max breakpoints)."""
    out = values.copy()
    near = np.abs(out) < margin
    out[near] = np.where(out[near] >= 0, out[near] + 2 * margin, out[near] - 2 * margin)
    return out


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < DEFAULT_TOL


def check_gradients(
    make_loss: Callable[[], Tensor],
    wrt: dict[str, Tensor],
    *,
    name: str = "case",
    eps: float = DEFAULT_EPS,
    max_entries_per_tensor: int = 0,
    seed: int = 0,
) -> CheckResult:
    """Compare tape gradients of `make_loss()` against central differences.

    `make_loss` must be a pure function of the tensors in `wrt` (modulo
    batchnorm running-stat updates, which do not affect train-mode
    outputs). With ``max_entries_per_tensor > 0`` only a seeded subsample
    of coordinates is checked, which keeps composed-model checks fast.
    """
    for t in wrt.values():
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = make_loss()
    backward(tape, loss)
    analytic = {key: t.grad.copy() for key, t in wrt.items()}

    rng = substream(seed, "gradcheck", name)
    worst = 0.0
    total = 0
    for key, t in wrt.items():
        flat = t.data.reshape(-1)
        size = flat.size
        if 0 < max_entries_per_tensor < size:
            idxs = np.sort(rng.choice(size, size=max_entries_per_tensor, replace=False))
        else:
            idxs = np.arange(size)
        numeric = np.empty(len(idxs))
        for k, i in enumerate(idxs):
            orig = flat[i]
            flat[i] = orig + eps
            hi = make_loss().item()
            flat[i] = orig - eps
            lo = make_loss().item()
            flat[i] = orig
            numeric[k] = (hi - lo) / (2 * eps)
        worst = max(worst, relative_error(analytic[key].reshape(-1)[idxs], numeric))
        total += len(idxs)
    return CheckResult(name=name, max_rel_err=worst, entries=total)


# ---------------------------------------------------------------------------
# named check suites (shared by tests and the CLI)
# ---------------------------------------------------------------------------


def primitive_checks(seed: int = 0) -> list[CheckResult]:
    """Finite-difference check of every differentiable primitive."""
    from . import ops

    rng = substream(seed, "gradcheck-primitives")
    results = []

    def case(name, make_loss, wrt, max_entries=0):
        results.append(
            check_gradients(make_loss, wrt, name=name, max_entries_per_tensor=max_entries, seed=seed)
        )

    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(3, 4)))
    row = Tensor(rng.normal(size=(1, 4)))
    case("add_broadcast", lambda: ops.tmean(ops.add(a, row)), {"a": a, "row": row})
    case("sub", lambda: ops.tmean(ops.sub(a, b)), {"a": a, "b": b})
    case("mul_broadcast", lambda: ops.tmean(ops.mul(a, row)), {"a": a, "row": row})
    case("neg", lambda: ops.tmean(ops.neg(a)), {"a": a})
    case("exp", lambda: ops.tmean(ops.exp(a)), {"a": a})

    k = Tensor(avoid_kinks(rng.normal(size=(4, 5))))
    case("relu", lambda: ops.tmean(ops.relu(k)), {"x": k})
    case("sigmoid", lambda: ops.tmean(ops.sigmoid(a)), {"x": a})
    case("swish", lambda: ops.tmean(ops.swish(a)), {"x": a})

    m1 = Tensor(avoid_kinks(rng.normal(size=(3, 4))))
    m2 = Tensor(avoid_kinks(rng.normal(size=(3, 4)) + 0.5))
    case("maximum", lambda: ops.tmean(ops.maximum(m1, m2)), {"a": m1, "b": m2})
    mc = Tensor(avoid_kinks(rng.normal(size=(3, 4))))
    case("minimum_const", lambda: ops.tmean(ops.minimum_const(mc, 0.4)), {"x": mc})

    ma = Tensor(rng.normal(size=(3, 5)))
    mb = Tensor(rng.normal(size=(5, 2)))
    case("matmul", lambda: ops.tmean(ops.matmul(ma, mb)), {"a": ma, "b": mb})

    s = Tensor(rng.normal(size=(2, 3, 4)))
    case("sum_axis", lambda: ops.tmean(ops.tsum(s, axis=(0, 2))), {"x": s})
    case("mean_axis", lambda: ops.tmean(ops.tmean(s, axis=1, keepdims=True)), {"x": s})
    case("reshape", lambda: ops.tmean(ops.mul(ops.reshape(s, (6, 4)), ops.reshape(s, (6, 4)))), {"x": s})
    case("transpose", lambda: ops.tmean(ops.exp(ops.transpose(s, (2, 0, 1)))), {"x": s})

    c1 = Tensor(rng.normal(size=(2, 3, 2, 2)))
    c2 = Tensor(rng.normal(size=(2, 1, 2, 2)))
    case("concat", lambda: ops.tmean(ops.exp(ops.concat([c1, c2], axis=1))), {"a": c1, "b": c2})
    case("narrow", lambda: ops.tmean(ops.exp(ops.narrow(c1, 1, 1, 2))), {"x": c1})

    u = Tensor(rng.normal(size=(2, 3, 3, 2)))
    case("upsample2x", lambda: ops.tmean(ops.exp(ops.upsample2x(u))), {"x": u})

    x = Tensor(rng.normal(size=(2, 3, 6, 5)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.5)
    bias = Tensor(rng.normal(size=(4,)))
    case("conv2d_pad1", lambda: ops.tmean(ops.conv2d(x, w, bias, stride=1, padding=1)),
         {"x": x, "w": w, "b": bias})
    case("conv2d_stride2", lambda: ops.tmean(ops.conv2d(x, w, bias, stride=2, padding=1)),
         {"x": x, "w": w, "b": bias})
    w1 = Tensor(rng.normal(size=(2, 3, 1, 1)))
    case("conv2d_1x1", lambda: ops.tmean(ops.conv2d(x, w1, None)), {"x": x, "w": w1})

    case("global_avg_pool", lambda: ops.tmean(ops.exp(ops.global_avg_pool(x))), {"x": x})

    bx = Tensor(rng.normal(size=(3, 2, 4, 4)))
    gamma = Tensor(rng.normal(size=(2,)) + 1.5)
    beta = Tensor(rng.normal(size=(2,)))
    case("batchnorm2d_train",
         lambda: ops.tmean(ops.exp(ops.batchnorm2d_train(bx, gamma, beta, 1e-5)[0])),
         {"x": bx, "gamma": gamma, "beta": beta})
    run_m = rng.normal(size=2)
    run_v = rng.uniform(0.5, 2.0, size=2)
    case("batchnorm2d_eval",
         lambda: ops.tmean(ops.exp(ops.batchnorm2d_eval(bx, gamma, beta, run_m, run_v, 1e-5))),
         {"x": bx, "gamma": gamma, "beta": beta})

    gt = Tensor(rng.normal(size=(2, 3, 4, 5, 5)))
    gi = (np.array([0, 1, 1]), np.array([0, 2, 1]), np.array([1, 3, 0]), np.array([2, 2, 4]))
    case("gather_cells", lambda: ops.tmean(ops.exp(ops.gather_cells(gt, *gi))), {"x": gt})

    logits = Tensor(rng.normal(size=(3, 4)))
    targets = rng.integers(0, 2, size=(3, 4)).astype(float)
    case("bce_with_logits", lambda: ops.tmean(ops.bce_with_logits(logits, targets)), {"x": logits})

    return results


GRADCHECK_GROUPS = ("tensor", "ca", "taskaware", "neck", "loss")


def run_gradcheck(groups: Sequence[str] = ("all",), seed: int = 0) -> list[CheckResult]:
    """Run the requested suites; `groups` entries come from GRADCHECK_GROUPS."""
    want = set(GRADCHECK_GROUPS) if "all" in groups else set(groups)
    results: list[CheckResult] = []
    if "tensor" in want:
        results.extend(primitive_checks(seed))
    composed = want & {"ca", "taskaware", "neck", "loss"}
    if composed:
        from . import composed_checks

        results.extend(composed_checks.build(seed, only=composed))
    return results
