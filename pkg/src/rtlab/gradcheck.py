"""Finite-difference validation of analytic gradients.

The checker perturbs parameter entries one at a time (central differences,
step 1e-4 in float64) and compares against the tape's gradients. Fragments
larger than the evaluation cap are checked on a deterministic subsample of
entries spread across every tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Graph, Tensor

FD_STEP = 1e-4
MAX_EVALS = 10_000


@dataclass
class GradCheckReport:
    rel_tol: float
    max_rel_err: float = 0.0
    worst_param: str = ""
    entries_checked: int = 0
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rel_tol


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
               rel_tol: float = 1e-4, step: float = FD_STEP,
               max_evals: int = MAX_EVALS, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must be a deterministic closure over fixed inputs returning
    a scalar Tensor. Entries are subsampled (seeded, spread over all
    tensors) when the fragment exceeds ``max_evals`` parameters.
    """
    for p in params.values():
        p.zero_grad()
    with Graph() as g:
        loss = loss_fn()
        g.backward(loss)
    if not np.isfinite(loss.item()):
        raise FloatingPointError("grad_check: non-finite loss")
    analytic = {name: p.grad.copy() for name, p in params.items()}

    total = sum(p.size for p in params.values())
    rng = np.random.default_rng(seed)
    report = GradCheckReport(rel_tol=rel_tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if total > max_evals:
            take = max(1, int(round(max_evals * n / total)))
            idxs = rng.choice(n, size=min(take, n), replace=False)
        else:
            idxs = np.arange(n)
        an = analytic[name].reshape(-1)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_fn().item()
            flat[i] = orig - step
            lm = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"grad_check: non-finite loss perturbing {name}[{i}]")
            numeric = (lp - lm) / (2.0 * step)
            err = _rel_err(an[i], numeric)
            worst = max(worst, err)
            report.entries_checked += 1
        report.per_param[name] = worst
        if worst > report.max_rel_err:
            report.max_rel_err = worst
            report.worst_param = name
    return report
