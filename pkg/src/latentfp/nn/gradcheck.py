"""Central finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from latentfp.nn.tensor import Tensor, kink_monitor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped_kinks: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Norm-wise relative error; ``floor`` keeps all-zero gradients from dividing by zero."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    *,
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    names: Sequence[str] | None = None,
) -> list[GradCheckResult]:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. With ``max_entries`` only a random subset of each tensor is
    perturbed. Perturbations that flip a relu/pool/abs decision are skipped
    and replaced by another entry, since the loss is not differentiable there.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    with kink_monitor() as base_kinks:
        loss = loss_fn()
    loss.backward()
    base_record = list(base_kinks)
    analytic = [p.grad.copy() for p in params]

    results = []
    for idx, p in enumerate(params):
        flat = p.data.reshape(-1)
        order = rng.permutation(flat.size) if max_entries is not None else np.arange(flat.size)
        want = flat.size if max_entries is None else min(max_entries, flat.size)
        got_a, got_n, skipped = [], [], 0
        for pos in order:
            if len(got_a) >= want:
                break
            orig = flat[pos]
            flat[pos] = orig + h
            with kink_monitor() as k_plus:
                f_plus = loss_fn().item()
            flat[pos] = orig - h
            with kink_monitor() as k_minus:
                f_minus = loss_fn().item()
            flat[pos] = orig
            if list(k_plus) != base_record or list(k_minus) != base_record:
                skipped += 1
                continue
            got_a.append(analytic[idx].reshape(-1)[pos])
            got_n.append((f_plus - f_minus) / (2 * h))
        name = names[idx] if names is not None else (p.name or f"param{idx}")
        err = relative_error(np.array(got_a), np.array(got_n)) if got_a else 0.0
        results.append(GradCheckResult(name, err, len(got_a), skipped))
    for p in params:
        p.zero_grad()
    return results
