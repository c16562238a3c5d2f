"""Central finite-difference gradient verification.

Given a pure scalar loss over a flat parameter dict and its analytic
gradient dict, perturbs sampled coordinates symmetrically and compares
against the fourth-order central difference (five-point stencil). The
higher-order stencil keeps truncation error around 1e-12 at step 1e-3,
so even small-magnitude coordinates resolve well below the 1e-4 gate.
The relative error metric is |analytic - numeric| / max(|analytic| +
|numeric|, floor), so exact zeros on both sides count as zero error.
"""

import numpy as np

from .errors import DataError

# Denominator floor: coordinate pairs whose combined magnitude is below
# this compare on an absolute scale, which keeps float roundoff in the
# stencil (about 1e-11 at step 1e-4 for unit-scale losses) from reading
# as a large "relative" error on effectively-zero gradients.
REL_FLOOR = 1e-6


def grad_check(loss_fn, params, analytic_grads, step: float = 1e-3,
               coords_per_param: int = 3, rng=None):
    """Returns a report dict: max_rel_error, worst_param, worst_index,
    n_coords, plus per-parameter maxima under "per_param".

    loss_fn(params) must be pure; params entries are perturbed in place and
    restored. Parameters without an analytic-gradient entry are skipped.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    report = {
        "max_rel_error": 0.0, "worst_param": None, "worst_index": None,
        "n_coords": 0, "per_param": {},
    }
    for name in sorted(analytic_grads):
        flat = params[name].reshape(-1)
        gf = np.asarray(analytic_grads[name]).reshape(-1)
        k = min(coords_per_param, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            evals = []
            for delta in (2 * step, step, -step, -2 * step):
                flat[i] = orig + delta
                evals.append(loss_fn(params))
            flat[i] = orig
            if not all(np.isfinite(v) for v in evals):
                raise DataError(
                    f"non-finite loss perturbing {name}[{i}] by {step}"
                )
            l2p, l1p, l1m, l2m = evals
            numeric = (-l2p + 8.0 * l1p - 8.0 * l1m + l2m) / (12.0 * step)
            rel = abs(gf[i] - numeric) / max(abs(gf[i]) + abs(numeric),
                                             REL_FLOOR)
            report["n_coords"] += 1
            if rel > worst:
                worst = rel
            if rel > report["max_rel_error"]:
                report["max_rel_error"] = rel
                report["worst_param"] = name
                report["worst_index"] = int(i)
        report["per_param"][name] = worst
    return report
