"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from . import tensor as T


def numeric_grad(fn, param, step=1e-5, entries=None):
    """Central differences of the scalar ``fn()`` with respect to ``param.data``.

    ``entries`` limits the check to a subset of flat indices; the rest stay NaN.
    """
    flat = param.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if entries is None else entries
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        hi = fn()
        flat[i] = old - step
        lo = fn()
        flat[i] = old
        out[i] = (hi - lo) / (2 * step)
    return out.reshape(param.shape)


def analytic_grads(loss_fn, params):
    """Run ``loss_fn`` on a fresh tape and return the gradient of each param."""
    T.zero_grad(params)
    with T.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def relative_error(analytic, numeric, floor=1e-8):
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(n), floor)))


def check(loss_fn, params, step=1e-5, max_entries=None, rng=None):
    """Worst relative error per parameter between tape gradients and finite differences."""
    grads = analytic_grads(loss_fn, params)
    rng = rng or np.random.default_rng(0)

    def value():
        return float(loss_fn().item())

    report = {}
    for p, g in zip(params, grads):
        entries = None
        if max_entries is not None and p.data.size > max_entries:
            entries = rng.choice(p.data.size, size=max_entries, replace=False)
        num = numeric_grad(value, p, step, entries)
        report[p.name or str(id(p))] = relative_error(g, num)
    return report
