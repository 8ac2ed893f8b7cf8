"""
ShadowMamba Desk v1.0 · Finite-Difference Gradient Oracle
Central differences against the tape's reverse-mode gradients.
"""

import logging
import numpy as np

from tensor_core import ComputationTape, backward, no_grad

STEP = 1e-5
REL_TOL = 1e-4
FLOOR = 1e-8


def relative_error(g_ad, g_fd):
    """max |g_ad - g_fd| / (|g_fd| + 1e-8)."""
    g_ad = np.asarray(g_ad, dtype=np.float64)
    g_fd = np.asarray(g_fd, dtype=np.float64)
    if g_ad.size == 0:
        return 0.0
    return float(np.max(np.abs(g_ad - g_fd) / (np.abs(g_fd) + FLOOR)))


def numerical_gradient(loss_fn, param, step=STEP, entries=None):
    """
    Central-difference gradient of a scalar loss w.r.t. selected entries.

    Args:
        loss_fn: callable() -> scalar Tensor, re-evaluates the graph
        param: Tensor whose data is perturbed in place (restored after)
        step: finite-difference step
        entries: flat indices to check (default: all)

    Returns:
        ndarray of the same length as entries
    """
    flat = param.data.reshape(-1)
    if entries is None:
        entries = np.arange(flat.size)
    grads = np.zeros(len(entries), dtype=np.float64)

    with no_grad():
        for j, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            grads[j] = 0.5 * (f_plus - f_minus) / step
    return grads


def analytic_gradients(loss_fn, params):
    """Reverse-mode gradients of loss_fn for every tensor in params."""
    for p in params:
        p.zero_grad()
    with ComputationTape():
        loss = loss_fn()
    backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def gradient_check(loss_fn, params, names=None, step=STEP, per_param=None, rng=None):
    """
    Compare reverse-mode and central finite-difference gradients.

    Args:
        loss_fn: callable() -> scalar Tensor
        params: list of Tensors (requires_grad=True)
        names: optional labels for the report
        step: finite-difference step
        per_param: check only the `per_param` entries with the largest
                   analytic gradient magnitude in each tensor (default: all)
        rng: numpy Generator used to break ties when sampling

    Returns:
        dict: {"max_rel_error": float, "groups": {name: rel_error}}
    """
    names = names or [p.name or f"param{i}" for i, p in enumerate(params)]
    ad = analytic_gradients(loss_fn, params)
    groups = {}

    for name, p, g in zip(names, params, ad):
        flat_g = g.reshape(-1)
        if per_param is None or per_param >= flat_g.size:
            entries = np.arange(flat_g.size)
        else:
            jitter = rng.random(flat_g.size) * 1e-30 if rng is not None else 0.0
            entries = np.argsort(-(np.abs(flat_g) + jitter))[:per_param]
        fd = numerical_gradient(loss_fn, p, step=step, entries=entries)
        groups[name] = relative_error(flat_g[entries], fd)

    worst = max(groups.values()) if groups else 0.0
    if worst >= REL_TOL:
        bad = {k: v for k, v in groups.items() if v >= REL_TOL}
        logging.warning(f"[GRADCHECK] {len(bad)} group(s) above {REL_TOL}: {bad}")
    return {"max_rel_error": worst, "groups": groups}
