"""Central-difference gradient checking, independent of the backward rules."""

import math

import numpy as np

from .tensor import Tape, Tensor, backward


def grad_check(fn, inputs, step=1e-5, max_entries=None, seed=0):
    """Max relative error between analytic and numeric gradients.

    ``fn`` maps a list of Tensors to a scalar Tensor on the active tape;
    ``inputs`` are numpy arrays (always promoted to float64 here).  The
    numeric side is a central difference with the given step, evaluated
    with plain forward passes.  Any non-finite value anywhere makes the
    result +inf.  ``max_entries`` caps how many coordinates per input are
    probed (a seeded random subset) for expensive pipelines.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]

    with Tape() as tape:
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        out = fn(tensors)
        if out.data.numel() != 1:
            raise ValueError("grad_check: fn must produce a scalar")
        if not math.isfinite(out.item()):
            return math.inf
        grads = backward(tape, out)
    # Match by underlying storage so closures that rebind module parameters
    # to the checked tensors still resolve; unused inputs get zeros.
    by_data = {id(k.data): v for k, v in grads.items()}
    analytic = [
        by_data[id(t.data)].numpy() if id(t.data) in by_data else np.zeros_like(a)
        for t, a in zip(tensors, arrays)
    ]

    def eval_at(pert):
        ts = [Tensor(a) for a in pert]
        val = fn(ts).item()
        return val

    worst = 0.0
    for i, base in enumerate(arrays):
        flat = base.reshape(-1)
        a_flat = analytic[i].reshape(-1)
        idx = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            # spot-check a deterministic random subset; full sweeps over
            # conv kernels through a whole pipeline take minutes each
            picks = np.random.default_rng(seed).choice(
                flat.size, size=max_entries, replace=False)
            idx = sorted(int(j) for j in picks)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + step
            f_plus = eval_at(arrays)
            flat[j] = orig - step
            f_minus = eval_at(arrays)
            flat[j] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                return math.inf
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = a_flat[j]
            if not math.isfinite(a):
                return math.inf
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
