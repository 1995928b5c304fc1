"""Central finite-difference gradient checks.

Two details keep the comparison meaningful. Gradients that are exactly zero
analytically (for example key biases, which softmax cancels) are compared
against a norm floor instead of their own magnitude. Coordinates whose
+-h stencil straddles a ReLU kink are detected from disagreeing one-sided
slopes and skipped.
"""

import numpy as np

from outfitgen import autodiff as ad

H = 1e-5
FLOOR = 1e-6
KINK_RATIO = 1e-4


def rel_error(analytic, numeric, floor=FLOOR):
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(f, x, coords=None, h=H):
    """Central differences of f at ``coords`` of ``x`` (flat indices).

    Returns ``(grad, smooth)``; ``smooth[i]`` is False at a detected kink.
    """
    flat = x.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    grads, smooth = [], []
    f0 = f()
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        right, left = up - f0, f0 - down
        scale = abs(right) + abs(left)
        smooth.append(abs(right - left) <= KINK_RATIO * scale + 1e-13)
        grads.append((up - down) / (2 * h))
    return np.array(grads), np.array(smooth, dtype=bool)


def check(f_tensor, inputs, coords_per_input=None, rng=None):
    """Max relative error over ``inputs`` between the recorded gradient of
    scalar ``f_tensor()`` and central differences."""
    for t in inputs:
        t.grad = None
    loss = f_tensor()
    loss.backward()
    analytic = {id(t): (np.zeros(t.shape) if t.grad is None else np.array(t.grad)) for t in inputs}

    def value():
        with ad.no_grad():
            return f_tensor().item()

    worst = 0.0
    for t in inputs:
        coords = np.arange(t.data.size)
        if coords_per_input is not None and t.data.size > coords_per_input:
            coords = rng.choice(t.data.size, size=coords_per_input, replace=False)
        num, smooth = numeric_grad(value, t, coords)
        ana = analytic[id(t)].reshape(-1)[coords]
        worst = max(worst, rel_error(ana[smooth], num[smooth]))
    return worst
