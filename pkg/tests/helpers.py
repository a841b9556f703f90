"""Independent oracles shared by the test suite.

These deliberately avoid the library's own code paths: the STFT oracle is a
DFT-by-definition matrix product on numpy-padded frames, gradients come from
central finite differences, and the transport oracle solves the discretized
coupling problem as a unit-mass assignment.
"""

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment


def naive_dft_magnitude(x, window_length, hop):
    """O(n^2) magnitude STFT straight from the DFT definition, replicating
    the package convention (periodic Hann, centered reflect padding,
    ceil(len/hop) frames)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    frames = -(-n // hop)
    pad = window_length // 2
    mode = "reflect" if n > pad else "constant"
    xp = np.pad(x, pad, mode=mode)
    k = np.arange(window_length)
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * k / window_length)
    bins = window_length // 2 + 1
    dft = np.exp(-2j * np.pi * np.outer(np.arange(bins), k) / window_length)
    out = np.empty((frames, bins))
    for t in range(frames):
        seg = xp[t * hop : t * hop + window_length] * win
        out[t] = np.abs(dft @ seg)
    return out


def autograd_gradient(fn, x: torch.Tensor) -> torch.Tensor:
    xg = x.detach().clone().requires_grad_(True)
    fn(xg).backward()
    return xg.grad.detach().reshape(-1).clone()


def central_diff_gradient(fn, x: torch.Tensor, h: float, indices=None) -> torch.Tensor:
    xw = x.detach().clone()
    flat = xw.reshape(-1)
    if indices is None:
        indices = range(flat.numel())
    out = []
    for i in indices:
        orig = float(flat[i])
        flat[i] = orig + h
        f_plus = float(fn(xw))
        flat[i] = orig - h
        f_minus = float(fn(xw))
        flat[i] = orig
        out.append((f_plus - f_minus) / (2.0 * h))
    return torch.tensor(out, dtype=torch.float64)


def gradient_rel_error(fn, x: torch.Tensor, h: float, indices=None,
                       probe_dtype=None) -> float:
    """Vector-norm relative error between the autograd gradient of a scalar
    function and its central-finite-difference estimate.

    ``fn`` must follow the dtype of its input. For float32 gradient checks
    pass ``probe_dtype=torch.float64`` so the finite-difference oracle is
    evaluated without float32 rounding/truncation noise; the comparison then
    measures how far the float32 gradient is from the true derivative.
    """
    auto = autograd_gradient(fn, x).to(torch.float64)
    if indices is not None:
        auto = auto[torch.as_tensor(list(indices))]
    probe = x if probe_dtype is None else x.to(probe_dtype)
    num = central_diff_gradient(fn, probe, h, indices)
    denom = max(float(num.norm()), float(auto.norm()), 1e-12)
    return float((num - auto).norm()) / denom


def w2_grid_optimum(a_values, a_pmf, b_values, b_pmf, grid=64):
    """Exact optimum over couplings whose masses are multiples of 1/grid,
    solved as a unit-mass assignment problem. When both pmfs lie on the
    1/grid lattice this equals the exact squared 2-Wasserstein distance."""
    ca = np.round(np.asarray(a_pmf) * grid).astype(int)
    cb = np.round(np.asarray(b_pmf) * grid).astype(int)
    assert ca.sum() == grid and cb.sum() == grid, "pmfs must sit on the mass grid"
    ua = np.repeat(np.asarray(a_values, dtype=np.float64), ca)
    ub = np.repeat(np.asarray(b_values, dtype=np.float64), cb)
    cost = (ua[:, None] - ub[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / grid)


def w2_exhaustive_2x2(a_values, a_pmf, b_values, b_pmf, grid=64):
    """Brute-force enumeration of every grid coupling of two 2-point
    distributions (one free parameter)."""
    (a1, a2), (b1, b2) = a_values, b_values
    alpha, beta = a_pmf[0], b_pmf[0]
    best = np.inf
    for t_units in range(grid + 1):
        t = t_units / grid
        if t > min(alpha, beta) + 1e-12 or t < max(0.0, alpha + beta - 1.0) - 1e-12:
            continue
        cost = (
            t * (a1 - b1) ** 2
            + (alpha - t) * (a1 - b2) ** 2
            + (beta - t) * (a2 - b1) ** 2
            + (1 - alpha - beta + t) * (a2 - b2) ** 2
        )
        best = min(best, cost)
    return float(best)
