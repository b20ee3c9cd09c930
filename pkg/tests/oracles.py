"""Independent reference implementations used as test oracles.

Deliberately naive: plain Python loops, no shared code with the package paths
they check.
"""

from __future__ import annotations

import itertools
import re
import math

import numpy as np


def brute_force_wilcoxon(diffs):
    """(W, p) for the one-sided signed-rank test by enumerating all 2^n sign vectors."""
    d = [float(x) for x in diffs if x != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    mags = [abs(x) for x in d]
    ranks = []
    for m in mags:
        below = sum(1 for o in mags if o < m)
        equal = sum(1 for o in mags if o == m)
        ranks.append(below + (equal + 1) / 2.0)
    w_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if w >= w_obs - 1e-9:
            hits += 1
    return w_obs, hits / 2**n


def set_dice(a, b):
    sa = {(i, j) for i, row in enumerate(a) for j, v in enumerate(row) if v}
    sb = {(i, j) for i, row in enumerate(b) for j, v in enumerate(row) if v}
    if not sa and not sb:
        return 1.0
    return 2 * len(sa & sb) / (len(sa) + len(sb))


def scalar_soft_dice_loss(probs, labels, eps=1.0):
    """Mean over foreground classes of 1 - soft Dice; ``probs`` is (4, H, W), labels BraTS-coded."""
    values = (0, 1, 2, 4)
    h, w = len(labels), len(labels[0])
    total = 0.0
    for c in (1, 2, 3):
        inter = psum = tsum = 0.0
        for i in range(h):
            for j in range(w):
                t = 1.0 if labels[i][j] == values[c] else 0.0
                p = float(probs[c][i][j])
                inter += p * t
                psum += p
                tsum += t
        total += 1.0 - (2.0 * inter + eps) / (psum + tsum + eps)
    return total / 3.0


def central_differences(f, params, names=None, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. entries of tensors in ``params``.

    ``params`` maps names to float64 torch tensors that ``f`` reads; entries are
    perturbed in place and restored.
    """
    out = {}
    for name in names or list(params):
        flat = params[name].view(-1)
        grad = np.zeros(flat.numel())
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            plus = f()
            flat[i] = orig - h
            minus = f()
            flat[i] = orig
            grad[i] = (plus - minus) / (2 * h)
        out[name] = grad.reshape(tuple(params[name].shape))
    return out


# relative error with a floor: below |g| ~ 1e-6 the finite-difference round-off
# (~1e-11 for an O(1) loss at h=1e-5) dominates and only absolute agreement is meaningful
REL_ERR_FLOOR = 1e-6


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in numeric:
        a = np.asarray(analytic[name], dtype=np.float64).ravel()
        b = np.asarray(numeric[name], dtype=np.float64).ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_ERR_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def isclose_exact(a, b, tol=1e-12):
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)


_CELL = re.compile(r"(\*\*)?(\d+\.\d) \(p=([0-9.e+-]+)\)(\*\*)?")


def parse_table_text(text):
    """Rows of the rendered comparison table as ``{label: [(ratio, p, bold), ...]}``."""
    lines = text.splitlines()
    start = next(i for i, line in enumerate(lines) if line.startswith("---")) + 1
    rows = {}
    for line in lines[start:]:
        cells = list(_CELL.finditer(line))
        label = line[:cells[0].start()].strip()
        rows[label] = [(m.group(2), m.group(3), bool(m.group(1)) and bool(m.group(4))) for m in cells]
    return rows
