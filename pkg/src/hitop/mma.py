"""Method of Moving Asymptotes, specialized to a single constraint.

The convex subproblem is solved exactly through its one-dimensional dual:
for a fixed multiplier the primal minimizer has a closed form, and the dual
function is monotone in the multiplier, so a deterministic bisection finds
the optimum.  Asymptote bookkeeping follows the standard recipe
(initial offset 0.5 of the box, expansion 1.2, contraction 0.7).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)

INIT_OFFSET = 0.5
EXPAND = 1.2
CONTRACT = 0.7
MOVE_LIMIT = 0.2
ASY_MIN = 1e-3
ASY_MAX = 10.0


@dataclass
class MMAMemory:
    """Previous two iterates and asymptotes; zeroed at (re)starts."""

    x_prev: np.ndarray | None = None
    x_prev2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    iteration: int = 0

    def reset(self):
        self.x_prev = None
        self.x_prev2 = None
        self.low = None
        self.upp = None
        self.iteration = 0


@dataclass
class MMAOptions:
    move: float = MOVE_LIMIT
    lower: float = 0.0
    upper: float = 1.0
    dual_tol: float = 1e-12
    dual_max_iter: int = 200


def _update_asymptotes(x, memory, xmin, xmax):
    span = xmax - xmin
    if memory.iteration < 2 or memory.x_prev is None or memory.x_prev2 is None:
        low = x - INIT_OFFSET * span
        upp = x + INIT_OFFSET * span
    else:
        osc = (x - memory.x_prev) * (memory.x_prev - memory.x_prev2)
        scale = np.where(osc < 0.0, CONTRACT, np.where(osc > 0.0, EXPAND, 1.0))
        low = x - scale * (memory.x_prev - memory.low)
        upp = x + scale * (memory.upp - memory.x_prev)
        low = np.clip(low, x - ASY_MAX * span, x - ASY_MIN * span)
        upp = np.clip(upp, x + ASY_MIN * span, x + ASY_MAX * span)
    return low, upp


def mma_update(x: np.ndarray, dc_dx: np.ndarray,
               g: float, dg_dx: np.ndarray,
               memory: MMAMemory, options: MMAOptions = MMAOptions()
               ) -> tuple[np.ndarray, MMAMemory]:
    """One MMA step for min c(x) s.t. g(x) <= 0, box-constrained.

    Returns the new iterate and the advanced memory.  On an infeasible
    subproblem the iterate is projected to its move box and the event is
    logged as an error.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    dc = np.asarray(dc_dx, dtype=np.float64).ravel()
    dg = np.asarray(dg_dx, dtype=np.float64).ravel()
    if x.shape != dc.shape or x.shape != dg.shape:
        raise ContractError("design vector and gradients must share a shape")
    if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(dg))
            and np.isfinite(g)):
        raise ContractError("gradients must be finite")

    n = x.size
    xmin = np.full(n, options.lower)
    xmax = np.full(n, options.upper)
    span = xmax - xmin

    low, upp = _update_asymptotes(x, memory, xmin, xmax)
    alfa = np.maximum.reduce([xmin, low + 0.1 * (x - low), x - options.move * span])
    beta = np.minimum.reduce([xmax, upp - 0.1 * (upp - x), x + options.move * span])

    ux = upp - x
    xl = x - low
    eps_r = 1e-5 / np.maximum(span, 1e-5)
    p0 = ux ** 2 * (1.001 * np.maximum(dc, 0.0) + 0.001 * np.maximum(-dc, 0.0) + eps_r)
    q0 = xl ** 2 * (0.001 * np.maximum(dc, 0.0) + 1.001 * np.maximum(-dc, 0.0) + eps_r)
    p1 = ux ** 2 * np.maximum(dg, 0.0)
    q1 = xl ** 2 * np.maximum(-dg, 0.0)
    # constant so the approximation reproduces g at the expansion point
    r1 = g - float(np.sum(p1 / ux + q1 / xl))

    def primal(lam: float) -> np.ndarray:
        sp = np.sqrt(p0 + lam * p1)
        sq = np.sqrt(q0 + lam * q1)
        xs = (sp * low + sq * upp) / (sp + sq)
        return np.clip(xs, alfa, beta)

    def constraint(lam: float) -> float:
        xs = primal(lam)
        return r1 + float(np.sum(p1 / (upp - xs) + q1 / (xs - low)))

    if constraint(0.0) <= 0.0:
        lam = 0.0
    else:
        hi = 1.0
        grow = 0
        while constraint(hi) > 0.0 and grow < 60:
            hi *= 2.0
            grow += 1
        if constraint(hi) > 0.0:
            log.error("MMA subproblem infeasible; projecting to move bounds")
            x_new = np.clip(x, alfa, beta)
            new_mem = MMAMemory(x_prev=x, x_prev2=memory.x_prev, low=low,
                                upp=upp, iteration=memory.iteration + 1)
            return x_new, new_mem
        lo = 0.0
        for _ in range(options.dual_max_iter):
            lam = 0.5 * (lo + hi)
            if constraint(lam) > 0.0:
                lo = lam
            else:
                hi = lam
            if hi - lo <= options.dual_tol * max(1.0, hi):
                break
        lam = hi

    x_new = primal(lam)
    new_mem = MMAMemory(x_prev=x, x_prev2=memory.x_prev, low=low, upp=upp,
                        iteration=memory.iteration + 1)
    return x_new, new_mem
