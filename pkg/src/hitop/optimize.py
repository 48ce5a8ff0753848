"""The interactive optimization loop and its editable feature-size map.

Drives: filter -> project -> solve -> sensitivities -> MMA, with passive
regions clamped at the filtered-field stage.  Step 1 of the interactive
protocol runs this loop for a fixed 50 iterations; the human (or co-pilot)
then edits the rmin map inside an ellipse and step 3 re-optimizes with a
fresh MMA memory.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import ContractError, ParameterError
from .fea import Assembler, SimpParams, compliance_and_gradient
from .filters import (
    NeighborhoodTable,
    RminMap,
    build_neighborhoods,
    heaviside_derivative,
    heaviside_project,
)
from .geometry import EllipseRegion
from .mma import MMAMemory, mma_update
from .problems import DesignProblem

log = logging.getLogger(__name__)

DEFAULT_BETA = 25.0
DEFAULT_ETA = 0.5
DEFAULT_TOL = 0.01
DEFAULT_MAX_ITERS = 1000
STEP1_ITERS = 50

STATE_MAGIC = b"HTOP1"


def beta_schedule(iteration: int, target: float = DEFAULT_BETA) -> float:
    """Projection sharpness for a given (0-based) iteration.

    A cold start at the full beta makes the first steps flip the design to
    a near-binary, often disconnected layout and compliance explodes by
    orders of magnitude, so sharpness ramps geometrically (doubling every 8
    iterations) and saturates at the target; a 50-iteration initial run ends
    with 10 iterations at full sharpness.  Resumed states re-enter at their
    iteration count, so re-optimization stays at the target.
    """
    return float(min(target, 2.0 ** (iteration // 8)))


@dataclass
class DesignState:
    """Design variables plus derived fields and optimization bookkeeping."""

    x: np.ndarray
    x_tilde: np.ndarray
    x_bar: np.ndarray
    rmin: RminMap
    iteration: int = 0
    compliance_history: list[float] = dc_field(default_factory=list)
    mma: MMAMemory = dc_field(default_factory=MMAMemory)
    beta: float = DEFAULT_BETA         # sharpness used for the stored x_bar
    beta_target: float = DEFAULT_BETA  # saturation value of the ramp
    eta: float = DEFAULT_ETA
    simp: SimpParams = dc_field(default_factory=SimpParams)
    converged: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.rmin.shape

    def density_image(self) -> np.ndarray:
        """8-bit grayscale density: 0 = void, 255 = solid."""
        nely, nelx = self.shape
        img = np.clip(self.x_bar.reshape(nely, nelx), 0.0, 1.0)
        return np.round(img * 255.0).astype(np.uint8)


class DensityPipeline:
    """x -> filtered (with passive overrides) -> projected, plus chain rule."""

    def __init__(self, problem: DesignProblem, rmin: RminMap,
                 beta: float = DEFAULT_BETA, eta: float = DEFAULT_ETA):
        if rmin.shape != (problem.nely, problem.nelx):
            raise ContractError("rmin map shape does not match the problem mesh")
        self.problem = problem
        self.beta = beta
        self.eta = eta
        self.table: NeighborhoodTable = build_neighborhoods(
            problem.nely, problem.nelx, rmin)
        self._passive_solid = problem.passive_solid
        self._passive_void = problem.passive_void

    def filtered(self, x: np.ndarray) -> np.ndarray:
        xt = self.table.apply(x)
        xt[self._passive_void] = 0.0
        xt[self._passive_solid] = 1.0
        return xt

    def projected(self, x_tilde: np.ndarray) -> np.ndarray:
        return heaviside_project(x_tilde, self.beta, self.eta)

    def physical(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xt = self.filtered(x)
        return xt, self.projected(xt)

    def chain(self, d_dxbar: np.ndarray, x_tilde: np.ndarray) -> np.ndarray:
        w = np.asarray(d_dxbar).copy()
        w *= heaviside_derivative(x_tilde, self.beta, self.eta)
        w[self._passive_void] = 0.0
        w[self._passive_solid] = 0.0
        return self.table.apply_transpose(w)

    def volume(self, x_bar: np.ndarray, x_tilde: np.ndarray
               ) -> tuple[float, np.ndarray]:
        """Volume constraint g = V/V0 - f and its design-space gradient."""
        problem = self.problem
        active = np.ones(problem.nele, dtype=bool)
        active[self._passive_void] = False
        active[self._passive_solid] = False
        v0 = float(problem.design_volume)
        g = float(x_bar[active].sum()) / v0 - problem.volfrac
        dv = np.where(active, 1.0 / v0, 0.0)
        return g, self.chain(dv, x_tilde)


def initial_state(problem: DesignProblem, rmin: RminMap,
                  beta_target: float = DEFAULT_BETA, eta: float = DEFAULT_ETA,
                  simp: SimpParams | None = None) -> DesignState:
    beta0 = beta_schedule(0, beta_target)
    pipeline = DensityPipeline(problem, rmin, beta0, eta)
    x = np.full(problem.nele, problem.volfrac)
    xt, xb = pipeline.physical(x)
    return DesignState(x=x, x_tilde=xt, x_bar=xb, rmin=rmin.copy(),
                       beta=beta0, beta_target=beta_target, eta=eta,
                       simp=simp or SimpParams())


def run_optimization(problem: DesignProblem, rmin: RminMap,
                     state: DesignState | None = None,
                     max_iters: int = DEFAULT_MAX_ITERS,
                     convergence_tol: float = DEFAULT_TOL,
                     reset_mma: bool = False,
                     progress: Callable[[int, float, DesignState], None] | None = None,
                     ) -> DesignState:
    """Advance the optimization until max_iters or max |dx| < tol.

    Passing an existing state continues it (its mesh must match); the rmin
    map given here replaces the state's map, and `reset_mma` drops stale
    asymptotes, which is how re-optimization after an rmin edit starts.
    """
    if state is None:
        state = initial_state(problem, rmin)
    else:
        if state.x.size != problem.nele:
            raise ContractError("state mesh does not match problem mesh")
    state.rmin = rmin.copy()
    if reset_mma:
        state.mma.reset()
    pipeline = DensityPipeline(problem, rmin, state.beta, state.eta)
    asm = Assembler(problem)

    x = state.x.copy()
    mem = state.mma
    state.converged = False
    for _ in range(max_iters):
        pipeline.beta = beta_schedule(state.iteration, state.beta_target)
        xt, xb = pipeline.physical(x)
        u = asm.solve(state.simp.stiffness(xb))
        c, dc_dxbar = compliance_and_gradient(problem, xb, u, state.simp)
        dc_dx = pipeline.chain(dc_dxbar, xt)
        g, dg_dx = pipeline.volume(xb, xt)
        x_new, mem = mma_update(x, dc_dx, g, dg_dx, mem)
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        state.iteration += 1
        state.compliance_history.append(c)
        if progress is not None:
            state.x = x
            progress(state.iteration, c, state)
        # convergence only counts at full sharpness: the ramp itself keeps
        # reshaping the design
        if change < convergence_tol and pipeline.beta >= state.beta_target:
            state.converged = True
            break

    state.beta = beta_schedule(max(state.iteration - 1, 0), state.beta_target)
    pipeline.beta = state.beta
    state.x = x
    state.x_tilde, state.x_bar = pipeline.physical(x)
    state.mma = mem
    return state


def apply_region_rmin(rmin: RminMap, region: EllipseRegion,
                      new_rmin: float) -> RminMap:
    """Set rmin to `new_rmin` for every element centroid inside the ellipse."""
    if new_rmin < 1.0:
        raise ParameterError("new rmin must be >= 1 element")
    nely, nelx = rmin.shape
    inside = region.mask((nely, nelx))
    if not inside.any():
        log.warning("region lies outside the design domain; rmin unchanged")
        return rmin.copy()
    values = rmin.values.copy()
    values[inside] = float(new_rmin)
    return RminMap(values)


# ---------------------------------------------------------------------------
# State snapshot file: magic, dims, iteration, then x / x_tilde / x_bar / rmin
# as row-major little-endian float64.
# ---------------------------------------------------------------------------


def save_state(state: DesignState, path) -> None:
    nely, nelx = state.shape
    with open(path, "wb") as fh:
        fh.write(STATE_MAGIC)
        fh.write(struct.pack("<III", nelx, nely, state.iteration))
        for arr in (state.x, state.x_tilde, state.x_bar, state.rmin.values):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path) -> DesignState:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != STATE_MAGIC:
            raise ContractError(f"not a design-state file (magic {magic!r})")
        nelx, nely, iteration = struct.unpack("<III", fh.read(12))
        n = nelx * nely
        arrays = []
        for _ in range(4):
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ContractError("truncated design-state file")
            arrays.append(np.frombuffer(buf, dtype="<f8").copy())
    x, xt, xb, rv = arrays
    return DesignState(x=x, x_tilde=xt, x_bar=xb,
                       rmin=RminMap(rv.reshape(nely, nelx)),
                       iteration=iteration)
