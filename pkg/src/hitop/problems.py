"""Design problem definition, JSON (de)serialization, and stock problems.

Conventions (documented once, used everywhere):

- The element grid is an image: row ``r`` grows downward, column ``c`` grows
  to the right.  Element index ``e = r * nelx + c`` (row-major).
- Nodes are numbered column-major: node at grid position (x=c, y=r) has id
  ``n = c * (nely + 1) + r``; its dofs are ``(2n, 2n + 1) = (ux, uy)``.
  This matches the classic educational 2D topology-optimization codes.
- Elements are unit squares with unit thickness; plane stress.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .errors import ProblemValidationError


def _load_schema() -> dict:
    with resources.files("hitop").joinpath("problem.schema.json").open("rb") as fh:
        return json.load(fh)


_SCHEMA = _load_schema()


@dataclass
class DesignProblem:
    """One compliance-minimization instance: mesh, loads, supports, budget."""

    nelx: int
    nely: int
    volfrac: float
    loads: tuple[tuple[int, float], ...]
    fixed_dofs: np.ndarray
    passive_solid: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    passive_void: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    nu: float = 0.3

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        self.passive_solid = np.unique(np.asarray(self.passive_solid, dtype=np.int64))
        self.passive_void = np.unique(np.asarray(self.passive_void, dtype=np.int64))
        self.loads = tuple((int(d), float(v)) for d, v in self.loads)
        if self.nelx < 1 or self.nely < 1:
            raise ProblemValidationError("mesh dimensions must be >= 1", "nelx")
        if not 0.0 < self.volfrac < 1.0:
            raise ProblemValidationError("volfrac must lie in (0, 1)", "volfrac")
        if len(self.loads) == 0:
            raise ProblemValidationError("at least one load is required", "loads")
        if self.fixed_dofs.size == 0:
            raise ProblemValidationError("at least one fixed dof is required", "fixed_dofs")
        if self.fixed_dofs.max() >= self.ndof or self.fixed_dofs.min() < 0:
            raise ProblemValidationError("fixed dof index out of range", "fixed_dofs")
        fixed = set(self.fixed_dofs.tolist())
        for i, (dof, _val) in enumerate(self.loads):
            if dof < 0 or dof >= self.ndof:
                raise ProblemValidationError("load dof index out of range", f"loads[{i}]")
            if dof in fixed:
                raise ProblemValidationError(
                    "load applied on a fixed dof", f"loads[{i}]"
                )
        for name, arr in (("passive_solid", self.passive_solid),
                          ("passive_void", self.passive_void)):
            if arr.size and (arr.min() < 0 or arr.max() >= self.nele):
                raise ProblemValidationError("passive element index out of range", name)
        if np.intersect1d(self.passive_solid, self.passive_void).size:
            raise ProblemValidationError(
                "passive_solid and passive_void overlap", "passive_void"
            )

    @property
    def nele(self) -> int:
        return self.nelx * self.nely

    @property
    def nnode(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def ndof(self) -> int:
        return 2 * self.nnode

    @property
    def design_volume(self) -> int:
        """V0: total elements minus the forced-void count."""
        return self.nele - int(self.passive_void.size)

    def node_id(self, row: int, col: int) -> int:
        return col * (self.nely + 1) + row

    def force_vector(self) -> np.ndarray:
        f = np.zeros(self.ndof)
        for dof, val in self.loads:
            f[dof] += val
        return f

    def to_json_dict(self) -> dict:
        doc = {
            "nelx": self.nelx,
            "nely": self.nely,
            "volfrac": self.volfrac,
            "nu": self.nu,
            "loads": [[d, v] for d, v in self.loads],
            "fixed_dofs": self.fixed_dofs.tolist(),
        }
        if self.passive_solid.size:
            doc["passive_solid"] = {"elements": self.passive_solid.tolist()}
        if self.passive_void.size:
            doc["passive_void"] = {"elements": self.passive_void.tolist()}
        return doc


def _rect_elements(rect, nelx, nely, where) -> np.ndarray:
    row, col, nrows, ncols = rect
    if row + nrows > nely or col + ncols > nelx:
        raise ProblemValidationError("passive rect exceeds the mesh", where)
    rr, cc = np.meshgrid(np.arange(row, row + nrows), np.arange(col, col + ncols),
                         indexing="ij")
    return (rr * nelx + cc).ravel()


def _passive_elements(doc: dict, key: str, nelx: int, nely: int) -> np.ndarray:
    spec = doc.get(key)
    if not spec:
        return np.empty(0, dtype=np.int64)
    parts = [np.asarray(spec.get("elements", []), dtype=np.int64)]
    for i, rect in enumerate(spec.get("rects", [])):
        parts.append(_rect_elements(rect, nelx, nely, f"{key}.rects[{i}]"))
    return np.unique(np.concatenate(parts))


def problem_from_dict(doc: dict) -> DesignProblem:
    """Validate a problem document and build the DesignProblem."""
    try:
        jsonschema.validate(doc, _SCHEMA)
    except jsonschema.ValidationError as err:
        path = ".".join(str(p) for p in err.absolute_path) or None
        raise ProblemValidationError(err.message, path) from err
    return DesignProblem(
        nelx=doc["nelx"],
        nely=doc["nely"],
        volfrac=doc["volfrac"],
        loads=tuple((int(d), float(v)) for d, v in doc["loads"]),
        fixed_dofs=np.asarray(doc["fixed_dofs"], dtype=np.int64),
        passive_solid=_passive_elements(doc, "passive_solid", doc["nelx"], doc["nely"]),
        passive_void=_passive_elements(doc, "passive_void", doc["nelx"], doc["nely"]),
        nu=float(doc.get("nu", 0.3)),
    )


def problem_from_json(text: str) -> DesignProblem:
    return problem_from_dict(json.loads(text))


def problem_to_json(problem: DesignProblem) -> str:
    return json.dumps(problem.to_json_dict(), indent=2)


# ---------------------------------------------------------------------------
# Stock problems
# ---------------------------------------------------------------------------


def mbb_beam(nelx: int = 60, nely: int = 20, volfrac: float = 0.5,
             nu: float = 0.3) -> DesignProblem:
    """Half MBB beam: symmetry plane on the left, roller at bottom-right."""
    nely1 = nely + 1
    fixed = [2 * r for r in range(nely1)]                 # ux = 0 on left edge
    fixed.append(2 * (nelx * nely1 + nely) + 1)           # uy = 0 bottom-right
    load_dof = 1                                          # uy of top-left node
    return DesignProblem(nelx=nelx, nely=nely, volfrac=volfrac,
                         loads=((load_dof, -1.0),),
                         fixed_dofs=np.array(fixed), nu=nu)


def cantilever(nelx: int = 60, nely: int = 40, volfrac: float = 0.4,
               load_row: int | None = None, nu: float = 0.3) -> DesignProblem:
    """Left edge clamped, unit downward load on the right edge."""
    nely1 = nely + 1
    fixed = []
    for r in range(nely1):
        fixed += [2 * r, 2 * r + 1]
    if load_row is None:
        load_row = nely // 2
    n = nelx * nely1 + load_row
    return DesignProblem(nelx=nelx, nely=nely, volfrac=volfrac,
                         loads=((2 * n + 1, 1.0),),
                         fixed_dofs=np.array(fixed), nu=nu)


def l_bracket(n: int = 75, cutout: float = 0.6, volfrac: float = 0.2,
              nu: float = 0.3) -> DesignProblem:
    """L-bracket on an n-by-n mesh with the top-right block forced void.

    The cutout square spans ``cutout * n`` elements per side.  The top edge
    of the left limb is clamped; a unit downward load acts where the cutout
    meets the right edge.
    """
    cut = int(round(cutout * n))
    limb = n - cut
    nely1 = n + 1
    rows = np.arange(0, cut)
    cols = np.arange(limb, n)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    passive_void = (rr * n + cc).ravel()
    fixed = []
    for c in range(0, limb + 1):                          # top edge of left limb
        node = c * nely1 + 0
        fixed += [2 * node, 2 * node + 1]
    load_node = n * nely1 + cut                           # right edge, cutout corner
    return DesignProblem(nelx=n, nely=n, volfrac=volfrac,
                         loads=((2 * load_node + 1, 1.0),),
                         fixed_dofs=np.array(fixed),
                         passive_void=passive_void, nu=nu)
