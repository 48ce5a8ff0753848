"""Synthetic preference corpus: designs in, topology/mask pairs out.

A base design (a density grid) is upscaled, binarized, screened by the
region-count filter, skeletonized to a graph, screened by the connectivity
filter, and turned into a selection mask around either its longest member
(snug 3:1 ellipse over the member's endpoints) or its most complex node
(disk with radius equal to the mean incident member length).  Each survivor
is augmented into six isometry variants, and splits are assigned per base
design so no variant of a training design can leak into validation or test.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ContractError
from .filters import RminMap
from .geometry import (
    AUG_TAGS,
    CircleRegion,
    EllipseRegion,
    axis_ellipse_mask,
    circle_mask,
    ellipse_from_endpoints,
    transform_image,
    transform_point,
    transform_angle,
)
from .optimize import run_optimization
from .problems import DesignProblem
from .skeleton import BinaryTopology, SkeletonGraph, extract_graph, is_connected

log = logging.getLogger(__name__)

CRITERIA = ("longest-member", "complex-node")
DEFAULT_SPLITS = (0.70, 0.10, 0.20)
DEFAULT_MIN_REGIONS = 3
GEN_RMIN = 2.4
GEN_MAX_ITERS = 80

_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_EIGHT = np.ones((3, 3), dtype=bool)


# ---------------------------------------------------------------------------
# Region counting and ingestion
# ---------------------------------------------------------------------------


def count_distinct_regions(topology: BinaryTopology) -> int:
    """Solid components (8-connected) plus enclosed holes (4-connected).

    Void regions touching the image border are background, not regions.
    """
    solid = topology.solid
    n_solid = ndimage.label(solid, structure=_EIGHT)[1]
    void_labels, n_void = ndimage.label(~solid, structure=_FOUR)
    border = np.concatenate([void_labels[0, :], void_labels[-1, :],
                             void_labels[:, 0], void_labels[:, -1]])
    background = set(np.unique(border[border > 0]).tolist())
    return n_solid + (n_void - len(background))


def ingest_topodiff(directory) -> Iterator[tuple[str, np.ndarray]]:
    """Yield (source id, density grid in [0,1]) from .png / .npy files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ContractError(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in (".png", ".npy"))
    if not files:
        raise ContractError(f"no .png or .npy design files in {directory}")
    count = 0
    for path in files:
        try:
            if path.suffix.lower() == ".png":
                with Image.open(path) as im:
                    grid = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            else:
                grid = np.asarray(np.load(path), dtype=np.float64)
            if grid.ndim != 2:
                raise ValueError(f"expected a 2D grid, got shape {grid.shape}")
        except Exception as err:  # unreadable file: skip, keep going
            log.warning("skipping unreadable design %s: %s", path.name, err)
            continue
        if grid.min() < 0.0 or grid.max() > 1.0:
            log.warning("clamping out-of-range densities in %s", path.name)
            grid = np.clip(grid, 0.0, 1.0)
        count += 1
        yield path.stem, grid
    log.info("ingested %d designs from %s", count, directory)


# ---------------------------------------------------------------------------
# Design generation (desk-scale stand-in for the public TO corpus)
# ---------------------------------------------------------------------------

# support scenarios on an n-by-n mesh; each returns a fixed-dof list
def _edge_nodes(n, which):
    k = n + 1
    if which == "left":
        return [r for r in range(k)]
    if which == "right":
        return [n * k + r for r in range(k)]
    if which == "top":
        return [c * k for c in range(k)]
    if which == "bottom":
        return [c * k + n for c in range(k)]
    raise ValueError(which)


def _clamp(nodes):
    out = []
    for nd in nodes:
        out += [2 * nd, 2 * nd + 1]
    return out


def boundary_scenarios(n: int) -> list[tuple[str, list[int]]]:
    """Documented support scenarios used by the design generator."""
    k = n + 1
    corner_bl = n
    corner_br = n * k + n
    corner_tl = 0
    corner_tr = n * k
    return [
        ("clamp-left", _clamp(_edge_nodes(n, "left"))),
        ("clamp-right", _clamp(_edge_nodes(n, "right"))),
        ("clamp-bottom", _clamp(_edge_nodes(n, "bottom"))),
        ("clamp-top", _clamp(_edge_nodes(n, "top"))),
        ("mbb-half", [2 * nd for nd in _edge_nodes(n, "left")]
         + [2 * corner_br + 1]),
        ("pin-bottom-corners", _clamp([corner_bl]) + [2 * corner_br + 1]),
        ("pin-left-corners", _clamp([corner_tl, corner_bl])),
        ("clamp-left-lower-half", _clamp([r for r in range(k // 2, k)])),
        ("clamp-left-right", _clamp(_edge_nodes(n, "left"))
         + _clamp(_edge_nodes(n, "right"))),
        ("pin-diagonal-corners", _clamp([corner_tl, corner_br])),
    ]


def _boundary_node_ids(n: int) -> list[int]:
    k = n + 1
    ids = set()
    for which in ("left", "right", "top", "bottom"):
        ids.update(_edge_nodes(n, which))
    return sorted(ids)


def generate_corpus_designs(n: int, seed: int, mesh: int = 64,
                            rmin: float = GEN_RMIN,
                            max_iters: int = GEN_MAX_ITERS
                            ) -> Iterator[tuple[str, np.ndarray]]:
    """Yield n optimized density grids from randomized problems.

    Volume fractions are sampled from {0.30, 0.32, ..., 0.50}, supports from
    the documented scenario list, the load from a random fully-unconstrained
    boundary node, and the load direction from {0, pi/6, ..., pi}.
    Deterministic for a given seed.
    """
    if n < 1:
        raise ContractError("need n >= 1 designs")
    rng = np.random.default_rng(seed)
    scenarios = boundary_scenarios(mesh)
    volfracs = np.round(np.arange(0.30, 0.50 + 1e-9, 0.02), 2)
    angles = [i * math.pi / 6.0 for i in range(7)]
    boundary_nodes = _boundary_node_ids(mesh)

    produced = 0
    attempts = 0
    while produced < n and attempts < 3 * n:
        attempts += 1
        name, fixed = scenarios[int(rng.integers(len(scenarios)))]
        volfrac = float(volfracs[int(rng.integers(len(volfracs)))])
        fixed_set = set(fixed)
        free_nodes = [nd for nd in boundary_nodes
                      if 2 * nd not in fixed_set and 2 * nd + 1 not in fixed_set]
        node = free_nodes[int(rng.integers(len(free_nodes)))]
        theta = angles[int(rng.integers(len(angles)))]
        loads = []
        fx, fy = math.cos(theta), math.sin(theta)
        if abs(fx) > 1e-12:
            loads.append((2 * node, fx))
        if abs(fy) > 1e-12:
            loads.append((2 * node + 1, fy))
        try:
            problem = DesignProblem(nelx=mesh, nely=mesh, volfrac=volfrac,
                                    loads=tuple(loads),
                                    fixed_dofs=np.array(sorted(fixed_set)))
            state = run_optimization(problem,
                                     RminMap.uniform(mesh, mesh, rmin),
                                     max_iters=max_iters)
        except Exception as err:
            log.warning("design attempt %d (%s) failed: %s", attempts, name, err)
            continue
        grid = state.x_bar.reshape(mesh, mesh).copy()
        yield f"gen{seed}-{produced:05d}", grid
        produced += 1
    if produced < n:
        log.warning("generated only %d of %d requested designs", produced, n)


def upscale(grid: np.ndarray, factor: int = 2) -> np.ndarray:
    """Nearest-neighbor magnification; solid fraction is preserved exactly."""
    if int(factor) != factor or factor < 1:
        raise ContractError("upscale factor must be a positive integer")
    if factor == 1:
        return np.asarray(grid).copy()
    return np.kron(np.asarray(grid), np.ones((factor, factor)))


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Block-any reduction; the dual of nearest-neighbor upscaling."""
    if factor == 1:
        return mask.copy()
    h, w = mask.shape
    return mask.reshape(h // factor, factor, w // factor, factor).any(axis=(1, 3))


# ---------------------------------------------------------------------------
# Feature selection and masks
# ---------------------------------------------------------------------------


def select_longest_member(graph: SkeletonGraph) -> int:
    """Edge id with maximal path length; ties break to the lowest id."""
    if not graph.edges:
        raise ContractError("graph has no edges to select from")
    best = max(graph.edges, key=lambda e: (e.path_length, -e.id))
    return best.id


def select_most_complex_node(graph: SkeletonGraph) -> int:
    """Node id of maximal degree; ties break to the lowest id."""
    if not graph.nodes:
        raise ContractError("graph has no nodes")
    best = max(graph.nodes, key=lambda n: (graph.degree(n.id), -n.id))
    return best.id


def build_mask_longest(topology: BinaryTopology, graph: SkeletonGraph,
                       edge_id: int) -> tuple[np.ndarray, EllipseRegion]:
    """Solid pixels inside the snug 3:1 ellipse over the member's endpoints."""
    edge = graph.edges[edge_id]
    na, nb = graph.node_by_id(edge.a), graph.node_by_id(edge.b)
    pa = (float(na.row), float(na.col))
    pb = (float(nb.row), float(nb.col))
    region = ellipse_from_endpoints(pa, pb)  # raises on zero length
    mask = topology.solid & axis_ellipse_mask(topology.shape, pa, pb)
    return mask, region


def build_mask_node(topology: BinaryTopology, graph: SkeletonGraph,
                    node_id: int) -> tuple[np.ndarray, CircleRegion]:
    """Solid pixels inside the node's mean-member-length disk."""
    node = graph.node_by_id(node_id)
    incident = graph.incident_edges(node_id)
    if not incident:
        raise ContractError(f"node {node_id} has no incident members")
    radius = float(np.mean([e.path_length for e in incident]))
    center = (float(node.row), float(node.col))
    region = CircleRegion(center=center, radius=radius)
    mask = topology.solid & circle_mask(topology.shape, center, radius)
    return mask, region


# ---------------------------------------------------------------------------
# Samples, augmentation, corpus
# ---------------------------------------------------------------------------


@dataclass
class PreferenceSample:
    """One topology/selection-mask pair plus its region descriptor."""

    density: np.ndarray            # float grid in [0,1], stored scale
    mask: np.ndarray               # bool, same shape
    region: EllipseRegion | CircleRegion
    criterion: str
    source_id: str
    aug: str = "orig"
    geometry: dict = field(default_factory=dict)  # build-scale selection data

    def __post_init__(self):
        if self.density.shape != self.mask.shape:
            raise ContractError("mask dimensions must match the topology")
        solid = self.density >= 0.5
        if not self.mask.any():
            raise ContractError("selection mask is empty")
        if np.any(self.mask & ~solid):
            raise ContractError("selection mask must lie inside solid material")
        if self.criterion not in CRITERIA:
            raise ContractError(f"unknown criterion {self.criterion!r}")


def _transform_region(region, tag, shape):
    if isinstance(region, EllipseRegion):
        return EllipseRegion(
            center=transform_point(region.center, tag, shape),
            semi_major=region.semi_major,
            semi_minor=region.semi_minor,
            rotation=transform_angle(region.rotation, tag),
        )
    return CircleRegion(center=transform_point(region.center, tag, shape),
                        radius=region.radius)


def augment_pair(sample: PreferenceSample) -> list[PreferenceSample]:
    """The six isometry variants of a sample (original included).

    Non-square samples cannot rotate by 90/270 in-grid, so they produce the
    four 180/mirror variants instead, with a logged note.
    """
    h, w = sample.density.shape
    tags = AUG_TAGS
    if h != w:
        tags = ("orig", "rot180", "flipH", "flipV")
        log.info("non-square sample %s: emitting %d variants",
                 sample.source_id, len(tags))
    out = []
    build_shape = tuple(sample.geometry.get("build_shape", (h, w)))
    for tag in tags:
        geometry = dict(sample.geometry)
        if "endpoints" in geometry:
            geometry["endpoints"] = [
                list(transform_point(tuple(p), tag, build_shape))
                for p in geometry["endpoints"]]
        if "node" in geometry:
            geometry["node"] = list(transform_point(
                tuple(geometry["node"]), tag, build_shape))
        out.append(PreferenceSample(
            density=transform_image(sample.density, tag),
            mask=transform_image(sample.mask, tag),
            region=_transform_region(sample.region, tag, (h, w)),
            criterion=sample.criterion,
            source_id=sample.source_id,
            aug=tag,
            geometry=geometry,
        ))
    return out


def _scale_point(p, factor):
    return ((p[0] - (factor - 1) / 2.0) / factor,
            (p[1] - (factor - 1) / 2.0) / factor)


def _scale_region(region, factor):
    if factor == 1:
        return region
    if isinstance(region, EllipseRegion):
        return EllipseRegion(center=_scale_point(region.center, factor),
                             semi_major=region.semi_major / factor,
                             semi_minor=region.semi_minor / factor,
                             rotation=region.rotation)
    return CircleRegion(center=_scale_point(region.center, factor),
                        radius=region.radius / factor)


def make_sample(source_id: str, grid: np.ndarray, criterion: str,
                upscale_factor: int = 2, output_scale: str = "source",
                min_regions: int = DEFAULT_MIN_REGIONS,
                ) -> tuple[PreferenceSample | None, str]:
    """Run one design through the filters and mask construction.

    Returns (sample, stage) where stage names how far the design got:
    'region-filter', 'graph-error', 'disconnected', 'degenerate', or 'ok'.
    """
    big = upscale(grid, upscale_factor)
    topo = BinaryTopology.from_density(big, 0.5)
    if count_distinct_regions(topo) < min_regions:
        return None, "region-filter"
    try:
        graph = extract_graph(topo)
    except Exception as err:
        log.warning("skeletonization failed for %s: %s", source_id, err)
        return None, "graph-error"
    if not graph.nodes or not is_connected(graph):
        return None, "disconnected"
    try:
        if criterion == "longest-member":
            edge_id = select_longest_member(graph)
            mask, region = build_mask_longest(topo, graph, edge_id)
            edge = graph.edges[edge_id]
            na, nb = graph.node_by_id(edge.a), graph.node_by_id(edge.b)
            geometry = {"endpoints": [[float(na.row), float(na.col)],
                                      [float(nb.row), float(nb.col)]],
                        "path_length": edge.path_length}
        elif criterion == "complex-node":
            node_id = select_most_complex_node(graph)
            mask, region = build_mask_node(topo, graph, node_id)
            node = graph.node_by_id(node_id)
            geometry = {"node": [float(node.row), float(node.col)],
                        "radius": region.radius,
                        "degree": graph.degree(node_id)}
        else:
            raise ContractError(f"unknown criterion {criterion!r}")
    except ContractError as err:
        log.warning("mask construction failed for %s: %s", source_id, err)
        return None, "degenerate"
    if not mask.any():
        return None, "degenerate"

    geometry["build_shape"] = list(topo.shape)
    geometry["scale"] = upscale_factor
    if output_scale == "upscaled":
        density, out_mask = big, mask
        region_out = region
    elif output_scale == "source":
        density, out_mask = np.asarray(grid, dtype=np.float64), \
            downsample_mask(mask, upscale_factor)
        region_out = _scale_region(region, upscale_factor)
    else:
        raise ContractError(f"unknown output scale {output_scale!r}")
    if not out_mask.any():
        return None, "degenerate"
    sample = PreferenceSample(density=density, mask=out_mask,
                              region=region_out, criterion=criterion,
                              source_id=source_id, geometry=geometry)
    return sample, "ok"


@dataclass
class ManifestRecord:
    id: str
    aug: str
    criterion: str
    split: str
    topo_path: str
    mask_path: str
    region: dict
    geometry: dict

    def to_json_dict(self) -> dict:
        return {"id": self.id, "aug": self.aug, "criterion": self.criterion,
                "split": self.split, "topo": self.topo_path,
                "mask": self.mask_path, "region": self.region,
                "geometry": self.geometry}


@dataclass
class CorpusManifest:
    root: Path
    records: list[ManifestRecord]
    splits: tuple[float, float, float]
    seed: int
    stage_counts: dict

    def by_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def save(self):
        with open(self.root / "manifest.jsonl", "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json_dict(), sort_keys=True) + "\n")
        with open(self.root / "stage_counts.json", "w") as fh:
            json.dump({"seed": self.seed, "splits": list(self.splits),
                       "stages": self.stage_counts}, fh, indent=2,
                      sort_keys=True)

    @classmethod
    def load(cls, root) -> "CorpusManifest":
        root = Path(root)
        records = []
        with open(root / "manifest.jsonl") as fh:
            for line in fh:
                doc = json.loads(line)
                records.append(ManifestRecord(
                    id=doc["id"], aug=doc["aug"], criterion=doc["criterion"],
                    split=doc["split"], topo_path=doc["topo"],
                    mask_path=doc["mask"], region=doc["region"],
                    geometry=doc["geometry"]))
        with open(root / "stage_counts.json") as fh:
            meta = json.load(fh)
        return cls(root=root, records=records,
                   splits=tuple(meta["splits"]), seed=meta["seed"],
                   stage_counts=meta["stages"])


def _save_png(path: Path, arr: np.ndarray):
    Image.fromarray(arr).save(path)


def load_pair(manifest: CorpusManifest, record: ManifestRecord
              ) -> tuple[np.ndarray, np.ndarray]:
    """(density in [0,1], boolean mask) for one manifest record."""
    with Image.open(manifest.root / record.topo_path) as im:
        topo = np.asarray(im, dtype=np.float64) / 255.0
    with Image.open(manifest.root / record.mask_path) as im:
        mask = np.asarray(im) > 127
    return topo, mask


def build_corpus(source: Iterable[tuple[str, np.ndarray]], criterion: str,
                 out_dir, seed: int = 0,
                 splits: tuple[float, float, float] = DEFAULT_SPLITS,
                 upscale_factor: int = 2, output_scale: str = "source",
                 min_regions: int = DEFAULT_MIN_REGIONS) -> CorpusManifest:
    """Filter designs, build masks, augment, split, and persist the corpus."""
    if abs(sum(splits) - 1.0) > 1e-9:
        raise ContractError("split fractions must sum to 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "images").mkdir(exist_ok=True)

    counts = {"source": 0, "region-filter": 0, "graph-error": 0,
              "disconnected": 0, "degenerate": 0, "bases": 0, "pairs": 0}
    bases: list[list[PreferenceSample]] = []
    for source_id, grid in source:
        counts["source"] += 1
        sample, stage = make_sample(source_id, grid, criterion,
                                    upscale_factor, output_scale, min_regions)
        if sample is None:
            counts[stage] += 1
            continue
        bases.append(augment_pair(sample))
    if not bases:
        raise ContractError("no designs survived the corpus filters")
    counts["bases"] = len(bases)
    counts["pairs"] = sum(len(b) for b in bases)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(bases))
    n_train = int(round(splits[0] * len(bases)))
    n_val = int(round(splits[1] * len(bases)))
    split_of = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split_of[idx] = "train"
        elif rank < n_train + n_val:
            split_of[idx] = "val"
        else:
            split_of[idx] = "test"

    records = []
    for idx, variants in enumerate(bases):
        split = split_of[idx]
        for sample in variants:
            stem = f"{sample.source_id}_{sample.aug}"
            topo_path = f"images/{stem}_topo.png"
            mask_path = f"images/{stem}_mask.png"
            _save_png(out_dir / topo_path,
                      np.round(sample.density * 255).astype(np.uint8))
            _save_png(out_dir / mask_path,
                      (sample.mask * 255).astype(np.uint8))
            records.append(ManifestRecord(
                id=sample.source_id, aug=sample.aug, criterion=criterion,
                split=split, topo_path=topo_path, mask_path=mask_path,
                region=sample.region.to_json_dict(),
                geometry=sample.geometry))
    manifest = CorpusManifest(root=out_dir, records=records, splits=splits,
                              seed=seed, stage_counts=counts)
    manifest.save()
    return manifest
