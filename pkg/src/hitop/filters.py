"""Variable-radius density filtering and Heaviside projection.

The filter neighborhood of element e contains every element whose centroid
lies within ``rmin_e`` of e's centroid (receiver-centered: the radius of the
receiving element decides).  Weights decay linearly, ``H_ei = rmin_e - dist``,
so members exactly on the ball boundary carry zero weight and the self weight
is always ``rmin_e >= 1``; filtering with a uniform radius of 1 is therefore
the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import accel
from .errors import ContractError, ParameterError


@dataclass
class RminMap:
    """Per-element minimum feature size field, in element-size units."""

    values: np.ndarray  # (nely, nelx), float64

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError("rmin map must be a 2D (nely, nelx) array")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("rmin map must be finite")
        if np.any(self.values < 1.0):
            raise ParameterError("rmin below one element disables filtering "
                                 "meaninglessly; all values must be >= 1")

    @classmethod
    def uniform(cls, nely: int, nelx: int, value: float) -> "RminMap":
        return cls(np.full((nely, nelx), float(value)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def copy(self) -> "RminMap":
        return RminMap(self.values.copy())


class NeighborhoodTable:
    """CSR weight table H plus row sums; exposes apply and its transpose."""

    def __init__(self, nely: int, nelx: int, indptr, indices, weights):
        self.nely = nely
        self.nelx = nelx
        self.indptr = indptr
        self.indices = indices
        self.weights = weights
        n = nely * nelx
        self.H = sp.csr_matrix((weights, indices, indptr), shape=(n, n))
        self.row_sums = np.asarray(self.H.sum(axis=1)).ravel()

    def members(self, e: int) -> np.ndarray:
        return self.indices[self.indptr[e]:self.indptr[e + 1]]

    def member_weights(self, e: int) -> np.ndarray:
        return self.weights[self.indptr[e]:self.indptr[e + 1]]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (self.H @ x.ravel()) / self.row_sums

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        return self.H.T @ (v.ravel() / self.row_sums)


def build_neighborhoods(nely: int, nelx: int, rmin: RminMap | np.ndarray
                        ) -> NeighborhoodTable:
    values = rmin.values if isinstance(rmin, RminMap) else np.asarray(rmin)
    if values.shape != (nely, nelx):
        raise ContractError(f"rmin map shape {values.shape} does not match "
                            f"mesh ({nely}, {nelx})")
    RminMap(values)  # validate
    indptr, indices, weights = accel.filter_csr(nely, nelx, values)
    return NeighborhoodTable(nely, nelx, indptr, indices, weights)


def density_filter(x: np.ndarray, table: NeighborhoodTable) -> np.ndarray:
    """Weighted neighborhood average x -> x_tilde."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != table.nely * table.nelx:
        raise ContractError("design vector does not match the mesh")
    return table.apply(x)


def heaviside_project(x_tilde: np.ndarray, beta: float = 25.0,
                      eta: float = 0.5) -> np.ndarray:
    """Smoothed Heaviside thresholding of filtered densities."""
    if beta <= 0:
        raise ParameterError("beta must be positive")
    if not 0.0 < eta < 1.0:
        raise ParameterError("eta must lie in (0, 1)")
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (x_tilde - eta))) / denom


def heaviside_derivative(x_tilde: np.ndarray, beta: float = 25.0,
                         eta: float = 0.5) -> np.ndarray:
    """d(projected)/d(filtered), for the sensitivity chain rule."""
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return beta * (1.0 / np.cosh(beta * (x_tilde - eta)) ** 2) / denom


def chain_gradient(d_dxbar: np.ndarray, projection_derivative: np.ndarray,
                   table: NeighborhoodTable) -> np.ndarray:
    """Pull a d/d(xbar) sensitivity back to design variables x."""
    d_dxbar = np.asarray(d_dxbar).ravel()
    projection_derivative = np.asarray(projection_derivative).ravel()
    if d_dxbar.shape != projection_derivative.shape:
        raise ContractError("sensitivity and projection derivative shapes differ")
    return table.apply_transpose(d_dxbar * projection_derivative)
