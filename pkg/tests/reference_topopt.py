"""Self-contained reference compliance-minimization code (test oracle).

Written independently of the package: row-major node numbering, quadrature
element matrix, loop-built filter weights, and an MMA step whose dual is
solved with scipy's brentq.  Parameters mirror the production defaults
(p = 3, E0 = 1, Emin = 1e-9, beta = 25, eta = 0.5, move 0.2, asymptote
init 0.5 / expand 1.2 / contract 0.7) so trajectories are comparable.

Intentionally slow-and-simple; used only on small meshes.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq


def element_matrix(nu):
    D = np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]) / (1 - nu ** 2)
    xs = np.array([0.0, 1.0, 1.0, 0.0])
    ys = np.array([0.0, 0.0, 1.0, 1.0])
    g = 1 / np.sqrt(3)
    K = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            dNdxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            dNdeta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            J = np.array([[dNdxi @ xs, dNdxi @ ys], [dNdeta @ xs, dNdeta @ ys]])
            dN = np.linalg.inv(J) @ np.vstack([dNdxi, dNdeta])
            B = np.zeros((3, 8))
            B[0, 0::2] = dN[0]
            B[1, 1::2] = dN[1]
            B[2, 0::2] = dN[1]
            B[2, 1::2] = dN[0]
            K += B.T @ D @ B * np.linalg.det(J)
    return K


class ReferenceTopOpt:
    """Half-MBB (or custom BC) compliance minimization, 88-line style."""

    def __init__(self, nelx, nely, volfrac, rmin, nu=0.3,
                 p=3.0, e0=1.0, emin=1e-9, beta=25.0, eta=0.5):
        self.nelx, self.nely = nelx, nely
        self.volfrac = volfrac
        self.p, self.e0, self.emin = p, e0, emin
        self.beta, self.eta = beta, eta
        self.ke = element_matrix(nu)
        self.nele = nelx * nely
        # row-major node grid: node (r, c) -> r * (nelx + 1) + c
        nwide = nelx + 1
        self.edof = np.zeros((self.nele, 8), dtype=int)
        e = 0
        for r in range(nely):
            for c in range(nelx):
                bl = (r + 1) * nwide + c
                br = (r + 1) * nwide + c + 1
                tr = r * nwide + c + 1
                tl = r * nwide + c
                nodes = [bl, br, tr, tl]
                self.edof[e] = [d for nn in nodes for d in (2 * nn, 2 * nn + 1)]
                e += 1
        self.ndof = 2 * nwide * (nely + 1)
        # default: half-MBB boundary conditions
        self.fixed = sorted(
            {2 * (r * nwide) for r in range(nely + 1)}
            | {2 * (nely * nwide + nelx) + 1}
        )
        self.fvec = np.zeros(self.ndof)
        self.fvec[1] = -1.0  # uy of the top-left node
        self.free = np.setdiff1d(np.arange(self.ndof), self.fixed)
        self._build_filter(rmin)

    def _build_filter(self, rmin):
        R = int(np.floor(rmin))
        rows, cols, vals = [], [], []
        for r in range(self.nely):
            for c in range(self.nelx):
                e = r * self.nelx + c
                for dr in range(-R, R + 1):
                    for dc in range(-R, R + 1):
                        rr, cc = r + dr, c + dc
                        if not (0 <= rr < self.nely and 0 <= cc < self.nelx):
                            continue
                        dist = np.hypot(dr, dc)
                        if dist <= rmin:
                            rows.append(e)
                            cols.append(rr * self.nelx + cc)
                            vals.append(rmin - dist)
        H = sp.coo_matrix((vals, (rows, cols)),
                          shape=(self.nele, self.nele)).tocsr()
        self.H = H
        self.Hs = np.asarray(H.sum(axis=1)).ravel()

    def beta_at(self, it):
        # sharpness ramp: double every 8 iterations, saturate at self.beta
        return min(self.beta, 2.0 ** (it // 8))

    def project(self, xt, beta):
        b, h = beta, self.eta
        return (np.tanh(b * h) + np.tanh(b * (xt - h))) / (
            np.tanh(b * h) + np.tanh(b * (1 - h)))

    def project_deriv(self, xt, beta):
        b, h = beta, self.eta
        return b / np.cosh(b * (xt - h)) ** 2 / (
            np.tanh(b * h) + np.tanh(b * (1 - h)))

    def analyze(self, xbar):
        E = self.emin + xbar ** self.p * (self.e0 - self.emin)
        data, ii, jj = [], [], []
        for e in range(self.nele):
            ke = E[e] * self.ke
            dofs = self.edof[e]
            for a in range(8):
                for b in range(8):
                    ii.append(dofs[a])
                    jj.append(dofs[b])
                    data.append(ke[a, b])
        K = sp.coo_matrix((data, (ii, jj)), shape=(self.ndof, self.ndof)).tocsc()
        u = np.zeros(self.ndof)
        u[self.free] = spla.spsolve(K[self.free][:, self.free],
                                    self.fvec[self.free])
        ue = u[self.edof]
        energies = np.einsum("ei,ij,ej->e", ue, self.ke, ue)
        c = float(np.sum(E * energies))
        dc_dxbar = -self.p * xbar ** (self.p - 1) * (self.e0 - self.emin) * energies
        return c, dc_dxbar

    def mma_step(self, x, dc, g, dg, st):
        n = x.size
        move = 0.2
        if st["it"] < 2:
            low = x - 0.5
            upp = x + 0.5
        else:
            sgn = (x - st["x1"]) * (st["x1"] - st["x2"])
            fac = np.ones(n)
            fac[sgn > 0] = 1.2
            fac[sgn < 0] = 0.7
            low = x - fac * (st["x1"] - st["low"])
            upp = x + fac * (st["upp"] - st["x1"])
            low = np.clip(low, x - 10.0, x - 0.01)
            upp = np.clip(upp, x + 0.01, x + 10.0)
        alfa = np.maximum.reduce([np.zeros(n), low + 0.1 * (x - low), x - move])
        beta = np.minimum.reduce([np.ones(n), upp - 0.1 * (upp - x), x + move])
        ux, xl = upp - x, x - low
        p0 = ux ** 2 * (1.001 * np.maximum(dc, 0) + 0.001 * np.maximum(-dc, 0) + 1e-5)
        q0 = xl ** 2 * (0.001 * np.maximum(dc, 0) + 1.001 * np.maximum(-dc, 0) + 1e-5)
        p1 = ux ** 2 * np.maximum(dg, 0)
        q1 = xl ** 2 * np.maximum(-dg, 0)
        r1 = g - np.sum(p1 / ux + q1 / xl)

        def xl_of(lam):
            sp_ = np.sqrt(p0 + lam * p1)
            sq_ = np.sqrt(q0 + lam * q1)
            return np.clip((sp_ * low + sq_ * upp) / (sp_ + sq_), alfa, beta)

        def gap(lam):
            xs = xl_of(lam)
            return r1 + np.sum(p1 / (upp - xs) + q1 / (xs - low))

        if gap(0.0) <= 0:
            lam = 0.0
        else:
            hi = 1.0
            while gap(hi) > 0 and hi < 1e12:
                hi *= 2
            lam = brentq(gap, 0.0, hi, xtol=1e-14)
        xnew = xl_of(lam)
        st["x2"] = st.get("x1", x).copy()
        st["x1"] = x.copy()
        st["low"], st["upp"] = low, upp
        st["it"] += 1
        return xnew

    def run(self, iterations):
        x = np.full(self.nele, self.volfrac)
        st = {"it": 0}
        history = []
        beta = self.beta_at(0)
        for it in range(iterations):
            beta = self.beta_at(it)
            xt = np.asarray(self.H @ x).ravel() / self.Hs
            xbar = self.project(xt, beta)
            c, dc_dxbar = self.analyze(xbar)
            history.append(c)
            dp = self.project_deriv(xt, beta)
            dc = self.H.T @ (dc_dxbar * dp / self.Hs)
            g = float(xbar.sum()) / self.nele - self.volfrac
            dg = self.H.T @ (dp / self.nele / self.Hs)
            x = self.mma_step(x, dc, g, dg, st)
        xt = np.asarray(self.H @ x).ravel() / self.Hs
        xbar = self.project(xt, beta)
        c, _ = self.analyze(xbar)
        history.append(c)
        return x, xbar, history
