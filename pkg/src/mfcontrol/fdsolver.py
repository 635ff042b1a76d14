"""Semi-implicit monotone finite-difference solver for the adjoint PDE system.

The coupled nonlocal linear system for the adjoint decoupling field u is
discretized with implicit timestepping for the local generator (upwind
first-order terms, central second-order terms, all stencil weights
nonnegative) and explicit timestepping for the nonlocal source.  Boundary
nodes of the truncated box hold Dirichlet data (the terminal condition by
default).  Each interior step solves a sparse M-matrix system per solution
component.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grids import GridField, PolicyField, SpaceTimeGrid, multilinear_eval
from .measures import EmpiricalMeasure
from .particles import ParticleEnsemble
from .problem import MfcProblem

_SOLVE_TOL = 1e-10
_GS_MAX_SWEEPS = 10_000


@dataclass
class MonotoneOperator:
    """Monotone stencil L for one time slice: L[phi]_k = sum_q a_qk (phi_q - phi_k).

    `matrix` holds L on flattened nodes (boundary rows zero); `system` is
    I - dt*L with identity rows on the Dirichlet boundary.
    """

    grid: SpaceTimeGrid
    matrix: sp.csr_matrix
    system: sp.csr_matrix
    boundary: np.ndarray  # (num_nodes,) bool
    _lu: object = None

    def apply(self, values: np.ndarray) -> np.ndarray:
        """L applied to flattened node values (num_nodes, c)."""
        return self.matrix @ values

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Direct sparse solve of (I - dt L) u = rhs; Gauss-Seidel fallback."""
        if self._lu is None:
            try:
                self._lu = splu(self.system.tocsc())
            except RuntimeError:
                self._lu = "failed"
        if self._lu != "failed":
            sol = self._lu.solve(rhs)
        else:
            sol = gauss_seidel(self.system, rhs)
        res = np.abs(self.system @ sol - rhs).max()
        if res > _SOLVE_TOL:
            sol = gauss_seidel(self.system, rhs, x0=sol)
            res = np.abs(self.system @ sol - rhs).max()
            if res > _SOLVE_TOL:
                raise RuntimeError(
                    f"linear solve stalled at residual {res:.3e} (tol {_SOLVE_TOL:.0e})"
                )
        return sol


def gauss_seidel(A: sp.spmatrix, rhs: np.ndarray, x0=None, tol: float = _SOLVE_TOL) -> np.ndarray:
    """Plain Gauss-Seidel sweeps; converges on the M-matrix systems built here."""
    A = A.tocsr()
    n = A.shape[0]
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    diag = A.diagonal()
    indptr, indices, data = A.indptr, A.indices, A.data
    for _ in range(_GS_MAX_SWEEPS):
        for i in range(n):
            row = slice(indptr[i], indptr[i + 1])
            s = data[row] @ x[indices[row]] - diag[i] * x[i]
            x[i] = (rhs[i] - s) / diag[i]
        if np.abs(A @ x - rhs).max() <= tol:
            return x
    return x


@dataclass
class AdjointField:
    """Adjoint decoupling field u (and v = (grad_x u) sigma when materialized)."""

    u: GridField
    v: Optional[GridField] = None

    def u_at_nodes(self, j: int) -> np.ndarray:
        return self.u.slice_flat(j)

    def u_at_points(self, j: int, x: np.ndarray) -> np.ndarray:
        return self.u.eval_slice(j, x)

    def v_at_nodes(self, j: int) -> Optional[np.ndarray]:
        return None if self.v is None else self.v.slice_flat(j)

    def v_at_points(self, j: int, x: np.ndarray) -> Optional[np.ndarray]:
        return None if self.v is None else self.v.eval_slice(j, x)


def _node_drift_diffusion(problem, policy, ensemble, grid, j):
    t = j * grid.dt
    X = grid.node_coords()
    psi = policy.slice_flat(j)
    eta = ensemble.measure(j)
    b = problem.drift(t, X, psi, eta)
    sig = problem.diffusion(t, X, psi, eta)
    return t, X, psi, eta, b, sig


def build_operator(
    problem: MfcProblem,
    policy: PolicyField,
    ensemble: ParticleEnsemble,
    grid: SpaceTimeGrid,
    j: int,
) -> MonotoneOperator:
    """Assemble the monotone stencil at time slice j.

    First-order terms are discretized upwind (forward difference weighted by
    b+, backward by b-), the diagonal of sigma sigma^T centrally.  Requires
    a diagonal diffusion matrix; off-diagonal mass would produce negative
    stencil weights and is rejected.
    """
    t, X, psi, eta, b, sig = _node_drift_diffusion(problem, policy, ensemble, grid, j)
    a2 = np.einsum("pir,plr->pil", sig, sig)
    d = grid.state_dim
    offdiag = a2 - np.einsum("pi,il->pil", np.einsum("pii->pi", a2), np.eye(d))
    scale = max(np.abs(a2).max(), 1.0)
    if np.abs(offdiag).max() > 1e-12 * scale:
        p = int(np.argwhere(np.abs(offdiag) > 1e-12 * scale)[0][0])
        raise ValueError(
            f"sigma sigma^T has off-diagonal mass at node {p}; the upwind/central "
            "stencil is monotone only for diagonal diffusion"
        )
    diag = np.einsum("pii->pi", a2)

    P = grid.num_nodes
    n = np.array(grid.nodes)
    h = grid.h
    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * n[i + 1]
    idx = np.indices(grid.nodes).reshape(d, -1).T
    interior = ~grid.boundary_mask()

    rows, cols, vals = [], [], []
    node_ids = np.arange(P)
    for i in range(d):
        up = np.maximum(b[:, i], 0.0) / h[i] + 0.5 * diag[:, i] / h[i] ** 2
        dn = np.maximum(-b[:, i], 0.0) / h[i] + 0.5 * diag[:, i] / h[i] ** 2
        if np.any(up[interior] < 0) or np.any(dn[interior] < 0):
            raise ValueError(f"negative stencil weight along dimension {i}")
        mask = interior
        rows.append(node_ids[mask])
        cols.append(node_ids[mask] + strides[i])
        vals.append(up[mask])
        rows.append(node_ids[mask])
        cols.append(node_ids[mask] - strides[i])
        vals.append(dn[mask])
        rows.append(node_ids[mask])
        cols.append(node_ids[mask])
        vals.append(-(up[mask] + dn[mask]))

    L = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(P, P),
    )
    system = (sp.identity(P, format="csr") - grid.dt * L).tocsr()
    return MonotoneOperator(grid=grid, matrix=L, system=system, boundary=~interior)


def terminal_data(problem: MfcProblem, ensemble: ParticleEnsemble, grid: SpaceTimeGrid) -> np.ndarray:
    """Discretized terminal condition h of the adjoint system, (num_nodes, d)."""
    X = grid.node_coords()
    mu_T = ensemble.measure(ensemble.time_steps)
    h = np.asarray(problem.dx_terminal(X, mu_T), dtype=float)
    h = h + problem.mu_terminal.mean_contract(problem.horizon, mu_T, X, None)
    return h


def assemble_source(
    problem: MfcProblem,
    policy: PolicyField,
    ensemble: ParticleEnsemble,
    U_next: np.ndarray,
    grid: SpaceTimeGrid,
    j: int,
    kernel_subsample: Optional[int] = None,
) -> np.ndarray:
    """Explicit source slice of the fully discrete scheme, (num_nodes, d).

    Local part: (dx b)^T U + dx f at the nodes.  Nonlocal part: particle
    averages of the mu-derivative kernels, contracted against the monotone
    interpolant of U at the particle locations.  When the diffusion depends
    on the state, the extra first-order terms are added with upwind
    differences split by coefficient sign.
    """
    t, X, psi, eta, b, sig = _node_drift_diffusion(problem, policy, ensemble, grid, j)
    Jb = np.asarray(problem.dx_drift(t, X, psi, eta))
    src = np.einsum("pil,pi->pl", Jb, U_next)
    src += np.asarray(problem.dx_running(t, X, psi, eta))

    eta_k = eta.strided(kernel_subsample)
    if not problem.mu_drift.is_zero:
        w = multilinear_eval(grid, U_next.reshape(grid.nodes + (-1,)), eta_k.x)
        src += problem.mu_drift.mean_contract(t, eta_k, X, psi, weights=w)
    if not problem.mu_running.is_zero:
        src += problem.mu_running.mean_contract(t, eta_k, X, psi)

    if problem.diffusion_state_dependent:
        src += _assemble_fex(
            problem, t, X, psi, eta_k, sig, U_next, grid, deriv="x", kernel=problem.mu_diffusion
        )
    if not np.all(np.isfinite(src)):
        p = int(np.argwhere(~np.isfinite(src).all(axis=1))[0][0])
        raise FloatingPointError(f"non-finite adjoint source at slice {j}, node {p}")
    return src


def _grid_diffs(values: np.ndarray, grid: SpaceTimeGrid):
    """One-sided forward/backward differences of flattened node values per dim.

    Returns (fwd, bwd) of shape (num_nodes, c, d); at box faces the
    outward-pointing difference is zero (consistent with the constant
    extension used by the clamped interpolation).
    """
    d = grid.state_dim
    c = values.shape[-1]
    full = values.reshape(grid.nodes + (c,))
    fwd = np.zeros(grid.nodes + (c, d))
    bwd = np.zeros(grid.nodes + (c, d))
    for i in range(d):
        sl_all = [slice(None)] * d
        lo, hi = sl_all.copy(), sl_all.copy()
        lo[i], hi[i] = slice(0, -1), slice(1, None)
        diff = (full[tuple(hi)] - full[tuple(lo)]) / grid.h[i]
        fwd[tuple(lo) + (Ellipsis, i)] = diff
        bwd[tuple(hi) + (Ellipsis, i)] = diff
    return fwd.reshape(-1, c, d), bwd.reshape(-1, c, d)


def _assemble_fex(problem, t, X, psi, eta, sig, U_next, grid, deriv, kernel):
    """Extra source terms for state-dependent diffusion, upwind discretized.

    deriv='x' uses dx_diffusion (adjoint source), deriv='a' uses
    da_diffusion (gradient map); the kernel argument supplies the matching
    measure-derivative contribution.
    """
    d = grid.state_dim
    dsig_fn = problem.dx_diffusion if deriv == "x" else problem.da_diffusion
    dsig = np.asarray(dsig_fn(t, X, psi, eta))  # (P, d, n, m)
    # coefficient of d u_i / d x_l in direction m: sum_r dsig[p,i,r,m] sig[p,l,r]
    coef = np.einsum("pirm,plr->pilm", dsig, sig)
    fwd, bwd = _grid_diffs(U_next, grid)
    out = np.einsum("pilm,pil->pm", np.maximum(coef, 0.0), fwd)
    out += np.einsum("pilm,pil->pm", np.minimum(coef, 0.0), bwd)

    if kernel is not None and not kernel.is_zero:
        # v = (grad_x u) sigma at the particles, built from the centered
        # average of the two one-sided difference fields interpolated at the
        # particle locations.
        fwd_p = multilinear_eval(grid, fwd.reshape(grid.nodes + (-1,)), eta.x)
        bwd_p = multilinear_eval(grid, bwd.reshape(grid.nodes + (-1,)), eta.x)
        grad_u = 0.5 * (fwd_p + bwd_p).reshape(eta.size, -1, d)  # (L, d, d)
        sig_p = problem.diffusion(t, eta.x, eta.a, eta)  # (L, d, n)
        v_p = np.einsum("pil,plr->pir", grad_u, sig_p)  # (L, d, n)
        out += kernel.mean_contract(t, eta, X, psi, weights=v_p)
    return out


def materialize_v(problem: MfcProblem, u: GridField, policy: PolicyField, ensemble) -> GridField:
    """v = (grad_x u) sigma on the grid (central interior differences)."""
    grid = u.grid
    d, n = problem.state_dim, problem.noise_dim
    vals = np.empty((grid.time_steps + 1,) + grid.nodes + (d * n,))
    X = grid.node_coords()
    for j in range(grid.time_steps + 1):
        fwd, bwd = _grid_diffs(u.slice_flat(j), grid)
        grad = 0.5 * (fwd + bwd)  # (P, d, d)
        psi = policy.slice_flat(j)
        sig = problem.diffusion(j * grid.dt, X, psi, ensemble.measure(j))
        v = np.einsum("pil,plr->pir", grad, sig)
        vals[j] = v.reshape(grid.nodes + (d * n,))
    return GridField(grid, vals)


def backward_sweep(
    problem: MfcProblem,
    policy: PolicyField,
    ensemble: ParticleEnsemble,
    grid: SpaceTimeGrid,
    kernel_subsample: Optional[int] = None,
) -> AdjointField:
    """Solve the adjoint PDE system backward on the grid.

    Terminal slice is the discretized terminal condition; boundary nodes
    hold Dirichlet data for all times (the terminal data unless the problem
    overrides it); each interior step solves (I - dt L) U^{j-1} = U^j + dt f
    per component with a shared sparse factorization.
    """
    d = problem.state_dim
    dt, h = grid.dt, grid.h
    if dt > float(h.max()) * 4.0:
        warnings.warn(
            f"time step {dt:.3g} is large next to the mesh {h.max():.3g}; the "
            "explicit source treatment expects dt = O(h)",
            stacklevel=2,
        )
    M = grid.time_steps
    term = terminal_data(problem, ensemble, grid)
    boundary = grid.boundary_mask()
    Xb = grid.node_coords()[boundary]
    mu_T = ensemble.measure(M)

    def dirichlet(t: float) -> np.ndarray:
        if problem.boundary_values is None:
            return term[boundary]
        return np.asarray(problem.boundary_values(t, Xb, mu_T))

    U = np.empty((M + 1, grid.num_nodes, d))
    U[M] = term
    U[M][boundary] = dirichlet(M * dt)
    for j in range(M, 0, -1):
        op = build_operator(problem, policy, ensemble, grid, j - 1)
        src = assemble_source(
            problem, policy, ensemble, U[j], grid, j, kernel_subsample=kernel_subsample
        )
        rhs = U[j] + dt * src
        rhs[boundary] = dirichlet((j - 1) * dt)
        U[j - 1] = op.solve(rhs)

    u_field = GridField(grid, U.reshape((M + 1,) + grid.nodes + (d,)))
    v_field = None
    if problem.diffusion_state_dependent:
        v_field = materialize_v(problem, u_field, policy, ensemble)
    return AdjointField(u=u_field, v=v_field)
