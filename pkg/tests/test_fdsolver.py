"""Monotone finite-difference solver: stencils, monotonicity, convergence."""

import numpy as np
import pytest

from mfcontrol import (
    MeasureKernel,
    MfcProblem,
    PolicyField,
    SpaceTimeGrid,
    assemble_source,
    backward_sweep,
    build_operator,
    max_principle_check,
    portfolio_grid,
    portfolio_problem,
    simulate,
)
from mfcontrol.fdsolver import gauss_seidel, terminal_data


def _linear_1d_problem(
    b=0.0, sigma=np.sqrt(2.0), source=None, terminal=None, boundary=None
):
    """Scalar state, constant coefficients, no measure interaction."""

    def drift(t, x, a, eta):
        return np.full_like(x, b)

    def diffusion(t, x, a, eta):
        return np.full((x.shape[0], 1, 1), sigma)

    def zeros_d(t, x, a, eta):
        return np.zeros((x.shape[0], 1, 1))

    def dx_running(t, x, a, eta):
        if source is None:
            return np.zeros((x.shape[0], 1))
        return source(t, x)

    def dx_terminal(x, mu):
        if terminal is None:
            return np.zeros((x.shape[0], 1))
        return terminal(x)

    return MfcProblem(
        state_dim=1, control_dim=1, noise_dim=1, horizon=1.0,
        drift=drift, diffusion=diffusion,
        running_cost=lambda t, x, a, eta: np.zeros(x.shape[0]),
        terminal_cost=lambda x, mu: np.zeros(x.shape[0]),
        dx_drift=zeros_d, da_drift=zeros_d,
        dx_running=dx_running,
        da_running=lambda t, x, a, eta: np.zeros((x.shape[0], 1)),
        dx_terminal=dx_terminal,
        mu_drift=MeasureKernel.zero((1, 1)), nu_drift=MeasureKernel.zero((1, 1)),
        mu_running=MeasureKernel.zero((1,)), nu_running=MeasureKernel.zero((1,)),
        mu_terminal=MeasureKernel.zero((1,)),
        initial_sampler=lambda n, rng: rng.uniform(0.3, 0.7, (n, 1)),
        boundary_values=boundary,
    )


def _grid_1d(nodes=11, time_steps=100):
    return SpaceTimeGrid(horizon=1.0, time_steps=time_steps, lo=(0.0,), hi=(1.0,), nodes=(nodes,))


def _setup(problem, grid, N=64, seed=0):
    policy = PolicyField.zeros(grid, 1)
    ens = simulate(problem, policy, N, grid.time_steps, seed)
    return policy, ens


def test_stencil_weights_pure_diffusion():
    # sigma^2 = 2, h = 0.1: each interior row is (100, -200, 100)
    prob = _linear_1d_problem(b=0.0, sigma=np.sqrt(2.0))
    grid = _grid_1d(nodes=11)
    policy, ens = _setup(prob, grid)
    op = build_operator(prob, policy, ens, grid, 0)
    L = op.matrix.toarray()
    for k in range(1, 10):
        np.testing.assert_allclose(L[k, k - 1], 100.0, atol=1e-9)
        np.testing.assert_allclose(L[k, k + 1], 100.0, atol=1e-9)
        np.testing.assert_allclose(L[k, k], -200.0, atol=1e-9)
    assert np.all(L[0] == 0.0) and np.all(L[10] == 0.0)


def test_stencil_weights_upwind_drift():
    # b = +1 adds 1/h to the forward neighbour only
    prob = _linear_1d_problem(b=1.0, sigma=np.sqrt(2.0))
    grid = _grid_1d(nodes=11)
    policy, ens = _setup(prob, grid)
    L = build_operator(prob, policy, ens, grid, 0).matrix.toarray()
    np.testing.assert_allclose(L[5, 6], 110.0, atol=1e-9)
    np.testing.assert_allclose(L[5, 4], 100.0, atol=1e-9)
    np.testing.assert_allclose(L[5, 5], -210.0, atol=1e-9)


def test_stencil_nonnegative_off_diagonal_on_models():
    for prob, grid in [(portfolio_problem(), portfolio_grid())]:
        policy, ens = _setup(prob, grid, N=256)
        for j in (0, 25, 49):
            op = build_operator(prob, policy, ens, grid, j)
            L = op.matrix.tocoo()
            off = L.data[L.row != L.col]
            assert np.all(off >= 0.0)
            sys_ = op.system.tocoo()
            off_sys = sys_.data[sys_.row != sys_.col]
            assert np.all(off_sys <= 0.0)  # M-matrix sign pattern


def test_off_diagonal_diffusion_rejected():
    def skew_diffusion(t, x, a, eta):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 0] = 1.0
        out[:, 1, 1] = 1.0
        return out

    prob = portfolio_problem()
    prob.diffusion = skew_diffusion
    prob.noise_dim = 2
    grid = portfolio_grid()
    policy = PolicyField.zeros(grid, 1)
    ens = simulate(portfolio_problem(), policy, 32, grid.time_steps, 0)
    with pytest.raises(ValueError, match="off-diagonal"):
        build_operator(prob, policy, ens, grid, 0)


def test_m_matrix_inverse_nonnegativity():
    prob = portfolio_problem()
    grid = portfolio_grid()
    policy, ens = _setup(prob, grid, N=256)
    op = build_operator(prob, policy, ens, grid, 10)
    rng = np.random.default_rng(0)
    for _ in range(10):
        rhs = rng.uniform(0.0, 1.0, (grid.num_nodes, 1))
        rhs[op.boundary] = 0.0
        sol = op.solve(rhs)
        assert sol.min() >= -1e-12


def test_gauss_seidel_matches_direct_solve():
    prob = _linear_1d_problem()
    grid = _grid_1d(nodes=21)
    policy, ens = _setup(prob, grid)
    op = build_operator(prob, policy, ens, grid, 0)
    rng = np.random.default_rng(1)
    rhs = rng.standard_normal((grid.num_nodes, 1))
    direct = op.solve(rhs)
    iterative = gauss_seidel(op.system, rhs)
    np.testing.assert_allclose(iterative, direct, atol=1e-8)


def test_zero_source_sweep_obeys_maximum_principle():
    terminal = lambda x: np.sin(3.0 * x) + 0.2 * np.cos(9.0 * x)
    prob = _linear_1d_problem(b=0.7, sigma=0.5, terminal=terminal)
    grid = _grid_1d(nodes=41, time_steps=50)
    policy, ens = _setup(prob, grid)
    adj = backward_sweep(prob, policy, ens, grid)
    data = terminal(grid.node_coords())
    lo, hi = data.min(), data.max()
    mins, maxs = max_principle_check(adj.u)
    assert mins.min() >= lo - 1e-10
    assert maxs.max() <= hi + 1e-10


def test_manufactured_solution_convergence_order():
    # exact solution u(t, x) = exp(k (T - t)) sin(pi x) of
    # u_t + (sigma^2 / 2) u_xx = -s with s = (k + sigma^2 pi^2 / 2) u
    k, sigma = 0.5, 0.6
    rate = k + 0.5 * sigma**2 * np.pi**2

    def exact(t, x):
        return np.exp(k * (1.0 - t)) * np.sin(np.pi * x)

    errors = []
    for nodes, steps in [(41, 100), (81, 200), (161, 400)]:
        prob = _linear_1d_problem(
            b=0.0,
            sigma=sigma,
            source=lambda t, x: rate * exact(t, x),
            terminal=lambda x: exact(1.0, x),
        )
        grid = _grid_1d(nodes=nodes, time_steps=steps)
        policy, ens = _setup(prob, grid)
        adj = backward_sweep(prob, policy, ens, grid)
        u0 = adj.u.slice_flat(0)[:, 0]
        errors.append(np.abs(u0 - exact(0.0, grid.node_coords())[:, 0]).max())
    order1 = np.log2(errors[0] / errors[1])
    order2 = np.log2(errors[1] / errors[2])
    assert min(order1, order2) >= 0.9, errors


def test_affine_data_transported_exactly_with_boundary_override():
    # for constant drift, zero source and affine terminal data the exact
    # solution stays affine and both difference stencils are exact on it
    b, sigma, c, e = 0.8, 0.4, 1.5, -0.3

    def exact(t, x):
        return c * (x + b * (1.0 - t)) + e

    prob = _linear_1d_problem(
        b=b, sigma=sigma,
        terminal=lambda x: exact(1.0, x),
        boundary=lambda t, xb, mu: exact(t, xb),
    )
    grid = _grid_1d(nodes=26, time_steps=40)
    policy, ens = _setup(prob, grid)
    adj = backward_sweep(prob, policy, ens, grid)
    for j in (0, 20, 40):
        t = grid.times[j]
        np.testing.assert_allclose(
            adj.u.slice_flat(j), exact(t, grid.node_coords()), atol=1e-9
        )


def test_portfolio_source_and_terminal_data():
    prob = portfolio_problem()
    grid = portfolio_grid()
    rng = np.random.default_rng(2)
    vals = rng.standard_normal((grid.time_steps + 1,) + grid.nodes + (1,))
    policy = PolicyField(grid, vals)
    ens = simulate(prob, policy, 128, grid.time_steps, 0)
    X = grid.node_coords()
    j = 17
    U_next = rng.standard_normal((grid.num_nodes, 2))
    src = assemble_source(prob, policy, ens, U_next, grid, j)
    np.testing.assert_allclose(src[:, 0], policy.slice_flat(j)[:, 0], atol=1e-12)
    np.testing.assert_allclose(src[:, 1], 2.0 * X[:, 1], atol=1e-12)
    term = terminal_data(prob, ens, grid)
    np.testing.assert_allclose(
        term, np.stack([-X[:, 1], -X[:, 0] + X[:, 1]], axis=1), atol=1e-12
    )


def test_large_time_step_warns():
    prob = _linear_1d_problem()
    grid = SpaceTimeGrid(horizon=1.0, time_steps=1, lo=(0.0,), hi=(1.0,), nodes=(51,))
    policy, ens = _setup(prob, grid)
    with pytest.warns(UserWarning, match="time step"):
        backward_sweep(prob, policy, ens, grid)
