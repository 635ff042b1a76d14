"""Concrete mean-field control problems.

Two model families are provided:

* optimal portfolio liquidation with trade crowding: linear dynamics where
  the asset price drifts with the population-average trading speed, a
  quadratic (optionally plus l1) execution cost and a terminal liquidation
  value;
* consensus control of a two-dimensional stochastic Cucker-Smale model:
  position/velocity dynamics with a nonlocal velocity-alignment kernel and
  a cost penalizing velocity dispersion around the population mean.

Each factory returns an :class:`~mfcontrol.problem.MfcProblem` with all
derivative callbacks and measure kernels filled in, plus a default
space-time grid matching the model's truncated computational domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .grids import SpaceTimeGrid
from .measures import EmpiricalMeasure, MeasureKernel
from .problem import MfcProblem
from .prox import ProxSpec


# ---------------------------------------------------------------------------
# portfolio liquidation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PortfolioParams:
    """Model constants of the liquidation problem; defaults follow the
    standard benchmark configuration."""

    horizon: float = 1.0
    s0: float = 2.0
    lam: float = 0.5
    sigma: float = 0.7
    gamma: float = 0.5
    k1: float = 1.0
    k2: float = 0.0
    q_lo: float = 1.0
    q_hi: float = 2.0
    domain_lo: Tuple[float, float] = (-2.0, 0.0)
    domain_hi: Tuple[float, float] = (6.0, 4.0)


def portfolio_problem(params: PortfolioParams = PortfolioParams()) -> MfcProblem:
    """Liquidation problem with state (price S, inventory Q) and scalar
    trading speed.

    Dynamics: dS = lam * E[a] dt + sigma dW, dQ = a dt.  Cost:
    integral of a*S + Q^2 + k1*a^2 + k2*|a| minus the terminal liquidation
    value Q_T (S_T - gamma Q_T).
    """
    p = params
    sig_const = np.array([[p.sigma], [0.0]])

    def drift(t, x, a, eta):
        out = np.empty_like(x)
        out[:, 0] = p.lam * eta.mean_a[0]
        out[:, 1] = a[:, 0]
        return out

    def diffusion(t, x, a, eta):
        return np.broadcast_to(sig_const, (x.shape[0], 2, 1)).copy()

    def running_cost(t, x, a, eta):
        return a[:, 0] * x[:, 0] + x[:, 1] ** 2 + p.k1 * a[:, 0] ** 2

    def terminal_cost(x, mu):
        return -x[:, 1] * (x[:, 0] - p.gamma * x[:, 1])

    def dx_drift(t, x, a, eta):
        return np.zeros((x.shape[0], 2, 2))

    def da_drift(t, x, a, eta):
        out = np.zeros((x.shape[0], 2, 1))
        out[:, 1, 0] = 1.0
        return out

    def dx_running(t, x, a, eta):
        return np.stack([a[:, 0], 2.0 * x[:, 1]], axis=1)

    def da_running(t, x, a, eta):
        return (x[:, 0] + 2.0 * p.k1 * a[:, 0])[:, None]

    def dx_terminal(x, mu):
        return np.stack([-x[:, 1], -x[:, 0] + 2.0 * p.gamma * x[:, 1]], axis=1)

    def initial_sampler(n, rng):
        out = np.empty((n, 2))
        out[:, 0] = p.s0
        out[:, 1] = rng.uniform(p.q_lo, p.q_hi, n)
        return out

    nonsmooth = ProxSpec.l1(p.k2) if p.k2 > 0 else ProxSpec.none()
    return MfcProblem(
        state_dim=2,
        control_dim=1,
        noise_dim=1,
        horizon=p.horizon,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        dx_drift=dx_drift,
        da_drift=da_drift,
        dx_running=dx_running,
        da_running=da_running,
        dx_terminal=dx_terminal,
        mu_drift=MeasureKernel.zero((2, 2)),
        nu_drift=MeasureKernel.constant([[p.lam], [0.0]]),
        mu_running=MeasureKernel.zero((2,)),
        nu_running=MeasureKernel.zero((1,)),
        mu_terminal=MeasureKernel.zero((2,)),
        initial_sampler=initial_sampler,
        nonsmooth_cost=nonsmooth,
        name="portfolio",
    )


def portfolio_grid(
    params: PortfolioParams = PortfolioParams(),
    cells: int = 50,
    time_steps: int = 50,
) -> SpaceTimeGrid:
    """Default grid: `cells` uniform cells per dimension on the truncated box."""
    return SpaceTimeGrid(
        horizon=params.horizon,
        time_steps=time_steps,
        lo=params.domain_lo,
        hi=params.domain_hi,
        nodes=(cells + 1, cells + 1),
    )


# ---------------------------------------------------------------------------
# two-dimensional Cucker-Smale consensus control
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CuckerSmaleParams:
    """Constants of the 2D (position, velocity) Cucker-Smale control problem."""

    horizon: float = 1.0
    K: float = 1.0
    beta: float = 0.0
    sigma: float = 0.1
    gamma1: float = 0.1
    gamma2: float = 0.0
    mix_means: Tuple[Tuple[float, float], Tuple[float, float]] = (
        (1.2, 1.8),
        (1.8, 1.2),
    )
    mix_std: float = 0.1
    domain_lo: Tuple[float, float] = (0.0, 0.0)
    domain_hi: Tuple[float, float] = (5.0, 4.0)
    # cap on the number of measure atoms entering pairwise alignment sums;
    # atoms are subsampled with a deterministic stride
    kernel_subsample: Optional[int] = None


def _inv_pow(base: np.ndarray, beta: float, consume: bool = False) -> np.ndarray:
    """base**(-beta) with an in-place squaring fast path for integer beta.

    With consume=True the input buffer may be overwritten, avoiding large
    temporaries on the hot pairwise-interaction path.
    """
    if beta == 0:
        return np.ones_like(base)
    if float(beta).is_integer() and 0 < beta <= 64:
        e = int(beta)
        fac = np.divide(1.0, base, out=base if consume else None)
        acc = None
        while True:
            if e & 1:
                if acc is None:
                    acc = fac if e == 1 else fac.copy()
                else:
                    acc *= fac
            e >>= 1
            if e == 0:
                return acc
            fac *= fac
    return base ** (-beta)


def cs2d_problem(params: CuckerSmaleParams = CuckerSmaleParams()) -> MfcProblem:
    """Cucker-Smale model with state (x, v), scalar control acting on v.

    Dynamics: dx = v dt, dv = (E[kappa(x, v, x', v')] + a) dt + sigma dW with
    alignment kernel kappa = K (v' - v) / (1 + (x - x')^2)^beta.  Cost:
    integral of (v - E[v])^2 + gamma1 a^2 + gamma2 |a| plus terminal
    (v_T - E[v_T])^2.
    """
    p = params
    sig_const = np.array([[0.0], [p.sigma]])

    def _align(x, v, eta):
        """E[kappa] at points (x, v); pairwise sum unless beta == 0."""
        etas = eta.strided(p.kernel_subsample)
        if p.beta == 0:
            return p.K * (etas.x[:, 1].mean() - v)
        L = etas.size
        dx = x[:, None] - etas.x[None, :, 0]
        np.multiply(dx, dx, out=dx)
        dx += 1.0
        w = _inv_pow(dx, p.beta, consume=True)
        dv = etas.x[None, :, 1] - v[:, None]
        return (p.K / L) * np.einsum("pl,pl->p", w, dv)

    def drift(t, x, a, eta):
        out = np.empty_like(x)
        out[:, 0] = x[:, 1]
        out[:, 1] = _align(x[:, 0], x[:, 1], eta) + a[:, 0]
        return out

    def diffusion(t, x, a, eta):
        return np.broadcast_to(sig_const, (x.shape[0], 2, 1)).copy()

    def running_cost(t, x, a, eta):
        vbar = eta.x[:, 1].mean()
        return (x[:, 1] - vbar) ** 2 + p.gamma1 * a[:, 0] ** 2

    def terminal_cost(x, mu):
        vbar = mu.x[:, 1].mean()
        return (x[:, 1] - vbar) ** 2

    def dx_drift(t, x, a, eta):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 1] = 1.0
        etas = eta.strided(p.kernel_subsample)
        if p.beta == 0:
            out[:, 1, 1] = -p.K
            return out
        L = etas.size
        dx = x[:, None, 0] - etas.x[None, :, 0]
        dist2 = 1.0 + dx * dx
        # (1 + dx^2)^(-beta-1); multiplying back by dist2 recovers the weight
        wp = _inv_pow(dist2, p.beta + 1.0)
        dv = etas.x[None, :, 1] - x[:, None, 1]
        out[:, 1, 0] = (-2.0 * p.beta * p.K / L) * np.einsum(
            "pl,pl,pl->p", dv, dx, wp
        )
        out[:, 1, 1] = (-p.K / L) * np.einsum("pl,pl->p", wp, dist2)
        return out

    def da_drift(t, x, a, eta):
        out = np.zeros((x.shape[0], 2, 1))
        out[:, 1, 0] = 1.0
        return out

    def dx_running(t, x, a, eta):
        vbar = eta.x[:, 1].mean()
        out = np.zeros_like(x)
        out[:, 1] = 2.0 * (x[:, 1] - vbar)
        return out

    def da_running(t, x, a, eta):
        return 2.0 * p.gamma1 * a

    def dx_terminal(x, mu):
        vbar = mu.x[:, 1].mean()
        out = np.zeros_like(x)
        out[:, 1] = 2.0 * (x[:, 1] - vbar)
        return out

    # measure derivative of the alignment term in the v-drift: the kernel
    # value at (carrier c, evaluation y) is the gradient of
    # kappa(c_x, c_v, y_x, y_v) in the evaluation point
    if p.beta == 0:
        mu_drift = MeasureKernel.constant([[0.0, 0.0], [0.0, p.K]])
    else:

        def mu_drift_pair(t, cx, ca, ex, ea, measure):
            P, L = ex.shape[0], cx.shape[1]
            dx = cx[:, :, 0] - ex[:, :, 0]
            dist2 = 1.0 + dx * dx
            w = _inv_pow(dist2, p.beta)
            dv = ex[:, :, 1] - cx[:, :, 1]
            out = np.zeros((P, L, 2, 2))
            out[:, :, 1, 0] = (2.0 * p.beta * p.K) * dv * dx * (w / dist2)
            out[:, :, 1, 1] = p.K * w
            return out

        mu_drift = MeasureKernel(out_shape=(2, 2), pair_fn=mu_drift_pair)

    # measure derivatives of the dispersion costs; the carrier averages
    # vanish identically but are kept so every declared derivative is exact
    def dispersion_kernel(t, cx, ca, measure):
        vbar = measure.x[:, 1].mean()
        out = np.zeros((cx.shape[0], 2))
        out[:, 1] = -2.0 * (cx[:, 1] - vbar)
        return out

    mu_running = MeasureKernel(out_shape=(2,), carrier_fn=dispersion_kernel)
    mu_terminal = MeasureKernel(out_shape=(2,), carrier_fn=dispersion_kernel)

    def initial_sampler(n, rng):
        comp = rng.random(n) < 0.5
        means = np.where(
            comp[:, None], np.array(p.mix_means[0]), np.array(p.mix_means[1])
        )
        return means + p.mix_std * rng.standard_normal((n, 2))

    nonsmooth = ProxSpec.l1(p.gamma2) if p.gamma2 > 0 else ProxSpec.none()
    return MfcProblem(
        state_dim=2,
        control_dim=1,
        noise_dim=1,
        horizon=p.horizon,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        dx_drift=dx_drift,
        da_drift=da_drift,
        dx_running=dx_running,
        da_running=da_running,
        dx_terminal=dx_terminal,
        mu_drift=mu_drift,
        nu_drift=MeasureKernel.zero((2, 1)),
        mu_running=mu_running,
        nu_running=MeasureKernel.zero((1,)),
        mu_terminal=mu_terminal,
        initial_sampler=initial_sampler,
        nonsmooth_cost=nonsmooth,
        name="cucker-smale-2d",
    )


def cs2d_grid(
    params: CuckerSmaleParams = CuckerSmaleParams(),
    cells: int = 50,
    time_steps: int = 50,
) -> SpaceTimeGrid:
    """Default grid: `cells` uniform cells per dimension on the truncated box."""
    return SpaceTimeGrid(
        horizon=params.horizon,
        time_steps=time_steps,
        lo=params.domain_lo,
        hi=params.domain_hi,
        nodes=(cells + 1, cells + 1),
    )
