"""Abstract mean-field control problem: coefficients and their derivatives.

A problem bundles the drift b, diffusion sigma, running cost f and terminal
cost g together with every partial derivative the gradient machinery
consumes.  All callbacks are batched over a leading point axis and pure;
measure arguments are always finite :class:`~mfcontrol.measures.EmpiricalMeasure`
instances, and measure derivatives are supplied analytically as
:class:`~mfcontrol.measures.MeasureKernel` kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .measures import EmpiricalMeasure, MeasureKernel
from .prox import ProxSpec


@dataclass
class MfcProblem:
    """Coefficient functions and derivatives of a McKean-Vlasov control problem.

    Shape conventions (P = batch of points, L = measure atoms):
      drift(t, x(P,d), a(P,k), eta) -> (P,d)
      diffusion(t, x, a, eta) -> (P,d,n)
      running_cost(t, x, a, eta) -> (P,)
      terminal_cost(x, mu) -> (P,)
      dx_drift -> (P,d,d) with [p,i,l] = d b_i / d x_l;  da_drift -> (P,d,k)
      dx_running -> (P,d);  da_running -> (P,k);  dx_terminal -> (P,d)
    Measure kernels follow the carrier/evaluation convention of MeasureKernel
    with out_shape (d,d) for mu_drift, (d,k) for nu_drift, (d,) for
    mu_running / mu_terminal and (k,) for nu_running.
    """

    state_dim: int
    control_dim: int
    noise_dim: int
    horizon: float
    drift: Callable
    diffusion: Callable
    running_cost: Callable
    terminal_cost: Callable
    dx_drift: Callable
    da_drift: Callable
    dx_running: Callable
    da_running: Callable
    dx_terminal: Callable
    mu_drift: MeasureKernel
    nu_drift: MeasureKernel
    mu_running: MeasureKernel
    nu_running: MeasureKernel
    mu_terminal: MeasureKernel
    initial_sampler: Callable[[int, np.random.Generator], np.ndarray]
    nonsmooth_cost: ProxSpec = field(default_factory=ProxSpec.none)
    diffusion_state_dependent: bool = False
    # required only when diffusion_state_dependent is true
    dx_diffusion: Optional[Callable] = None  # (P,d,n,d): d sigma_{ir} / d x_l
    da_diffusion: Optional[Callable] = None  # (P,d,n,k)
    mu_diffusion: Optional[MeasureKernel] = None  # out_shape (d,n,d)
    nu_diffusion: Optional[MeasureKernel] = None  # out_shape (d,n,k)
    # Dirichlet data override for the truncated PDE domain; default is the
    # terminal condition held fixed in time.
    boundary_values: Optional[Callable] = None  # (t, x(P,d), mu_T) -> (P,d)
    name: str = "problem"

    def __post_init__(self) -> None:
        for attr in ("state_dim", "control_dim", "noise_dim"):
            if getattr(self, attr) < 1:
                raise ValueError(f"{attr} must be a positive integer")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.diffusion_state_dependent and self.dx_diffusion is None:
            raise ValueError(
                "state-dependent diffusion requires the sigma derivative callbacks"
            )


@dataclass
class DerivativeReport:
    """Worst-case relative errors of the pointwise derivatives, per callback."""

    max_rel_error: Dict[str, float]
    flagged: Dict[str, float]
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.flagged


def _central_diff(fn, arg, i, step):
    hi = arg.copy()
    lo = arg.copy()
    hi[:, i] += step
    lo[:, i] -= step
    return (np.asarray(fn(hi)) - np.asarray(fn(lo))) / (2.0 * step)


def validate_derivatives(
    problem: MfcProblem,
    samples: int = 100,
    step: float = 1e-5,
    seed: int = 0,
    tolerance: float = 1e-4,
) -> DerivativeReport:
    """Check every declared pointwise derivative against central differences.

    Random points (t, x, a) are drawn around the initial law; the measure
    argument is held fixed while x or a is perturbed, so only pointwise
    derivatives are exercised.  Returns the worst relative error per
    derivative and flags any exceeding `tolerance`.
    """
    if not 0 < step <= 1e-3:
        raise ValueError("finite-difference step must lie in (0, 1e-3]")
    rng = np.random.Generator(np.random.Philox(seed))
    d, k = problem.state_dim, problem.control_dim

    xs = problem.initial_sampler(samples, rng) + 0.5 * rng.standard_normal((samples, d))
    aa = rng.standard_normal((samples, k))
    ts = rng.uniform(0.0, problem.horizon, samples)
    meas = EmpiricalMeasure(
        problem.initial_sampler(64, rng), rng.standard_normal((64, k))
    )

    def _check(name, base, deriv, wrt):
        worst = 0.0
        for t in np.unique(ts)[:4]:
            x0, a0 = xs.copy(), aa.copy()

            def base_at(arg):
                if wrt == "x":
                    return base(t, arg, a0, meas)
                return base(t, x0, arg, meas)

            D = np.asarray(deriv(t, x0, a0, meas))
            if not np.all(np.isfinite(D)):
                raise ValueError(f"non-finite value from {name} at t={t}")
            arg = x0 if wrt == "x" else a0
            for i in range(arg.shape[1]):
                fd = _central_diff(base_at, arg, i, step)
                if not np.all(np.isfinite(fd)):
                    raise ValueError(f"non-finite value from base of {name} at t={t}")
                exact = D[..., i] if D.ndim == fd.ndim + 1 else D[:, i]
                rel = np.abs(exact - fd) / (1.0 + np.abs(exact))
                worst = max(worst, float(rel.max()))
        return worst

    errors: Dict[str, float] = {}
    errors["dx_drift"] = _check("dx_drift", problem.drift, problem.dx_drift, "x")
    errors["da_drift"] = _check("da_drift", problem.drift, problem.da_drift, "a")
    errors["dx_running"] = _check("dx_running", problem.running_cost, problem.dx_running, "x")
    errors["da_running"] = _check("da_running", problem.running_cost, problem.da_running, "a")

    # terminal cost has no (t, a) arguments
    def g_base(t, x, a, m):
        return problem.terminal_cost(x, m)

    def g_deriv(t, x, a, m):
        return problem.dx_terminal(x, m)

    errors["dx_terminal"] = _check("dx_terminal", g_base, g_deriv, "x")

    if problem.dx_diffusion is not None:
        errors["dx_diffusion"] = _check(
            "dx_diffusion", problem.diffusion, problem.dx_diffusion, "x"
        )
    if problem.da_diffusion is not None:
        errors["da_diffusion"] = _check(
            "da_diffusion", problem.diffusion, problem.da_diffusion, "a"
        )

    flagged = {name: err for name, err in errors.items() if err > tolerance}
    return DerivativeReport(max_rel_error=errors, flagged=flagged, tolerance=tolerance)


def check_diffusion_constant(problem: MfcProblem, samples: int = 16, seed: int = 1) -> bool:
    """Spot-check that sigma ignores (x, a, eta) when declared state-independent."""
    rng = np.random.Generator(np.random.Philox(seed))
    d, k = problem.state_dim, problem.control_dim
    meas = EmpiricalMeasure(rng.standard_normal((8, d)), rng.standard_normal((8, k)))
    t = 0.5 * problem.horizon
    ref = problem.diffusion(t, np.zeros((1, d)), np.zeros((1, k)), meas)
    for _ in range(samples):
        x = rng.standard_normal((1, d)) * 3.0
        a = rng.standard_normal((1, k)) * 3.0
        m2 = EmpiricalMeasure(rng.standard_normal((5, d)), rng.standard_normal((5, k)))
        if not np.allclose(problem.diffusion(t, x, a, m2), ref, atol=1e-12):
            return False
    return True
