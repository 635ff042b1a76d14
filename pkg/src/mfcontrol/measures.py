"""Empirical measures on state-control space and measure-derivative kernels.

Laws of the state/control pair are always represented as uniform atomic
measures on a finite particle cloud.  Derivatives of coefficients with
respect to a measure argument enter the adjoint source and the control
gradient only through particle averages of kernel functions
``kernel(carrier point)(evaluation point)``, contracted against values of
the adjoint field at the carrier points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class EmpiricalMeasure:
    """Uniform atomic measure on N pairs (x, a) in R^d x R^k."""

    x: np.ndarray  # (N, d)
    a: np.ndarray  # (N, k)

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if self.x.shape[0] != self.a.shape[0]:
            raise ValueError("state and control atoms must have equal counts")
        if self.x.shape[0] < 1:
            raise ValueError("empirical measure needs at least one atom")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def mean_x(self) -> np.ndarray:
        return self.x.mean(axis=0)

    @property
    def mean_a(self) -> np.ndarray:
        return self.a.mean(axis=0)

    def expect(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        """Arithmetic mean of fn(x, a) over the atoms."""
        return np.asarray(fn(self.x, self.a)).mean(axis=0)

    def strided(self, max_atoms: Optional[int]) -> "EmpiricalMeasure":
        """Deterministic uniform subsample (every ceil(N/max_atoms)-th atom)."""
        if max_atoms is None or self.size <= max_atoms:
            return self
        step = int(np.ceil(self.size / max_atoms))
        return EmpiricalMeasure(self.x[::step], self.a[::step])


@dataclass
class MeasureKernel:
    """Kernel representation of a measure derivative (L-derivative).

    The kernel value at (carrier, evaluation) has shape ``out_shape``; the
    leading axis of ``out_shape`` indexes the coefficient component at the
    carrier, trailing axes index derivative directions at the evaluation
    point.  Exactly one of the three representations is populated:

    * ``const``       -- kernel independent of carrier and evaluation point;
    * ``carrier_fn``  -- depends on the carrier only,
      signature ``(t, cx, ca, measure) -> (L, *out_shape)``;
    * ``pair_fn``     -- full dependence, signature
      ``(t, cx, ca, ex, ea, measure) -> (P, L, *out_shape)`` with carrier
      arrays broadcast as ``(1, L, .)`` and evaluation arrays ``(P, 1, .)``.

    A kernel with no representation is identically zero.
    """

    out_shape: tuple
    const: Optional[np.ndarray] = None
    carrier_fn: Optional[Callable] = None
    pair_fn: Optional[Callable] = None
    eval_chunk: int = 256

    @classmethod
    def zero(cls, out_shape: tuple) -> "MeasureKernel":
        return cls(out_shape=tuple(out_shape))

    @classmethod
    def constant(cls, value) -> "MeasureKernel":
        arr = np.asarray(value, dtype=float)
        return cls(out_shape=arr.shape, const=arr)

    @property
    def is_zero(self) -> bool:
        return self.const is None and self.carrier_fn is None and self.pair_fn is None

    def mean_contract(
        self,
        t: float,
        measure: EmpiricalMeasure,
        eval_x: np.ndarray,
        eval_a: Optional[np.ndarray],
        weights: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Particle average of the kernel, contracted against carrier weights.

        With ``weights`` of shape (L, *out_shape[:r]) the leading r axes of
        the kernel are contracted against the weights before averaging over
        carriers; the result has shape (P, *out_shape[r:]).  Without weights
        the plain carrier average (P, *out_shape) is returned.
        """
        P = eval_x.shape[0]
        L = measure.size
        if self.is_zero:
            tail = self.out_shape if weights is None else self.out_shape[weights.ndim - 1 :]
            return np.zeros((P,) + tail)

        if self.const is not None:
            if weights is None:
                return np.broadcast_to(self.const, (P,) + self.out_shape).copy()
            contracted = np.tensordot(weights.mean(axis=0), self.const, axes=weights.ndim - 1)
            return np.broadcast_to(contracted, (P,) + contracted.shape).copy()

        if self.carrier_fn is not None:
            K = np.asarray(self.carrier_fn(t, measure.x, measure.a, measure))
            K = np.broadcast_to(K, (L,) + self.out_shape)
            if weights is None:
                avg = K.mean(axis=0)
            else:
                avg = _contract_carrier(K, weights)
            return np.broadcast_to(avg, (P,) + avg.shape).copy()

        out = None
        for lo in range(0, P, self.eval_chunk):
            hi = min(lo + self.eval_chunk, P)
            ex = eval_x[lo:hi, None, :]
            ea = None if eval_a is None else eval_a[lo:hi, None, :]
            K = np.asarray(self.pair_fn(t, measure.x[None], measure.a[None], ex, ea, measure))
            K = np.broadcast_to(K, (hi - lo, L) + self.out_shape)
            if weights is None:
                chunk = K.mean(axis=1)
            else:
                chunk = _contract_pair(K, weights)
            if out is None:
                out = np.empty((P,) + chunk.shape[1:])
            out[lo:hi] = chunk
        return out


def _contract_carrier(K: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """mean_l sum over leading kernel axes of weights[l] * K[l]."""
    naxes = weights.ndim - 1
    letters = "ijk"[:naxes]
    rest = "mn"[: K.ndim - 1 - naxes]
    expr = f"l{letters},l{letters}{rest}->{rest}"
    return np.einsum(expr, weights, K) / K.shape[0]


def _contract_pair(K: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """mean_l sum over leading kernel axes of weights[l] * K[p, l]."""
    naxes = weights.ndim - 1
    letters = "ijk"[:naxes]
    rest = "mn"[: K.ndim - 2 - naxes]
    expr = f"l{letters},pl{letters}{rest}->p{rest}"
    return np.einsum(expr, weights, K) / K.shape[1]
