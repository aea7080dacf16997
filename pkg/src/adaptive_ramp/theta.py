"""Parameter vector shared by the observer and the controller."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ThetaEstimate:
    """Estimate of the unknown parameters ``(P, v*_i for i not in R, r)``.

    ``v_hat_uncontrolled`` is ordered like ``FreewayParams.uncontrolled``.
    """

    P_hat: np.ndarray
    v_hat_uncontrolled: np.ndarray
    r_hat: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.P_hat, self.v_hat_uncontrolled, self.r_hat])

    def distance(self, other: "ThetaEstimate") -> float:
        """Largest componentwise deviation."""
        diff = self.as_vector() - other.as_vector()
        return float(np.max(np.abs(diff))) if diff.size else 0.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ThetaEstimate):
            return NotImplemented
        return np.array_equal(self.as_vector(), other.as_vector())

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ThetaBox:
    """The compact parameter box ``[0, 1-eps]^(n-1) x prod [0, v_max_i] x [eps, 1-eps]^n``."""

    n: int
    epsilon: float
    v_max_uncontrolled: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([
            np.zeros(self.n - 1),
            np.zeros(self.v_max_uncontrolled.size),
            np.full(self.n, self.epsilon),
        ])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([
            np.full(self.n - 1, 1.0 - self.epsilon),
            self.v_max_uncontrolled,
            np.full(self.n, 1.0 - self.epsilon),
        ])

    def contains(self, theta: ThetaEstimate) -> bool:
        vec = theta.as_vector()
        return bool(np.all(vec >= self.lower) and np.all(vec <= self.upper))

    def center(self) -> ThetaEstimate:
        return self.from_vector(0.5 * (self.lower + self.upper))

    def sample(self, rng: np.random.Generator) -> ThetaEstimate:
        return self.from_vector(rng.uniform(self.lower, self.upper))

    def from_vector(self, vec) -> ThetaEstimate:
        vec = np.asarray(vec, dtype=float)
        k = self.n - 1
        m = self.v_max_uncontrolled.size
        if vec.shape != (k + m + self.n,):
            raise ValueError(f"theta vector must have {k + m + self.n} entries")
        return ThetaEstimate(vec[:k].copy(), vec[k:k + m].copy(), vec[k + m:].copy())
