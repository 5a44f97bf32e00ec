"""Free energy of the phase-field gradient flow and its potential density."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

__all__ = ["DoubleWell", "FreeEnergy", "DissipationKind"]


class DissipationKind(enum.Enum):
    """Dissipation operator G: ``L2`` is G = -I (Allen--Cahn), ``HMINUS1`` is G = Laplacian (Cahn--Hilliard)."""

    L2 = "L2"
    HMINUS1 = "Hminus1"

    @classmethod
    def for_model(cls, model: str) -> "DissipationKind":
        key = model.strip().upper()
        if key == "AC":
            return cls.L2
        if key == "CH":
            return cls.HMINUS1
        raise ValueError(f"unknown model {model!r}; expected AC or CH")


@dataclass(frozen=True)
class DoubleWell:
    """E1(phi) = (1 - phi^2)^2 / (4 eps^2) and the quantities the schemes need.

    Any other potential can be plugged into :class:`FreeEnergy` by providing
    the same methods.
    """

    epsilon: float

    def density(self, phi):
        return (1.0 - phi**2) ** 2 / (4.0 * self.epsilon**2)

    def derivative(self, phi):
        return phi * (phi**2 - 1.0) / self.epsilon**2

    def second_derivative(self, phi):
        return (3.0 * phi**2 - 1.0) / self.epsilon**2

    def quotient(self, a, b):
        """(E1(a) - E1(b)) / (a - b) in closed polynomial form."""
        return (a + b) * (a**2 + b**2 - 2.0) / (4.0 * self.epsilon**2)

    def quotient_da(self, a, b):
        """Partial derivative of :meth:`quotient` in its first argument."""
        return (3.0 * a**2 + 2.0 * a * b + b**2 - 2.0) / (4.0 * self.epsilon**2)

    def shifted_density(self, phi, beta):
        return (1.0 + beta - phi**2) ** 2 / (4.0 * self.epsilon**2)

    def shifted_derivative(self, phi, beta):
        return phi * (phi**2 - 1.0 - beta) / self.epsilon**2


@dataclass(frozen=True)
class FreeEnergy:
    """gamma/2 |grad phi|^2 + E1(phi), with the stabilisation data of the relaxed schemes.

    ``beta`` shifts the well inside the quadratic operator
    L = -Laplacian + beta/eps^2; the rewrite
    ``gamma/2 <phi, L phi> + int shifted_density - energy_offset``
    reproduces the energy only for ``gamma == 1``.
    """

    gamma: float = 1.0
    epsilon: float = 0.1
    beta: float = 0.0
    c0: float = 0.0
    domain_measure: float = 1.0
    potential: object = field(default=None, compare=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.potential is None:
            object.__setattr__(self, "potential", DoubleWell(self.epsilon))

    @property
    def energy_offset(self) -> float:
        return self.domain_measure * (2.0 * self.beta + self.beta**2) / (4.0 * self.epsilon**2)

    @property
    def shift(self) -> float:
        """Zeroth-order coefficient beta/eps^2 of L."""
        return self.beta / self.epsilon**2

    def e1_density(self, phi):
        return self.potential.density(phi)

    def e1_derivative(self, phi):
        return self.potential.derivative(phi)

    def e1_second_derivative(self, phi):
        return self.potential.second_derivative(phi)

    def e1_quotient(self, a, b):
        return self.potential.quotient(a, b)

    def e1_quotient_da(self, a, b):
        return self.potential.quotient_da(a, b)

    def shifted_density(self, phi):
        return self.potential.shifted_density(phi, self.beta)

    def shifted_derivative(self, phi):
        return self.potential.shifted_derivative(phi, self.beta)

    def replace(self, **changes) -> "FreeEnergy":
        from dataclasses import replace

        if "epsilon" in changes and "potential" not in changes:
            changes["potential"] = None
        return replace(self, **changes)

