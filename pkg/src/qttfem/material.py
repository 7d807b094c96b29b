"""Isotropic plane elasticity material law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MaterialModel", "constitutive_matrix", "lame_constants"]


def lame_constants(youngs_modulus: float, poisson_ratio: float):
    """Lame pair (lambda, mu) from engineering constants."""
    e, nu = youngs_modulus, poisson_ratio
    lam = e * nu / ((1 + nu) * (1 - 2 * nu))
    mu = e / (2 * (1 + nu))
    return lam, mu


def constitutive_matrix(
    youngs_modulus: float, poisson_ratio: float, mode: str = "plane-stress"
) -> np.ndarray:
    """3x3 Voigt matrix relating (eps_xx, eps_yy, 2 eps_xy) to stresses."""
    e, nu = float(youngs_modulus), float(poisson_ratio)
    if e <= 0:
        raise ValueError("Young's modulus must be positive")
    if mode == "plane-stress":
        if not -1.0 < nu < 1.0:
            raise ValueError(f"Poisson ratio {nu} out of range for plane stress")
        f = e / (1 - nu * nu)
        return np.array(
            [[f, f * nu, 0.0], [f * nu, f, 0.0], [0.0, 0.0, f * (1 - nu) / 2]]
        )
    if mode == "plane-strain":
        if not -1.0 < nu < 0.5:
            raise ValueError(f"Poisson ratio {nu} out of range for plane strain")
        lam, mu = lame_constants(e, nu)
        return np.array(
            [
                [lam + 2 * mu, lam, 0.0],
                [lam, lam + 2 * mu, 0.0],
                [0.0, 0.0, mu],
            ]
        )
    raise ValueError(f"unknown mode: {mode!r}")


@dataclass(frozen=True)
class MaterialModel:
    """Material constants plus the derived constitutive matrix."""

    youngs_modulus: float
    poisson_ratio: float
    mode: str = "plane-stress"

    @property
    def C(self) -> np.ndarray:
        return constitutive_matrix(
            self.youngs_modulus, self.poisson_ratio, self.mode
        )
