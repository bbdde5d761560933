"""
Shared physical constants and ion species for ionsplit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import constants as sc

# Ion masses in atomic mass units
ION_MASSES_U = {
    "40Ca+": 39.9626,
    "9Be+": 9.0122,
}

DEFAULT_SPECIES = "40Ca+"

# Heating-law frequency convention: omega expressed in units of 2*pi*MHz
HEATING_OMEGA_UNIT = 2.0 * math.pi * 1e6

ZEPTONEWTON = 1e-21


@dataclass(frozen=True)
class PhysicalConstants:
    """
    Constants entering the axial two-ion model.

    Attributes:
        elementary_charge: Ion charge q [C]
        ion_mass: Ion mass m [kg]
        reduced_planck: hbar [J s]
        vacuum_permittivity: epsilon_0 [F/m]
        species: Species label the mass was taken from
    """

    elementary_charge: float = sc.e
    ion_mass: float = ION_MASSES_U[DEFAULT_SPECIES] * sc.atomic_mass
    reduced_planck: float = sc.hbar
    vacuum_permittivity: float = sc.epsilon_0
    species: str = DEFAULT_SPECIES

    def __post_init__(self) -> None:
        for name in ("elementary_charge", "ion_mass", "reduced_planck", "vacuum_permittivity"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value!r}")

    @property
    def coulomb_factor(self) -> float:
        """kappa = q / (4 pi epsilon_0) [V m]."""
        return self.elementary_charge / (4.0 * math.pi * self.vacuum_permittivity)

    @property
    def charge_to_mass(self) -> float:
        """q / m [C/kg]."""
        return self.elementary_charge / self.ion_mass

    @classmethod
    def for_species(cls, species: str = DEFAULT_SPECIES) -> "PhysicalConstants":
        """
        Build constants for a named ion species.

        Args:
            species: Key of ION_MASSES_U (e.g. "40Ca+")

        Returns:
            PhysicalConstants with the species mass
        """
        if species not in ION_MASSES_U:
            known = ", ".join(sorted(ION_MASSES_U))
            raise ValueError(f"Unknown ion species {species!r} (known: {known})")
        return cls(ion_mass=ION_MASSES_U[species] * sc.atomic_mass, species=species)

    def to_dict(self) -> dict:
        return {
            "species": self.species,
            "elementary_charge_C": self.elementary_charge,
            "ion_mass_kg": self.ion_mass,
            "reduced_planck_Js": self.reduced_planck,
            "coulomb_factor_Vm": self.coulomb_factor,
        }
