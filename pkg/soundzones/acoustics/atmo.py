"""
Speed of sound from temperature / humidity / pressure readings.

The mapping is Cramér's polynomial in temperature, water-vapour mole fraction,
pressure and CO2 mole fraction. The vapour mole fraction comes from relative
humidity through the Davis saturation-vapour-pressure and enhancement-factor
formulas.
"""
from dataclasses import dataclass
import math

from ..utils import InvalidInput


STANDARD_PRESSURE_KPA = 101.325
CO2_MOLE_FRACTION = 0.0004
TEMPERATURE_RANGE_C = (-30.0, 60.0)

# Cramér coefficients, t in °C, p in Pa, mole fractions dimensionless.
_A = (
    331.5024,
    0.603055,
    -0.000528,
    51.471935,
    0.1495874,
    -0.000782,
    -1.82e-7,
    3.73e-8,
    -2.93e-10,
    -85.20931,
    -0.228525,
    5.91e-5,
    -2.835149,
    -2.15e-13,
    29.179762,
    0.000486,
)


class OutOfRange(InvalidInput):
    pass


class NonPositiveSpeed(InvalidInput):
    pass


@dataclass(frozen=True)
class AtmoState:
    temperature_c: float
    relative_humidity_pct: float = 0.0
    pressure_kpa: float = STANDARD_PRESSURE_KPA

    def __post_init__(self):
        low, high = TEMPERATURE_RANGE_C
        if not low <= self.temperature_c <= high:
            raise OutOfRange(
                f"temperature_c={self.temperature_c} is outside [{low}, {high}] °C."
            )
        if not 0 <= self.relative_humidity_pct <= 100:
            raise OutOfRange(
                f"relative_humidity_pct={self.relative_humidity_pct} is outside [0, 100]."
            )
        if not self.pressure_kpa > 0:
            raise OutOfRange(f"pressure_kpa={self.pressure_kpa} must be positive.")


def saturation_vapour_pressure(temperature_c):
    "Saturation vapour pressure of water in Pa (Davis)."
    T = temperature_c + 273.15
    return math.exp(1.2378847e-5 * T ** 2 - 1.9121316e-2 * T + 33.93711047 - 6.3431645e3 / T)


def vapour_mole_fraction(state):
    p = state.pressure_kpa * 1e3
    t = state.temperature_c
    enhancement = 1.00062 + 3.14e-8 * p + 5.6e-7 * t ** 2
    return (
        state.relative_humidity_pct
        / 100.0
        * enhancement
        * saturation_vapour_pressure(t)
        / p
    )


def speed_of_sound(state):
    "Speed of sound in m/s for an AtmoState."
    t = state.temperature_c
    p = state.pressure_kpa * 1e3
    xw = vapour_mole_fraction(state)
    xc = CO2_MOLE_FRACTION
    a = _A
    c = (
        a[0]
        + a[1] * t
        + a[2] * t ** 2
        + (a[3] + a[4] * t + a[5] * t ** 2) * xw
        + (a[6] + a[7] * t + a[8] * t ** 2) * p
        + (a[9] + a[10] * t + a[11] * t ** 2) * xc
        + a[12] * xw ** 2
        + a[13] * p ** 2
        + a[14] * xc ** 2
        + a[15] * xw * p * xc
    )
    return c


def dry_air_speed_of_sound(temperature_c):
    "The textbook 331.3·sqrt(1 + T/273.15) approximation."
    return 331.3 * math.sqrt(1 + temperature_c / 273.15)


def scaling_factor(c_old, c_new):
    """
    β = c_old / c_new. β > 1 means sound slowed down and IRs stretch;
    β < 1 means it sped up and IRs compress.
    """
    if not (c_old > 0 and c_new > 0):
        raise NonPositiveSpeed(f"Sound speeds must be positive, got {c_old} and {c_new}.")
    return c_old / c_new
