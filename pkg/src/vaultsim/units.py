"""Fixed-point amounts.

ETH and token quantities are plain ``int`` counts of the smallest unit
(18 decimals, wei-like).  Prices are ``Fraction`` so ratios stay exact.
"""

from __future__ import annotations

import math
from decimal import Decimal, InvalidOperation
from fractions import Fraction

DECIMALS = 18
UNIT = 10**DECIMALS
BPS = 10_000

TICK_SECONDS = 300
TICKS_PER_HOUR = 12


def to_units(value: int | str | Decimal | float) -> int:
    """Parse a human amount ("1.5", 2, Decimal) into smallest units.

    Floats go through ``repr`` so ``0.1`` means one tenth, not its binary
    neighbour.  Sub-unit digits are rejected rather than silently rounded.
    """
    if isinstance(value, bool):
        raise TypeError("amount must be numeric")
    if isinstance(value, int):
        return value * UNIT
    try:
        dec = Decimal(repr(value)) if isinstance(value, float) else Decimal(str(value).strip())
    except InvalidOperation as exc:
        raise ValueError(f"not a decimal amount: {value!r}") from exc
    scaled = dec.scaleb(DECIMALS)
    if scaled != scaled.to_integral_value():
        raise ValueError(f"amount {value!r} has more than {DECIMALS} decimals")
    return int(scaled)


def fmt_units(amount: int, places: int | None = None) -> str:
    """Render smallest units as a decimal string.

    With ``places=None`` the exact value is printed with trailing zeros
    trimmed; otherwise it is rounded half-even to ``places`` digits.
    """
    if places is not None:
        return fmt_fraction(Fraction(amount, UNIT), places)
    sign = "-" if amount < 0 else ""
    whole, frac = divmod(abs(amount), UNIT)
    if frac == 0:
        return f"{sign}{whole}"
    digits = f"{frac:0{DECIMALS}d}".rstrip("0")
    return f"{sign}{whole}.{digits}"


def round_half_even(x: Fraction, places: int) -> int:
    """Round ``x * 10**places`` to an integer, ties to even."""
    num, den = x.numerator * 10**places, x.denominator
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q % 2 == 1):
        q += 1
    return q


def fmt_fraction(x: Fraction, places: int) -> str:
    n = round_half_even(x, places)
    sign = "-" if n < 0 else ""
    n = abs(n)
    if places == 0:
        return f"{sign}{n}"
    whole, frac = divmod(n, 10**places)
    return f"{sign}{whole}.{frac:0{places}d}"


def fmt_price(price: Fraction) -> str:
    """Prices span many magnitudes; print 12 significant digits."""
    if price == 0:
        return "0"
    num, den = abs(price.numerator), price.denominator
    places = 12
    if num < den:
        # leading zeros after the point: smallest k with num * 10**k >= den, capped at 28
        k = max(len(str(den)) - len(str(num)) - 1, 0)
        while num * 10**k < den:
            k += 1
        places += min(k, 28)
    return fmt_fraction(price, places).rstrip("0").rstrip(".")


def fmt_pct(x: Fraction, places: int = 2) -> str:
    """Fraction 0.125 -> '+12.50%'."""
    s = fmt_fraction(x * 100, places)
    if not s.startswith("-"):
        s = "+" + s
    return s + "%"


def ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def portion(fraction: float, base: int) -> int:
    """floor(fraction * base), reading the float as its shortest decimal form.

    0.1 of 10 ETH is exactly 1 ETH rather than 1 ETH plus the binary error.
    """
    return math.floor(Fraction(repr(float(fraction))) * base)
