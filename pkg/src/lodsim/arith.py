"""Arithmetic on state values: scalars (int, Fraction, float) and tuples of them.

Integers and Fractions stay exact; anything touching a float goes through
``math.fsum`` so reductions are correctly rounded.
"""
from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational, Real
from typing import Any, Sequence


def is_numeric(value: Any) -> bool:
    if isinstance(value, bool):
        return False
    if isinstance(value, Real):
        return True
    return isinstance(value, tuple) and bool(value) and all(is_numeric(v) for v in value)


def _exact(values: Sequence) -> bool:
    return all(isinstance(v, Rational) for v in values)


def _tidy(value: Fraction):
    return value.numerator if value.denominator == 1 else value


def add(a, b):
    if isinstance(a, tuple):
        if not isinstance(b, tuple) or len(a) != len(b):
            raise TypeError(f"cannot add {a!r} and {b!r}")
        return tuple(add(x, y) for x, y in zip(a, b))
    return a + b


def sub(a, b):
    if isinstance(a, tuple):
        if not isinstance(b, tuple) or len(a) != len(b):
            raise TypeError(f"cannot subtract {b!r} from {a!r}")
        return tuple(sub(x, y) for x, y in zip(a, b))
    return a - b


def scale(a, k):
    if isinstance(a, tuple):
        return tuple(scale(x, k) for x in a)
    return a * k


def total(values: Sequence):
    """Sum of scalars or component-wise sum of equal-length tuples."""
    if not values:
        raise ValueError("sum of an empty sequence")
    if isinstance(values[0], tuple):
        width = len(values[0])
        if any(not isinstance(v, tuple) or len(v) != width for v in values):
            raise TypeError("tuple values of unequal shape")
        return tuple(total([v[i] for v in values]) for i in range(width))
    if _exact(values):
        return _tidy(sum((Fraction(v) for v in values), Fraction(0)))
    return math.fsum(values)


def mean(values: Sequence):
    """Arithmetic mean; exact for ints and Fractions."""
    if not values:
        raise ValueError("mean of an empty sequence")
    if isinstance(values[0], tuple):
        width = len(values[0])
        if any(not isinstance(v, tuple) or len(v) != width for v in values):
            raise TypeError("tuple values of unequal shape")
        return tuple(mean([v[i] for v in values]) for i in range(width))
    if _exact(values):
        return _tidy(sum((Fraction(v) for v in values), Fraction(0)) / len(values))
    return math.fsum(values) / len(values)


def norm(value) -> float:
    if isinstance(value, tuple):
        return math.hypot(*(float(v) for v in value))
    return abs(float(value))


class FloatOffset(Fraction):
    """An exact offset taken from a float; restores to a float."""

    __slots__ = ()


def exact_offset(value, reference):
    """``value - reference`` computed exactly (floats converted losslessly).

    The offset remembers whether ``value`` was a float, so that
    :func:`apply_offset` hands back the member's own number type.
    """
    if isinstance(value, tuple):
        return tuple(exact_offset(v, r) for v, r in zip(value, reference, strict=True))
    diff = Fraction(value) - Fraction(reference)
    return FloatOffset(diff) if isinstance(value, float) else diff


def apply_offset(reference, offset):
    """Inverse of :func:`exact_offset`."""
    if isinstance(reference, tuple):
        return tuple(apply_offset(r, o) for r, o in zip(reference, offset, strict=True))
    result = Fraction(reference) + offset
    if isinstance(offset, FloatOffset):
        return float(result)
    return _tidy(result)
