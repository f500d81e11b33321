"""Coupling closures g(u, v) of the first equation, with their partial derivatives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class Coupling:
    name: str
    g: Callable
    dg_du: Callable
    dg_dv: Callable

    def __post_init__(self):
        if abs(complex(self.g(0.0, 0.0))) != 0.0:
            raise ParameterError(f"coupling {self.name!r} must satisfy g(0, 0) = 0")


def product() -> Coupling:
    return Coupling("u*v", lambda u, v: u * v, lambda u, v: v, lambda u, v: u)


def linear(a: float = 1.0, b: float = 1.0) -> Coupling:
    return Coupling(f"{a}*u+{b}*v", lambda u, v: a * u + b * v,
                    lambda u, v: a + 0 * u, lambda u, v: b + 0 * v)


def sine_product() -> Coupling:
    return Coupling("sin(u)*v", lambda u, v: np.sin(u) * v, lambda u, v: np.cos(u) * v, lambda u, v: np.sin(u))


def zero() -> Coupling:
    return Coupling("0", lambda u, v: 0 * u, lambda u, v: 0 * u, lambda u, v: 0 * u)


REGISTRY = {"u*v": product, "product": product, "sin(u)*v": sine_product, "zero": zero, "linear": linear}


def by_name(name: str) -> Coupling:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ParameterError(f"unknown coupling {name!r}; choose one of {sorted(REGISTRY)}") from None
