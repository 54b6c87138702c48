"""Observation noise applied to binary infection indicators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class NoNoise:
    def apply(self, indicator: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return indicator.astype(np.float64)


@dataclass(frozen=True)
class GaussianNoise:
    """Additive N(0, sigma^2) perturbation, clipped back into [0, 1]."""

    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def apply(self, indicator: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        nu = rng.normal(0.0, self.sigma, size=indicator.shape)
        return np.clip(indicator + nu, 0.0, 1.0)


@dataclass(frozen=True)
class FlipNoise:
    """Each binary label is flipped independently with probability ``p``."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"flip probability must lie in [0, 1], got {self.p}")

    def apply(self, indicator: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        flip = rng.random(indicator.shape) < self.p
        return np.where(flip, 1.0 - indicator, indicator).astype(np.float64)


NoiseModel = Union[NoNoise, GaussianNoise, FlipNoise]


def noise_from_dict(d) -> NoiseModel:
    """Build a noise model from ``{"kind": "gaussian", "sigma": 0.15}``-style data."""
    if d is None:
        return NoNoise()
    if isinstance(d, (NoNoise, GaussianNoise, FlipNoise)):
        return d
    d = dict(d)
    kind = str(d.pop("kind", "none")).lower()
    fields = {"none": (), "nonoise": (), "gaussian": ("sigma",), "flip": ("p",)}
    if kind not in fields:
        raise ValueError(f"unknown noise kind {kind!r}")
    missing = [k for k in fields[kind] if k not in d]
    extra = sorted(set(d) - set(fields[kind]))
    if missing or extra:
        raise ValueError(f"noise kind {kind!r} takes {list(fields[kind])}; "
                         f"missing {missing}, unexpected {extra}")
    if kind == "gaussian":
        return GaussianNoise(float(d["sigma"]))
    if kind == "flip":
        return FlipNoise(float(d["p"]))
    return NoNoise()


def noise_to_dict(noise: NoiseModel) -> dict:
    if isinstance(noise, GaussianNoise):
        return {"kind": "gaussian", "sigma": noise.sigma}
    if isinstance(noise, FlipNoise):
        return {"kind": "flip", "p": noise.p}
    return {"kind": "none"}
