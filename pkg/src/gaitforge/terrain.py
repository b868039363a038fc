"""Parametric height-field terrains."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

FLAT, SLOPE, VARYING_SLOPE, SINUSOID, STAIRS = range(5)
KINDS = {"flat": FLAT, "slope": SLOPE, "varying_slope": VARYING_SLOPE,
         "sinusoid": SINUSOID, "stairs": STAIRS}


@dataclass(frozen=True)
class Terrain:
    """Terrain description.

    Sign convention for slopes follows the Z-Y-X pitch: a plane pitched by a
    positive ``alpha`` descends along +x (``h = -tan(alpha) * x``), a positive
    ``gamma`` rises along +y.
    """

    kind: str = "flat"
    alpha: float = 0.0          # slope pitch (rad)
    gamma: float = 0.0          # slope roll (rad)
    segments: tuple = ()        # varying_slope: ((length, alpha), ...)
    amplitude: float = 0.0      # sinusoid
    wavelength: float = 1.0     # sinusoid
    step_length: float = 0.3    # stairs
    step_height: float = 0.0    # stairs
    friction_coefficient: float = 0.8
    origin: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "stairs" and not (self.step_length > 0 and abs(self.step_height) < 0.3):
            raise ValueError("stairs need step_length > 0 and |step_height| < 0.3")
        if self.kind == "sinusoid" and self.wavelength <= 0:
            raise ValueError("sinusoid wavelength must be positive")
        if self.kind == "varying_slope":
            if not self.segments or any(length <= 0 for length, _ in self.segments):
                raise ValueError("varying_slope needs segments with positive lengths")
        if self.friction_coefficient < 0:
            raise ValueError("friction coefficient must be nonnegative")

    def encode(self):
        """(kind code, parameter vector, segment table) for the kernels."""
        code = KINDS[self.kind]
        if code == SLOPE:
            params = [self.origin, self.alpha, self.gamma]
        elif code == SINUSOID:
            params = [self.origin, self.amplitude, self.wavelength]
        elif code == STAIRS:
            params = [self.origin, self.step_length, self.step_height]
        else:
            params = [self.origin, 0.0, 0.0]
        segs = np.array(self.segments, dtype=float).reshape(-1, 2)
        if segs.shape[0] == 0:
            segs = np.zeros((1, 2))
        return code, np.array(params, dtype=float), segs

    def height(self, x: float, y: float) -> float:
        return terrain_height(self, x, y)

    def normal(self, x: float, y: float) -> np.ndarray:
        return terrain_normal(self, x, y)

    def label(self) -> str:
        if self.kind == "slope":
            return f"slope:{math.degrees(self.alpha):g}" + (
                f":{math.degrees(self.gamma):g}" if self.gamma else "")
        if self.kind == "stairs":
            return f"stairs:{self.step_length:g}:{self.step_height:g}"
        if self.kind == "sinusoid":
            return f"sinusoid:{self.amplitude:g}:{self.wavelength:g}"
        if self.kind == "varying_slope":
            return "varying_slope:" + ":".join(
                f"{length:g}/{math.degrees(a):g}" for length, a in self.segments)
        return "flat"


def parse_terrain(text: str, friction: float = 0.8) -> Terrain:
    """Parse ``flat``, ``slope:<deg>[:<roll deg>]``, ``sinusoid:<amp>:<wavelength>``,
    ``stairs:<length>:<height>`` or ``varying_slope:<len>/<deg>:<len>/<deg>...``."""
    parts = [p.strip() for p in text.strip().split(":")]
    kind = parts[0]
    try:
        if kind == "flat" and len(parts) == 1:
            return Terrain("flat", friction_coefficient=friction)
        if kind == "slope" and len(parts) in (2, 3):
            gamma = math.radians(float(parts[2])) if len(parts) == 3 else 0.0
            return Terrain("slope", alpha=math.radians(float(parts[1])), gamma=gamma,
                           friction_coefficient=friction)
        if kind == "sinusoid" and len(parts) == 3:
            return Terrain("sinusoid", amplitude=float(parts[1]), wavelength=float(parts[2]),
                           friction_coefficient=friction)
        if kind == "stairs" and len(parts) == 3:
            return Terrain("stairs", step_length=float(parts[1]), step_height=float(parts[2]),
                           friction_coefficient=friction)
        if kind == "varying_slope" and len(parts) >= 2:
            segs = []
            for p in parts[1:]:
                length, deg = p.split("/")
                segs.append((float(length), math.radians(float(deg))))
            return Terrain("varying_slope", segments=tuple(segs), friction_coefficient=friction)
    except ValueError as exc:
        raise ValueError(f"bad terrain spec {text!r}: {exc}") from None
    raise ValueError(f"bad terrain spec {text!r}")


@njit(cache=True)
def _plane_normal(alpha, gamma):
    # z-axis of Ry(alpha) @ Rx(gamma)
    return (math.sin(alpha) * math.cos(gamma), -math.sin(gamma), math.cos(alpha) * math.cos(gamma))


@njit(cache=True)
def height_at(kind, params, segs, x, y):
    u = x - params[0]
    if kind == SLOPE:
        nx, ny, nz = _plane_normal(params[1], params[2])
        return -(nx * u + ny * y) / nz
    if kind == SINUSOID:
        return params[1] * math.sin(2.0 * math.pi * u / params[2])
    if kind == STAIRS:
        if u < 0.0:
            return 0.0
        return math.floor(u / params[1]) * params[2]
    if kind == VARYING_SLOPE:
        if u < 0.0:
            return 0.0
        h = 0.0
        s = 0.0
        n = segs.shape[0]
        for i in range(n):
            length = segs[i, 0]
            grad = -math.tan(segs[i, 1])
            if u <= s + length or i == n - 1:
                return h + grad * (u - s)
            h += grad * length
            s += length
        return h
    return 0.0


@njit(cache=True)
def _gradient(kind, params, segs, x, y):
    u = x - params[0]
    if kind == SLOPE:
        nx, ny, nz = _plane_normal(params[1], params[2])
        return -nx / nz, -ny / nz
    if kind == SINUSOID:
        k = 2.0 * math.pi / params[2]
        return params[1] * k * math.cos(k * u), 0.0
    if kind == VARYING_SLOPE:
        if u < 0.0:
            return 0.0, 0.0
        s = 0.0
        n = segs.shape[0]
        for i in range(n):
            if u < s + segs[i, 0] or i == n - 1:
                return -math.tan(segs[i, 1]), 0.0
            s += segs[i, 0]
    return 0.0, 0.0


@njit(cache=True)
def normal_at(kind, params, segs, x, y):
    if kind == SLOPE:
        return _plane_normal(params[1], params[2])
    gx, gy = _gradient(kind, params, segs, x, y)
    norm = math.sqrt(gx * gx + gy * gy + 1.0)
    return -gx / norm, -gy / norm, 1.0 / norm


def terrain_height(terrain: Terrain, x: float, y: float) -> float:
    kind, params, segs = terrain.encode()
    return height_at(kind, params, segs, float(x), float(y))


def terrain_normal(terrain: Terrain, x: float, y: float) -> np.ndarray:
    kind, params, segs = terrain.encode()
    return np.array(normal_at(kind, params, segs, float(x), float(y)))
