"""Named rate, drift, and initial-condition functions.

Configs select these by name plus parameters instead of arbitrary
expressions, which keeps runs auditable and hashes stable.  Every rate kind
declares its supremum so that the dominating clock rate can be validated;
every drift kind is bounded by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ConfigInvalid
from .field import Field, GridSpec

RATE_KINDS = ("zero", "constant", "indicator", "logistic")
DRIFT_KINDS = ("zero", "constant", "chemotaxis")
MU0_KINDS = ("uniform", "gaussian", "point")
RHO0_KINDS = ("constant", "cosine", "bump")


@dataclass(frozen=True)
class RateSpec:
    """A birth or death rate lambda(x, rho) chosen from the registry.

    kinds:
      zero       -- identically 0
      constant   -- c
      indicator  -- c * 1[x_1 < L/2]   (half-torus in the first coordinate)
      logistic   -- c / (1 + exp(-slope * (rho - center))), bounded by c
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise ConfigInvalid("rate.kind", f"unknown rate kind {self.kind!r}")

    def sup(self) -> float:
        if self.kind == "zero":
            return 0.0
        return float(self.params.get("c", 0.0))

    def build(self, extent: float):
        kind, p = self.kind, self.params
        if kind == "zero":
            return lambda x, rho: np.zeros(len(np.atleast_2d(x)))
        c = float(p["c"])
        if kind == "constant":
            return lambda x, rho: np.full(len(np.atleast_2d(x)), c)
        if kind == "indicator":
            half = 0.5 * extent
            return lambda x, rho: c * (np.atleast_2d(x)[:, 0] < half)
        slope = float(p.get("slope", 1.0))
        center = float(p.get("center", 0.0))
        return lambda x, rho: c / (1.0 + np.exp(-slope * (np.asarray(rho) - center)))


@dataclass(frozen=True)
class DriftSpec:
    """Drift b(x, g) with g the chemoattractant gradient.

    kinds:
      zero        -- 0
      constant    -- fixed vector (vx[, vy])
      chemotaxis  -- chi * g / (1 + |g|/gsat), bounded by chi * gsat
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ConfigInvalid("drift.kind", f"unknown drift kind {self.kind!r}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def bound(self, d: int) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            v = self._vector(d)
            return float(np.sqrt(np.sum(v * v)))
        return float(self.params.get("chi", 1.0)) * float(self.params.get("gsat", 1.0))

    def _vector(self, d: int) -> np.ndarray:
        p = self.params
        comps = [float(p.get("vx", 0.0))]
        if d == 2:
            comps.append(float(p.get("vy", 0.0)))
        return np.array(comps)

    def build(self, d: int):
        kind, p = self.kind, self.params
        if kind == "zero":
            return lambda x, g: np.zeros_like(np.atleast_2d(x))
        if kind == "constant":
            v = self._vector(d)
            return lambda x, g: np.broadcast_to(v, np.atleast_2d(x).shape)
        chi = float(p.get("chi", 1.0))
        gsat = float(p.get("gsat", 1.0))

        def chemotaxis(x, g):
            g = np.atleast_2d(g)
            norms = np.sqrt(np.sum(g * g, axis=1, keepdims=True))
            return chi * g / (1.0 + norms / gsat)

        return chemotaxis


@dataclass(frozen=True)
class InitialMeasureSpec:
    """Initial cell-position law mu_0 on the torus.

    kinds: uniform; gaussian (center per axis, sd, wrapped); point (at).
    Sampling is inverse-CDF on the reserved init stream, one draw per
    coordinate, so founders are pure functions of (universe, line).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MU0_KINDS:
            raise ConfigInvalid("init.mu0.kind", f"unknown mu0 kind {self.kind!r}")

    def _center(self, d: int, key: str = "center") -> np.ndarray:
        raw = self.params.get(key, [0.0] * d)
        arr = np.atleast_1d(np.asarray(raw, dtype=np.float64))
        if arr.size == 1 and d == 2:
            arr = np.repeat(arr, 2)
        return arr

    def sample(self, universe, line: int, d: int, extent: float) -> np.ndarray:
        if self.kind == "point":
            return np.mod(self._center(d, "at"), extent)
        u = universe.init_uniforms(line, d)
        if self.kind == "uniform":
            return extent * u
        sd = float(self.params.get("sd", extent / 10.0))
        return np.mod(self._center(d) + sd * ndtri(u), extent)

    def density(self, grid: GridSpec) -> np.ndarray:
        """Grid-sampled probability density (unit total mass by quadrature)."""
        nodes = grid.node_coords()
        if self.kind == "uniform":
            vals = np.ones(len(nodes))
        elif self.kind == "point":
            # narrow normalized bump as the grid representation of an atom
            vals = _periodized_gaussian(nodes, self._center(grid.d, "at"),
                                        4.0 * grid.dx, grid.extent)
        else:
            sd = float(self.params.get("sd", grid.extent / 10.0))
            vals = _periodized_gaussian(nodes, self._center(grid.d), sd, grid.extent)
        vals = vals.reshape(grid.shape)
        return vals / (np.sum(vals) * grid.cell_volume)


@dataclass(frozen=True)
class InitialFieldSpec:
    """Initial chemoattractant rho_0 (twice differentiable torus function).

    kinds: constant (c); cosine (c0 + amp * cos(2*pi*mode*x_1/L));
    bump (amp * periodized gaussian at center with width).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in RHO0_KINDS:
            raise ConfigInvalid("init.rho0.kind", f"unknown rho0 kind {self.kind!r}")

    def sample(self, grid: GridSpec) -> Field:
        p = self.params
        nodes = grid.node_coords()
        if self.kind == "constant":
            vals = np.full(len(nodes), float(p.get("c", 0.0)))
        elif self.kind == "cosine":
            c0 = float(p.get("c0", 0.0))
            amp = float(p.get("amp", 1.0))
            mode = int(p.get("mode", 1))
            vals = c0 + amp * np.cos(2.0 * np.pi * mode * nodes[:, 0] / grid.extent)
        else:
            amp = float(p.get("amp", 1.0))
            width = float(p.get("width", grid.extent / 10.0))
            center = np.atleast_1d(np.asarray(p.get("center", [grid.extent / 2] * grid.d),
                                              dtype=np.float64))
            if center.size == 1 and grid.d == 2:
                center = np.repeat(center, 2)
            vals = amp * _periodized_gaussian(nodes, center, width, grid.extent)
        return Field(grid, vals.reshape(grid.shape), 0.0)


def _periodized_gaussian(nodes: np.ndarray, center: np.ndarray, width: float,
                         extent: float) -> np.ndarray:
    out = np.ones(len(nodes))
    for ax in range(nodes.shape[1]):
        dx = np.mod(nodes[:, ax] - center[ax] + 0.5 * extent, extent) - 0.5 * extent
        acc = np.zeros(len(nodes))
        for m in (-1, 0, 1):
            acc += np.exp(-((dx + m * extent) ** 2) / (2.0 * width ** 2))
        out = out * acc / np.sqrt(2.0 * np.pi * width ** 2)
    return out
