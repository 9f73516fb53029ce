"""Flat key=value experiment configuration.

The format is dotted-section keys, one `key = value` pair per line, with `#`
comments; any language can parse it and the canonical form hashes stably.
Rates, drifts, and initial data are chosen from the registry by name plus
parameters, never as expressions.
"""

from __future__ import annotations

import hashlib

from .errors import ConfigInvalid
from .field import GridSpec
from .microscopic import ModelParams
from .registry import DriftSpec, InitialFieldSpec, InitialMeasureSpec, RateSpec


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}", f"expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigInvalid(f"line {lineno}", "empty key")
        pairs[key] = value.strip()
    return pairs


def config_hash(pairs: dict[str, str]) -> str:
    canonical = "\n".join(f"{k}={pairs[k]}" for k in sorted(pairs))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class ExperimentConfig:
    """Typed access to a parsed config with field-level diagnostics."""

    def __init__(self, pairs: dict[str, str]):
        self.pairs = dict(pairs)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls(parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    @property
    def hash(self) -> str:
        return config_hash(self.pairs)

    # -- typed getters -------------------------------------------------------

    def _require(self, key: str) -> str:
        if key not in self.pairs:
            raise ConfigInvalid(key, "missing required key")
        return self.pairs[key]

    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self.pairs:
            return self.pairs[key]
        if default is None:
            raise ConfigInvalid(key, "missing required key")
        return default

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.pairs:
            if default is None:
                raise ConfigInvalid(key, "missing required key")
            return default
        try:
            return float(self.pairs[key])
        except ValueError:
            raise ConfigInvalid(key, f"not a number: {self.pairs[key]!r}") from None

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.pairs:
            if default is None:
                raise ConfigInvalid(key, "missing required key")
            return default
        try:
            return int(self.pairs[key])
        except ValueError:
            raise ConfigInvalid(key, f"not an integer: {self.pairs[key]!r}") from None

    def get_bool(self, key: str, default: bool = False) -> bool:
        if key not in self.pairs:
            return default
        val = self.pairs[key].lower()
        if val in ("true", "1", "yes"):
            return True
        if val in ("false", "0", "no"):
            return False
        raise ConfigInvalid(key, f"not a boolean: {self.pairs[key]!r}")

    def get_float_list(self, key: str, default: list[float] | None = None) -> list[float]:
        if key not in self.pairs:
            if default is None:
                raise ConfigInvalid(key, "missing required key")
            return default
        try:
            return [float(tok) for tok in self.pairs[key].split(",") if tok.strip()]
        except ValueError:
            raise ConfigInvalid(key, f"not a number list: {self.pairs[key]!r}") from None

    def get_int_list(self, key: str, default: list[int] | None = None) -> list[int]:
        vals = self.get_float_list(key, None if default is None else
                                   [float(v) for v in default])
        out = []
        for v in vals:
            if v != int(v):
                raise ConfigInvalid(key, f"expected integers, got {v}")
            out.append(int(v))
        return out

    def _section_params(self, prefix: str) -> dict:
        out = {}
        for key, value in self.pairs.items():
            if key.startswith(prefix + ".") and not key.endswith(".kind"):
                name = key[len(prefix) + 1:]
                toks = [t for t in value.split(",") if t.strip()]
                try:
                    floats = [float(t) for t in toks]
                except ValueError:
                    raise ConfigInvalid(key, f"not a number: {value!r}") from None
                out[name] = floats if len(floats) > 1 else floats[0]
        return out

    # -- model construction --------------------------------------------------

    def _positive(self, key: str) -> float:
        val = self.get_float(key)
        if val <= 0:
            raise ConfigInvalid(key, f"must be positive, got {val}")
        return val

    def model_params(self) -> ModelParams:
        d = self.get_int("grid.d")
        if d not in (1, 2):
            raise ConfigInvalid("grid.d", f"must be 1 or 2, got {d}")
        n = self.get_int("grid.n")
        if n < 2 or n & (n - 1):
            raise ConfigInvalid("grid.n", f"must be a power of two, got {n}")
        grid = GridSpec(d, n, self._positive("grid.L"))

        alpha = self.get_float("model.alpha")
        if alpha < 0:
            raise ConfigInvalid("model.alpha", f"must be nonnegative, got {alpha}")
        lambda_bar = self._positive("model.lambda_bar")
        birth = RateSpec(self.get_str("birth.kind"), self._section_params("birth"))
        death = RateSpec(self.get_str("death.kind"), self._section_params("death"))
        if birth.sup() + death.sup() > lambda_bar + 1e-12:
            raise ConfigInvalid(
                "model.lambda_bar",
                f"sup(lambda_b + lambda_d) = {birth.sup() + death.sup()} "
                f"exceeds lambda_bar = {lambda_bar}")
        drift = DriftSpec(self.get_str("drift.kind"), self._section_params("drift"))
        mu0 = InitialMeasureSpec(self.get_str("init.mu0.kind"),
                                 self._section_params("init.mu0"))
        rho0 = InitialFieldSpec(self.get_str("init.rho0.kind"),
                                self._section_params("init.rho0"))

        dt = self._positive("run.dt")
        T = self._positive("run.T")
        if abs(T / dt - round(T / dt)) > 1e-9:
            raise ConfigInvalid("run.dt", f"T={T} is not a multiple of dt={dt}")
        width = self.get_float("kernel.width", 0.0)
        try:
            return ModelParams(
                grid=grid,
                sigma=self._positive("model.sigma"),
                D=self._positive("model.D"),
                r=self._positive("model.r"),
                alpha=alpha,
                lambda_bar=lambda_bar,
                birth=birth, death=death, drift=drift,
                mu0=mu0, rho0=rho0,
                dt=dt, T=T,
                kernel_width=width if width > 0 else None,
                population_cap=self.get_int("run.population_cap", 1_000_000),
                advection=self.get_str("macro.scheme", "auto"),
                lambda_arg=self.get_str("model.lambda_arg", "rho"),
            )
        except ValueError as exc:
            raise ConfigInvalid("model", str(exc)) from None

    def master_seed(self, override: int | None = None) -> int:
        if override is not None:
            return int(override)
        return self.get_int("run.seed")

    def threads(self, override: int | None = None) -> int:
        if override is not None:
            return max(1, int(override))
        return max(1, self.get_int("run.threads", 1))
