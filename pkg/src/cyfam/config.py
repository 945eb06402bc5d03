"""Scenario configuration: TOML input, defaults, validation, schema text.

A scenario names a family (preset or polynomial period coefficients), the
fiber grid and stencil resolution, the construction mode, per-verifier
tolerances, and the output directory.  TOML comes in, JSON reports and CSV
grids go out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
try:
    import tomllib as tomli
except ModuleNotFoundError:  # python < 3.11
    import tomli

from .errors import ConfigError
from .torus import PeriodFamily, Preset, get_preset

__all__ = [
    "DEFAULT_TOLERANCES",
    "PsiMode",
    "ScenarioConfig",
    "parse_complex",
    "make_psi",
    "config_from_toml",
    "config_from_mapping",
    "dump_schema",
]

# Residual keys addressable from --tol and the [tolerances] table; the eqNN
# names are the report's stable external addressing scheme.
DEFAULT_TOLERANCES = {
    "eq1": 1e-6,
    "eq2": 1e-8,
    "eq3": 1e-9,
    "eq5": 1e-6,
    "eq6": 1e-8,
    "eq7": 1e-8,
    "eq8": 1e-8,
    "eq9": 1e-6,
    "eq10": 1e-6,
    "eq11": 1e-6,
    "eq13": 1e-6,
    "eq14": 1e-8,
    "eq15": 1e-8,
    "eq16": 1e-6,
    "eq18": 1e-6,
    "eq20": 1e-12,
    "remark1": 1e-12,
    "det-identity": 1e-10,
    "green-reconstruction": 1e-7,
    "green-roundtrip": 1e-10,
    "green-bound": 1e-6,
    "solver": 1e-11,
    "ma-recovery": 1e-8,
}


def parse_complex(value) -> complex:
    """Parse a real number or a complex literal written with i or j."""
    if isinstance(value, complex):
        return value
    if isinstance(value, (int, float)):
        return complex(value)
    text = str(value).strip().replace(" ", "").replace("i", "j")
    try:
        return complex(text)
    except ValueError:
        raise ConfigError(f"cannot parse complex number {value!r}") from None


@dataclass(frozen=True)
class PsiMode:
    """One band-limited perturbation mode a(s) cos(2 pi k.u + phase).

    ``k`` indexes the (x, y) lattice coordinates; the effective amplitude is
    amplitude * (1 + s_slope * Re s).
    """

    k: tuple
    amplitude: float
    phase: float = 0.0
    s_slope: float = 0.0

    def validate(self, n: int):
        if len(self.k) != 2 * n:
            raise ConfigError(
                f"psi mode k {list(self.k)} needs {2 * n} integer entries"
            )
        if not all(float(v).is_integer() for v in self.k):
            raise ConfigError(f"psi mode k {list(self.k)} must be integers")
        if not any(self.k):
            raise ConfigError("psi mode k must be nonzero")
        if not np.isfinite(self.amplitude) or self.amplitude == 0.0:
            raise ConfigError(f"psi amplitude {self.amplitude} must be finite nonzero")


def make_psi(modes):
    """Band-limited real perturbation psi(grid, s) from explicit modes."""
    entries = tuple(modes)

    def psi(grid, s):
        mesh = np.stack([grid.coordinate(a) for a in grid.axes], axis=-1)
        out = np.zeros(grid.shape)
        for m in entries:
            k = np.asarray(m.k, dtype=float)
            amp = m.amplitude * (1.0 + m.s_slope * complex(s).real)
            out = out + amp * np.cos(2.0 * np.pi * mesh @ k + m.phase)
        return out

    return psi


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated inputs of one scenario run."""

    preset: str | None = "elliptic"
    coefficients: tuple | None = None
    radius: float | None = None
    at: complex | None = None
    grid: int | None = None
    step: float = 1e-2
    mode: str = "closed-form"
    psi: tuple = ()
    samples: tuple = ()
    tolerances: dict = field(default_factory=dict)
    out: Path = Path("cyfam-out")
    seed: int = 2026
    break_normalization: float = 0.0

    def family(self) -> PeriodFamily:
        if self.coefficients is not None:
            return PeriodFamily(
                coeffs=tuple(np.asarray(c, dtype=complex) for c in self.coefficients),
                domain_radius=float(self.radius),
            )
        return self._preset().family(self.at)

    def base_point(self) -> complex:
        if self.coefficients is not None:
            return self.at if self.at is not None else 0j
        return self._preset().base_point(self.at)

    def grid_size(self) -> int:
        if self.grid is not None:
            return int(self.grid)
        if self.coefficients is not None:
            return 32 if self.family().n == 1 else 16
        return self._preset().default_grid

    def tolerance(self, name: str) -> float:
        return self.tolerances.get(name, DEFAULT_TOLERANCES[name])

    def _preset(self) -> Preset:
        try:
            return get_preset(self.preset)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None

    def validate(self) -> "ScenarioConfig":
        if self.coefficients is None:
            self._preset()
        elif self.radius is None or not self.radius > 0:
            raise ConfigError("custom coefficients need a positive domain radius")
        if self.grid is not None and (self.grid < 8 or self.grid % 2):
            raise ConfigError(f"grid size {self.grid} must be even and >= 8")
        if not self.step > 0:
            raise ConfigError(f"stencil step {self.step} must be positive")
        if self.mode not in ("closed-form", "perturbed"):
            raise ConfigError(
                f"unknown mode {self.mode!r}; use 'closed-form' or 'perturbed'"
            )
        if self.mode == "perturbed" and not self.psi:
            raise ConfigError("perturbed mode needs at least one [[psi]] mode")
        for name, value in self.tolerances.items():
            if name not in DEFAULT_TOLERANCES:
                known = ", ".join(sorted(DEFAULT_TOLERANCES))
                raise ConfigError(f"unknown tolerance {name!r}; known: {known}")
            if not value > 0:
                raise ConfigError(f"tolerance {name} must be positive, got {value}")
        family = self.family()
        for m in self.psi:
            m.validate(family.n)
        center = self.base_point()
        h = self.step
        corners = (0j, h, -h, 1j * h, -1j * h, h + 1j * h, h - 1j * h,
                   -h + 1j * h, -h - 1j * h)
        for offset in corners:
            if not family.contains(center + offset):
                raise ConfigError(
                    f"stencil around {center} leaves the family domain "
                    f"(radius {family.domain_radius})"
                )
        for s in self.samples:
            for offset in corners:
                if not family.contains(s + offset):
                    raise ConfigError(
                        f"stencil around sample point {s} leaves the family domain"
                    )
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        return self


def _psi_mode_from_mapping(entry: dict) -> PsiMode:
    known = {"k", "amplitude", "phase", "s-slope"}
    unknown = set(entry) - known
    if unknown:
        raise ConfigError(f"unknown psi keys {sorted(unknown)}; known: {sorted(known)}")
    if "k" not in entry or "amplitude" not in entry:
        raise ConfigError("each [[psi]] mode needs 'k' and 'amplitude'")
    return PsiMode(
        k=tuple(int(v) for v in entry["k"]),
        amplitude=float(entry["amplitude"]),
        phase=float(entry.get("phase", 0.0)),
        s_slope=float(entry.get("s-slope", 0.0)),
    )


def config_from_mapping(data: dict) -> ScenarioConfig:
    """Build a validated ScenarioConfig from parsed TOML data."""
    known_top = {"family", "run", "psi", "tolerances"}
    unknown = set(data) - known_top
    if unknown:
        raise ConfigError(
            f"unknown config tables {sorted(unknown)}; known: {sorted(known_top)}"
        )
    fam = dict(data.get("family", {}))
    run = dict(data.get("run", {}))

    preset = fam.pop("preset", None)
    coefficients = fam.pop("coefficients", None)
    radius = fam.pop("radius", None)
    at = fam.pop("at", None)
    if fam:
        raise ConfigError(f"unknown [family] keys {sorted(fam)}")
    if preset is None and coefficients is None:
        preset = "elliptic"
    if preset is not None and coefficients is not None:
        raise ConfigError("give either a preset or coefficients, not both")
    if coefficients is not None:
        coefficients = tuple(
            tuple(tuple(parse_complex(v) for v in row) for row in matrix)
            for matrix in coefficients
        )

    known_run = {
        "grid", "step", "mode", "seed", "out", "samples", "break-normalization",
    }
    unknown = set(run) - known_run
    if unknown:
        raise ConfigError(f"unknown [run] keys {sorted(unknown)}; known: {sorted(known_run)}")

    cfg = ScenarioConfig(
        preset=preset,
        coefficients=coefficients,
        radius=None if radius is None else float(radius),
        at=None if at is None else parse_complex(at),
        grid=None if "grid" not in run else int(run["grid"]),
        step=float(run.get("step", 1e-2)),
        mode=str(run.get("mode", "closed-form")),
        psi=tuple(_psi_mode_from_mapping(e) for e in data.get("psi", [])),
        samples=tuple(parse_complex(v) for v in run.get("samples", [])),
        tolerances={str(k): float(v) for k, v in data.get("tolerances", {}).items()},
        out=Path(run.get("out", "cyfam-out")),
        seed=int(run.get("seed", 2026)),
        break_normalization=float(run.get("break-normalization", 0.0)),
    )
    return cfg.validate()


def config_from_toml(path) -> ScenarioConfig:
    """Parse and validate a scenario file."""
    try:
        with open(path, "rb") as handle:
            data = tomli.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    return config_from_mapping(data)


_SCHEMA = """\
# Scenario configuration schema. Every key is optional; the values below are
# the defaults. Complex numbers are strings using i or j ("1+2i", "0.5i").

[family]
# Named family template; see `list-presets` for the registry.
preset = "elliptic"
# Center fiber: modulus tau for n = 1 presets, base point s for n >= 2.
# at = "i"
# Custom polynomial family instead of a preset: coefficients is a list of
# n x n complex matrices [Omega_0, Omega_1, ...] with
# Omega(s) = sum_k Omega_k s^k, valid on |s| <= radius.
# coefficients = [ [["i"]], [["1"]] ]
# radius = 0.5

[run]
# Fiber lattice points per axis (even, >= 8); preset default when omitted.
# grid = 32
# Base stencil step h for the s-derivatives.
step = 0.01
# "closed-form" stores the exact flat construction; "perturbed" runs the
# fiberwise Ricci-flat solver on the [[psi]] perturbation.
mode = "closed-form"
# RNG seed for the randomized verifier probes (recorded in the report).
seed = 2026
# Report directory: report.json plus grids/*.csv.
out = "cyfam-out"
# Extra base points where the Weil-Petersson value is sampled.
samples = []
# Nonzero: add this constant to the base potential after normalization so
# the normalization verifier must fail (negative control).
break-normalization = 0.0

# Perturbation modes (perturbed mode only): amplitude (1 + s-slope Re s)
# cos(2 pi k.u + phase) with k indexing the (x, y) lattice coordinates.
# [[psi]]
# k = [1, 0]
# amplitude = 0.03
# phase = 0.0
# s-slope = 1.0

[tolerances]
"""


def dump_schema() -> str:
    """Schema text; itself a valid TOML document encoding the defaults."""
    lines = [f"{name} = {value:.1e}" for name, value in DEFAULT_TOLERANCES.items()]
    return _SCHEMA + "\n".join(lines) + "\n"
