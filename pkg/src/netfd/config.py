"""Scenario configuration: INI files with dotted section names."""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .liouville import MAX_FOCK_DIM, TOL_EXACT, TOL_INTEGRATED, ModeSpec

KINDS = ("verify-algebra", "evolve", "propagators", "transport", "renorm-compare")

ENV_OVERRIDES = {
    "NETFD_TOL_EXACT": ("tolerances", "exact"),
    "NETFD_TOL_INTEGRATED": ("tolerances", "integrated"),
    "NETFD_RTOL": ("tolerances", "rtol"),
    "NETFD_ATOL": ("tolerances", "atol"),
}

DEFAULTS = {
    "verify-algebra": """
[modes]
energies = 1.0, 2.0
statistics = boson, fermion
cutoffs = 4, 1
[algebra]
boson_cutoffs = 4, 8, 16
samples = 3
""",
    "evolve": """
[modes]
energies = 1.0
statistics = boson
cutoffs = 40
[schedule]
kind = relaxing
final = 1.0
amplitude = 0.5
rate = 1.0
t_end = 5.0
steps = 11
[evolve]
perturbation = 0.05
conserved = true
gamma_control = 0.3
""",
    "propagators": """
[modes]
energies = 1.0
statistics = boson
cutoffs = 40
[schedule]
kind = static
n = 1.0
t_end = 2.0
steps = 20
""",
    "transport": """
[modes]
energies = 1.0, 2.0, 3.0
statistics = boson, boson, boson
cutoffs = 3, 12, 3
[interaction]
model = ladder
coupling = 0.1
strength = 1.0
[transport]
mode = markovian
n0 = 0.5, 0.1, 0.3
t_end = 200.0
dt = 0.05
output_every = 1.0
""",
    "renorm-compare": """
[modes]
energies = 1.0, 2.1, 3.0
statistics = boson, boson, boson
cutoffs = 3, 3, 3
[interaction]
model = ladder
strength = 1.0
[renorm]
beta = 1.0
broadening = 0.05
lambdas = 0.0025, 0.005, 0.01, 0.02
satellite_mode = 1
satellite_weight = 0.5
satellite_offset = -0.2
satellite_width = 0.001
""",
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip())


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    modes: tuple[ModeSpec, ...]
    sections: dict = field(repr=False)
    seed: int = 0
    tol_exact: float = TOL_EXACT
    tol_integrated: float = TOL_INTEGRATED
    rtol: float = 1e-10
    atol: float = 1e-13
    max_fock_dim: int = MAX_FOCK_DIM

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def floats(self, section: str, key: str, default=()) -> tuple[float, ...]:
        raw = self.get(section, key)
        try:
            return default if raw is None else _floats(raw)
        except ValueError as exc:
            raise ConfigurationError(f"[{section}] {key}: expected numbers, got {raw!r}") from exc

    def ints(self, section: str, key: str, default=()) -> tuple[int, ...]:
        raw = self.get(section, key)
        try:
            return default if raw is None else _ints(raw)
        except ValueError as exc:
            raise ConfigurationError(f"[{section}] {key}: expected integers, got {raw!r}") from exc

    def number(self, section: str, key: str, default: float | None = None) -> float:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigurationError(f"[{section}] {key} is required")
            return float(default)
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"[{section}] {key}: expected a number, got {raw!r}") from exc

    def flag(self, section: str, key: str, default: bool = False) -> bool:
        raw = self.get(section, key)
        if raw is None:
            return default
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"[{section}] {key}: expected a boolean, got {raw!r}")

    def canonical(self) -> str:
        """Normalized text of every setting that can influence the outputs."""
        lines = [f"kind={self.kind}", f"seed={self.seed}"]
        for name in ("tol_exact", "tol_integrated", "rtol", "atol", "max_fock_dim"):
            lines.append(f"{name}={getattr(self, name)!r}")
        for sec in sorted(self.sections):
            for key in sorted(self.sections[sec]):
                lines.append(f"{sec}.{key}={' '.join(self.sections[sec][key].split())}")
        return "\n".join(lines)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _parse_modes(sections) -> tuple[ModeSpec, ...]:
    sec = sections.get("modes")
    if sec is None:
        raise ConfigurationError("[modes] section is required")
    try:
        energies = _floats(sec.get("energies", ""))
        stats = [s.strip().lower() for s in sec.get("statistics", "").split(",") if s.strip()]
        cutoffs = _ints(sec["cutoffs"]) if "cutoffs" in sec else tuple(1 for _ in energies)
    except ValueError as exc:
        raise ConfigurationError(f"[modes]: {exc}") from exc
    if not energies:
        raise ConfigurationError("[modes] energies: at least one mode is required")
    if len(stats) != len(energies) or len(cutoffs) != len(energies):
        raise ConfigurationError("[modes]: energies, statistics and cutoffs must have equal length")
    modes = []
    for e, s, c in zip(energies, stats, cutoffs):
        if s == "boson":
            if c < 1:
                raise ConfigurationError(f"[modes] cutoffs: boson cutoff must be >= 1, got {c}")
            modes.append(ModeSpec.boson(e, c))
        elif s == "fermion":
            modes.append(ModeSpec.fermion(e))
        else:
            raise ConfigurationError(f"[modes] statistics: unknown statistics {s!r}")
    return tuple(modes)


def _read(text: str, source: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"config parse error: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def load_config(kind: str, path: str | None = None, seed: int | None = None,
                environ=None) -> ScenarioConfig:
    """Parse a scenario file on top of the built-in defaults for ``kind``."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown run kind {kind!r}; expected one of {', '.join(KINDS)}")
    sections = _read(DEFAULTS[kind], "<defaults>")
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        sections.update(_read(text, path))  # a section in the file replaces the built-in one
    run = sections.pop("run", {})
    if "kind" in run and run["kind"] != kind:
        raise ConfigurationError(f"[run] kind: file declares {run['kind']!r} but {kind!r} was requested")
    environ = os.environ if environ is None else environ
    for var, (sec, key) in ENV_OVERRIDES.items():
        if var in environ:
            sections.setdefault(sec, {})[key] = environ[var]
    tol = sections.get("tolerances", {})

    def positive(key, default):
        raw = tol.get(key)
        try:
            val = default if raw is None else float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"[tolerances] {key}: expected a number, got {raw!r}") from exc
        if not val > 0:
            raise ConfigurationError(f"[tolerances] {key}: must be positive, got {val}")
        return val

    try:
        seed = int(run.get("seed", 0)) if seed is None else int(seed)
        max_dim = int(run.get("max_fock_dim", MAX_FOCK_DIM))
    except ValueError as exc:
        raise ConfigurationError(f"[run]: {exc}") from exc
    return ScenarioConfig(
        kind=kind,
        modes=_parse_modes(sections),
        sections=sections,
        seed=seed,
        tol_exact=positive("exact", TOL_EXACT),
        tol_integrated=positive("integrated", TOL_INTEGRATED),
        rtol=positive("rtol", 1e-10),
        atol=positive("atol", 1e-13),
        max_fock_dim=max_dim,
    )
