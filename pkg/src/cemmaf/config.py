"""Run configuration: every solver hyperparameter with its reference default.

The file format is flat ``key=value`` text.  Unknown keys are hard errors so
a typo can never silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields

from .pn import PNHyperParams
from .pp import PPHyperParams


class ConfigError(Exception):
    """Unknown key, bad value, or out-of-range hyperparameter."""


@dataclass(frozen=True)
class RunConfig:
    kappa: float = 5.0
    gamma: float = 100.0
    beta_pn: float = 100.0
    eta: float = 1.0
    nu: float = 1.0
    beta_pp: float = 0.1
    c0: float = 1.0
    rounds: int = 9
    iters_pn: int = 1000
    iters_pp: int = 100
    step: float = 0.01
    n_superpixels: int = 200
    background: float = 0.0
    seed: int = 0

    def __post_init__(self):
        try:
            self.pn_params()
            self.pp_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_superpixels < 1:
            raise ConfigError(f"n_superpixels must be >= 1, got {self.n_superpixels}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")

    def pn_params(self) -> PNHyperParams:
        return PNHyperParams(
            kappa=self.kappa, gamma=self.gamma, beta=self.beta_pn, eta=self.eta,
            nu=self.nu, c0=self.c0, rounds=self.rounds, iters=self.iters_pn, step=self.step,
        )

    def pp_params(self) -> PPHyperParams:
        return PPHyperParams(
            kappa=self.kappa, gamma=self.gamma, beta=self.beta_pp, c0=self.c0,
            rounds=self.rounds, iters=self.iters_pp, step=self.step,
            background=self.background,
        )

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.as_dict().items())


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INT_FIELDS = {"rounds", "iters_pn", "iters_pp", "n_superpixels", "seed"}


def parse_config(text: str) -> RunConfig:
    """Parse ``key=value`` lines ('#' comments allowed) into a RunConfig."""
    values: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: want key=value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {ln}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"config line {ln}: duplicate key {key!r}")
        try:
            values[key] = int(val) if key in _INT_FIELDS else float(val)
        except ValueError:
            raise ConfigError(f"config line {ln}: bad value for {key!r}: {val!r}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    from pathlib import Path

    return parse_config(Path(path).read_text(encoding="ascii"))
