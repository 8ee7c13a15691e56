"""Initial particle configurations."""

from dataclasses import dataclass, field

import numpy as np

from . import core
from .errors import DomainError

KINDS = {
    "tanh": {"amplitude": 4.0, "steepness": 10.0, "center_p": 0.5},
    "uniform": {"half_width": 1.0},
    "two_blocks": {"separation": 4.0, "block_width": 1.0},
    "explicit": {"positions": None},
}


@dataclass(frozen=True)
class InitialProfile:
    """A named family of initial data sampled at N particles.

    ``tanh`` with amplitude 4, steepness 10 and center_p 0.5 samples
    X0(p) = 4 tanh(10 (p - 0.5)) at the midpoints p_i = (i - 1/2)/N.
    """

    kind: str
    n: int
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown initial profile kind {self.kind!r}")
        unknown = set(self.options) - set(KINDS[self.kind])
        if unknown:
            raise DomainError(f"unknown options for {self.kind}: {sorted(unknown)}")
        if self.kind == "explicit":
            pos = self.options.get("positions")
            if pos is None:
                raise DomainError("explicit profile needs positions")
            object.__setattr__(self, "options", {**self.options, "positions": tuple(float(v) for v in pos)})
            pos = self.options["positions"]
            if len(pos) != self.n:
                raise DomainError(f"explicit profile has {len(pos)} positions, n = {self.n}")
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"n must be an integer >= 2, got {self.n}")
        object.__setattr__(self, "options", {k: (v if k == "positions" else float(v))
                                             for k, v in self.options.items()})
        self.positions()

    def option(self, name):
        return self.options.get(name, KINDS[self.kind][name])

    def positions(self):
        n = self.n
        if self.kind == "tanh":
            p = (np.arange(1, n + 1) - 0.5) / n
            x = self.option("amplitude") * np.tanh(self.option("steepness") * (p - self.option("center_p")))
        elif self.kind == "uniform":
            hw = self.option("half_width")
            x = np.linspace(-hw, hw, n)
        elif self.kind == "two_blocks":
            w, s = self.option("block_width"), self.option("separation")
            if not (w > 0 and s > w):
                raise DomainError("two_blocks needs 0 < block_width < separation")
            left = n // 2
            x = np.concatenate([
                np.linspace(-s / 2 - w / 2, -s / 2 + w / 2, left),
                np.linspace(s / 2 - w / 2, s / 2 + w / 2, n - left),
            ])
        else:
            x = np.asarray(self.options["positions"], dtype=float)
        return core.center(x)


def tanh_profile(n, amplitude=4.0, steepness=10.0, center_p=0.5):
    return InitialProfile("tanh", n, {"amplitude": amplitude, "steepness": steepness, "center_p": center_p})
