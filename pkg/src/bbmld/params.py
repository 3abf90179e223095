"""Model parameters shared by the simulators, the exponent solver and the CLI."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

MODELS = ("bbm", "lbbm", "nbbm", "cbrw")


@dataclass(frozen=True)
class ModelParams:
    """Everything needed to define one particle system.

    ``L`` only matters for ``lbbm``, ``N`` for ``nbbm`` and ``mu`` for
    ``cbrw``; the other fields are carried along and ignored. ``sigma`` is the
    diffusion scale of the continuous models and the lattice spacing of the
    CBRW. ``branch_rate`` is 1 for the BBM family and ``r`` for the CBRW; a
    zero rate gives the non-branching walk used by the toy rare-event targets.
    """

    model: str = "bbm"
    sigma: float = 1.0
    branch_rate: float = 1.0
    L: float = math.inf
    N: int = 2**62
    mu: float = 0.0
    check_dt: float | None = None

    def __post_init__(self):
        model = self.model.lower()
        object.__setattr__(self, "model", model)
        if model not in MODELS:
            raise ValueError(f"model: unknown model {self.model!r}, expected one of {MODELS}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma: must be finite and >= 0, got {self.sigma}")
        if self.sigma == 0 and model == "cbrw":
            raise ValueError("sigma: lattice spacing must be > 0")
        if not self.branch_rate >= 0:
            raise ValueError(f"branch_rate: must be >= 0, got {self.branch_rate}")
        if not self.L > 0:
            raise ValueError(f"L: must be > 0, got {self.L}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N: must be an integer >= 1, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not self.mu >= 0:
            raise ValueError(f"mu: must be >= 0, got {self.mu}")
        if self.check_dt is not None and not self.check_dt > 0:
            raise ValueError(f"check_dt: must be > 0, got {self.check_dt}")

    @property
    def checkpoint_interval(self) -> float:
        """Elimination checkpoint spacing for the L-BBM (default sigma^2/100)."""
        if self.check_dt is not None:
            return float(self.check_dt)
        return max(self.sigma**2, 1e-12) / 100.0

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)
