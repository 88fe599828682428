"""Epoch-indexed learning rate schedules: exponential and polynomial decay,
with optional restarts that shrink the base rate to 65% and reset the
epoch counter."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "exponential"
    lr0: float = 1e-4
    alpha: float = 0.98
    p: float = 0.9
    n: int = 50
    restart_epochs: tuple[int, ...] = field(default_factory=tuple)
    restart_factor: float = 0.65

    def __post_init__(self):
        if self.kind not in ("exponential", "polynomial"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0,1)")
        if self.p <= 0:
            raise ValueError("p must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        restarts = tuple(self.restart_epochs)
        if list(restarts) != sorted(set(restarts)):
            raise ValueError("restart_epochs must be strictly increasing")
        if restarts and not (restarts[0] >= 1 and restarts[-1] < self.n):
            raise ValueError("restart_epochs must lie in [1, n)")
        object.__setattr__(self, "restart_epochs", restarts)


def lr_at(cfg: ScheduleConfig, epoch: int) -> float:
    """Learning rate for `epoch` in [0, n]."""
    if not 0 <= epoch <= cfg.n:
        raise ValueError(f"epoch {epoch} out of range [0, {cfg.n}]")
    lr0 = cfg.lr0
    start = 0
    for r in cfg.restart_epochs:
        if epoch >= r:
            lr0 *= cfg.restart_factor
            start = r
        else:
            break
    i = epoch - start
    if cfg.kind == "exponential":
        return lr0 * cfg.alpha**i
    return lr0 * (1.0 - i / cfg.n) ** cfg.p
