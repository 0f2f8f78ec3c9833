"""The class-loss weight schedule shared by both solvers."""

from __future__ import annotations

from dataclasses import dataclass, field


def update_c(c: float, found: bool) -> float:
    """Next class-loss weight: c*10 after a failed round, c/2 after a success."""
    c = float(c)
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    return c / 2.0 if found else c * 10.0


@dataclass(frozen=True)
class NotFound:
    """A completed search that produced no valid explanation.

    This is a reported outcome, not an exception: the schedule ran to the end
    and every iterate failed the validity test.
    """

    reason: str
    c_schedule: tuple[float, ...]
    diverged_rounds: tuple[int, ...] = field(default=())
