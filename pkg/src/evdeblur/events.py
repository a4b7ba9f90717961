"""Event stream container shared by the simulator, losses, and file IO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """Stream content violates an invariant; readers reject, never repair."""


@dataclass
class EventStream:
    """Time-sorted events plus the sensor geometry they were captured on.

    Timestamps are exposure-normalized to [0, 1]. ``contrast`` records the
    threshold used at generation time (informational; the measured-side
    accumulation is invariant to it after normalization).
    """

    t: np.ndarray  # float64, non-decreasing
    x: np.ndarray  # int, 0 <= x < width
    y: np.ndarray  # int, 0 <= y < height
    p: np.ndarray  # int8, -1 or +1
    width: int
    height: int
    contrast: float

    def __len__(self) -> int:
        return len(self.t)

    def validate(self) -> None:
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event field lengths disagree")
        if n and np.any(np.diff(self.t) < 0):
            raise ValidationError("event timestamps are not sorted")
        if n and (self.x.min() < 0 or self.x.max() >= self.width):
            raise ValidationError("event x coordinate out of bounds")
        if n and (self.y.min() < 0 or self.y.max() >= self.height):
            raise ValidationError("event y coordinate out of bounds")
        if n and not np.all(np.abs(self.p.astype(np.int64)) == 1):
            raise ValidationError("event polarity must be -1 or +1")

    @classmethod
    def empty(cls, width: int, height: int, contrast: float) -> "EventStream":
        return cls(
            t=np.zeros(0, dtype=np.float64),
            x=np.zeros(0, dtype=np.int64),
            y=np.zeros(0, dtype=np.int64),
            p=np.zeros(0, dtype=np.int8),
            width=width,
            height=height,
            contrast=contrast,
        )
