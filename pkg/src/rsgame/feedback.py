"""Markovian feedback controls mapping (t, x) to grid indices of both players."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import GameModel

__all__ = ["FeedbackControls", "OutOfGridControl"]


class OutOfGridControl(ValueError):
    pass


@dataclass(frozen=True)
class FeedbackControls:
    """``fn(t, x) -> (iu, iv)`` with integer index arrays of length ``len(x)``.

    ``tag`` records where the feedback came from (``constant``, ``table``,
    ``from-BSDE``, ...).  :meth:`indices` validates every output.
    """

    fn: Callable
    sizes: tuple
    tag: str = "table"

    @classmethod
    def constant(cls, model: GameModel, iu: int, iv: int, tag: str = None) -> "FeedbackControls":
        n1, n2 = model.control_grid_1.size, model.control_grid_2.size

        def fn(t, x):
            n = len(x)
            return np.full(n, iu, dtype=np.int64), np.full(n, iv, dtype=np.int64)

        return cls(fn, (n1, n2), tag or f"constant({iu},{iv})")

    def indices(self, t: float, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        iu, iv = self.fn(t, x)
        n = x.shape[0]
        iu = np.broadcast_to(np.asarray(iu), (n,))
        iv = np.broadcast_to(np.asarray(iv), (n,))
        for name, idx, size in (("u", iu, self.sizes[0]), ("v", iv, self.sizes[1])):
            if not np.issubdtype(idx.dtype, np.integer):
                if not np.all(np.equal(np.mod(idx, 1), 0)):
                    raise OutOfGridControl(f"feedback {self.tag!r} returned non-integer {name} index at t={t:g}")
            if idx.size and (idx.min() < 0 or idx.max() >= size):
                raise OutOfGridControl(f"feedback {self.tag!r} returned {name} index outside 0..{size - 1} at t={t:g}")
        return iu.astype(np.int64), iv.astype(np.int64)

    def controls(self, model: GameModel, t: float, x) -> tuple[np.ndarray, np.ndarray]:
        """Control points (not indices)."""
        iu, iv = self.indices(t, x)
        return model.control_grid_1.points[iu], model.control_grid_2.points[iv]

    def with_player(self, player: int, fn: Callable, tag: str) -> "FeedbackControls":
        """Replace one player's component by ``fn(t, x) -> indices``."""
        base = self.fn

        def combined(t, x):
            iu, iv = base(t, x)
            if player == 1:
                return fn(t, x), iv
            return iu, fn(t, x)

        return FeedbackControls(combined, self.sizes, tag)

    def component(self, player: int) -> Callable:
        base = self.fn
        return lambda t, x: base(t, x)[player - 1]
