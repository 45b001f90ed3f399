"""Event records of the peeling exploration.

Each peeling step reveals one triangle and is classified as one of a small
set of events.  The engine records those events, the sampled path rows and
the layer completions in the plain dataclasses below so that traces can be
compared, rescaled and exported without touching the engine again.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

INIT = "init"
NEW_VERTEX = "new_vertex"
SWALLOW_LEFT = "swallow_left"
SWALLOW_RIGHT = "swallow_right"
CEMETERY = "cemetery"

EVENT_KINDS = (INIT, NEW_VERTEX, SWALLOW_LEFT, SWALLOW_RIGHT, CEMETERY)


@dataclass(frozen=True)
class TraceRow:
    """One sampled point of the exploration.

    Attributes
    ----------
    step:
        Peeling step index ``i``.
    perimeter, volume, height:
        ``P_i``, ``V_i`` and ``h_i`` after the step.
    event:
        Kind of the step that produced the row (``"init"`` for step 0).
    """

    step: int
    perimeter: int
    volume: int
    height: int
    event: str


@dataclass(frozen=True)
class LayerRecord:
    """Completion of a layer at step ``sigma_k``.

    Attributes
    ----------
    step:
        First step at which the height reaches ``height``.
    height:
        The new height ``k``.
    perimeter, volume:
        Hull perimeter and volume at that step.
    inverse_perimeter_sum:
        ``sum_{j < step} 1 / P_j``, the discrete height integral.
    """

    step: int
    height: int
    perimeter: int
    volume: int
    inverse_perimeter_sum: float


@dataclass(frozen=True)
class TargetHit:
    """First visit of a target perimeter."""

    target: int
    step: int
    height: int


def event_for_outcome(outcome: Optional[int], right_side: bool) -> str:
    if outcome is None:
        return CEMETERY
    if outcome == -1:
        return NEW_VERTEX
    return SWALLOW_RIGHT if right_side else SWALLOW_LEFT
