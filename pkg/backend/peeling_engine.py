"""
Peeling Engine Backend Module

This module runs the peeling-by-layers exploration of a Boltzmann disk (or of
the UIPT) as a Markov chain on perimeter, volume and height, records its
stopping data and produces rescaled views of the recorded paths.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .annulus_laws import discrete_hit_prob, height_scale, hit_prob, time_scale, volume_scale
from .peel_events import (
    EVENT_KINDS,
    INIT,
    LayerRecord,
    TargetHit,
    TraceRow,
    event_for_outcome,
)
from .peeling_kernels import KernelTable, VolumeSampler, sample_step, sample_swallowed_volume
from .replicate_pool import as_stream, map_replicates, replicate_rng
from .stat_checks import SummaryReport, binomial_se, wilson_ci

# Enhanced imports with fallbacks
try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


SIMPLE_EDGE = "simple-edge"
LOOP = "loop"
INIT_MODES = (SIMPLE_EDGE, LOOP)

OUTCOME_HIT = "hit"
OUTCOME_DEATH = "death"
OUTCOME_BUDGET = "budget"

# h ~ sqrt(3/2) h_raw / sqrt(L) against 2^(-3/2) sum 1/P_j / sqrt(L)
HEIGHT_COEFFICIENT = math.sqrt(1.5)
INTEGRAL_COEFFICIENT = 2.0**-1.5


@dataclass(frozen=True)
class PeelState:
    """
    Live exploration state.

    Attributes
    ----------
    step:
        Number of peeling steps performed.
    perimeter, volume, height:
        ``p``, ``v`` and ``h``.
    cur, nxt:
        Boundary vertices at height ``h`` and ``h + 1``; ``cur + nxt = p``.
    alive:
        False once the cemetery has been reached.
    """

    step: int
    perimeter: int
    volume: int
    height: int
    cur: int
    nxt: int
    alive: bool = True


def init_state(mode: str = SIMPLE_EDGE) -> PeelState:
    """
    Initial state of the exploration.

    The simple edge has its root at height 0 and its other endpoint at
    height 1; the loop has a single vertex.
    """
    if mode == SIMPLE_EDGE:
        return PeelState(step=0, perimeter=2, volume=2, height=0, cur=1, nxt=1)
    if mode == LOOP:
        return PeelState(step=0, perimeter=1, volume=1, height=0, cur=1, nxt=0)
    raise ValueError(f"init mode must be one of {INIT_MODES}, got {mode!r}")


def _consume(cur: int, nxt: int, m: int, right_side: bool) -> Tuple[int, int]:
    if right_side:
        taken = min(m, cur)
        return cur - taken, nxt - (m - taken)
    taken = min(m, nxt)
    return cur - (m - taken), nxt - taken


def apply_outcome(
    state: PeelState, outcome: Optional[int], right_side: bool = True, swallowed: int = 0
) -> Tuple[PeelState, str]:
    """
    Apply one peeling outcome to a state.

    Args:
        state: Alive state
        outcome: m in [-1, p-1], or None for the cemetery
        right_side: Whether a swallowed hole lies on the height-h side
        swallowed: Internal vertices K of the swallowed hole

    Returns:
        tuple: (next state, event kind)
    """
    if not state.alive:
        raise ValueError("cannot step a dead exploration")
    event = event_for_outcome(outcome, right_side)
    if outcome is None:
        return replace(state, step=state.step + 1, alive=False), event

    p, v, cur, nxt = state.perimeter, state.volume, state.cur, state.nxt
    if outcome == -1:
        p += 1
        v += 1
        nxt += 1
    else:
        if not 0 <= outcome <= p - 1:
            raise ValueError(f"outcome {outcome} out of range for perimeter {p}")
        cur, nxt = _consume(cur, nxt, outcome, right_side)
        p -= outcome
        v += swallowed

    h = state.height
    if cur == 0:
        h += 1
        cur, nxt = nxt, 0
    return PeelState(state.step + 1, p, v, h, cur, nxt, True), event


@dataclass
class PeelTrace:
    """
    Recorded exploration.

    Attributes
    ----------
    init_mode, scale, disk_boundary:
        Initial state, rescaling parameter L and the disk boundary (None for the UIPT).
    seed, replicate:
        Stream that produced the trace.
    stride:
        Steps between recorded rows; the final step is always recorded.
    rows, layers, hits:
        Sampled path, layer completions and first visits of the targets.
    outcome:
        ``"hit"``, ``"death"`` or ``"budget"``.
    death_step:
        Step S at which the cemetery was reached, if it was.
    height_gap:
        sup over all steps of |sqrt(3/2) h_i - 2^(-3/2) sum_{j<i} 1/P_j|.
    """

    init_mode: str
    scale: float
    disk_boundary: Optional[int]
    seed: Optional[int]
    replicate: int
    stride: int
    rows: List[TraceRow] = field(default_factory=list)
    layers: List[LayerRecord] = field(default_factory=list)
    hits: Dict[int, TargetHit] = field(default_factory=dict)
    outcome: str = OUTCOME_BUDGET
    death_step: Optional[int] = None
    steps: int = 0
    max_perimeter: int = 0
    height_gap: float = 0.0
    event_counts: Dict[str, int] = field(default_factory=dict)
    volumes_sampled: bool = False
    final: Optional[PeelState] = None

    def hit(self, target: int) -> bool:
        return target in self.hits


@dataclass(frozen=True)
class RescaledPath:
    """Rescaled samples (t, P, V, h) of a trace, with the rescaled stopping data."""

    t: np.ndarray
    p_hat: np.ndarray
    v_hat: np.ndarray
    h_hat: np.ndarray
    events: List[str]
    death_time: Optional[float]
    hit_radii: Dict[int, float]


def default_stride(L: float) -> int:
    return max(1, int(L**1.5 // 2048))


class PeelingEngine:
    """
    Peeling-by-layers exploration driven by a kernel table.

    This class is responsible for:
    - Drawing peeling outcomes, swallow sides and swallowed volumes
    - Maintaining the layer counters and the height
    - Running explorations to a target, to the cemetery or to a step budget
    - Notifying listeners of layer completions and target hits
    """

    def __init__(
        self,
        kernel: KernelTable,
        vols: Optional[VolumeSampler] = None,
        scale: Optional[float] = None,
        stride: Optional[int] = None,
    ):
        """
        Initialize the engine.

        Args:
            kernel: Transition law of the perimeter chain
            vols: Swallowed-volume sampler; volumes are not sampled when omitted
            scale: Rescaling parameter L (defaults to the disk boundary, else 1)
            stride: Steps between recorded rows (defaults to L^(3/2) / 2048)
        """
        self.kernel = kernel
        self.vols = vols
        self.scale = float(scale or kernel.disk_boundary or 1)
        self.stride = stride or default_stride(self.scale)
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

        self.on_layer_complete_callback: Optional[Callable[[LayerRecord], None]] = None
        self.on_target_hit_callback: Optional[Callable[[TargetHit], None]] = None

    def set_callbacks(
        self,
        on_layer_complete: Optional[Callable[[LayerRecord], None]] = None,
        on_target_hit: Optional[Callable[[TargetHit], None]] = None,
    ):
        """
        Set callback functions for exploration events.

        Args:
            on_layer_complete: Called with each new LayerRecord
            on_target_hit: Called with the first visit of each target
        """
        self.on_layer_complete_callback = on_layer_complete
        self.on_target_hit_callback = on_target_hit

    def _draw(self, perimeter: int, stream) -> Tuple[Optional[int], bool, int]:
        outcome = sample_step(self.kernel, perimeter, stream)
        if outcome is None or outcome < 0:
            return outcome, True, 0
        right_side = stream.uniform() < 0.5
        swallowed = sample_swallowed_volume(self.vols, outcome, stream) if self.vols is not None else 0
        return outcome, right_side, swallowed

    def step(self, state: PeelState, rng) -> PeelState:
        """
        Perform one peeling step.

        Args:
            state: Alive state
            rng: numpy Generator or UniformStream

        Returns:
            PeelState: the state after the step
        """
        outcome, right_side, swallowed = self._draw(state.perimeter, as_stream(rng))
        return apply_outcome(state, outcome, right_side, swallowed)[0]

    def run_until(
        self,
        init: PeelState,
        targets: Iterable[int] = (),
        max_steps: Optional[int] = None,
        rng=None,
        seed: Optional[int] = None,
        replicate: int = 0,
        init_mode: str = SIMPLE_EDGE,
    ) -> PeelTrace:
        """
        Run the exploration until every target is hit, the cemetery is
        reached or max_steps steps have been performed.

        Args:
            init: Starting state
            targets: Perimeters whose first visit is recorded
            max_steps: Step budget (None for no budget)
            rng: numpy Generator or UniformStream
            seed: Seed echoed into the trace
            replicate: Replicate index echoed into the trace
            init_mode: Initial mode echoed into the trace

        Returns:
            PeelTrace: recorded exploration
        """
        pending = set(int(t) for t in targets)
        if not pending and max_steps is None:
            raise ValueError("run_until needs a target or a finite max_steps")
        if max_steps is not None and max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {max_steps}")
        stream = as_stream(rng if rng is not None else np.random.default_rng(seed))

        trace = PeelTrace(
            init_mode=init_mode,
            scale=self.scale,
            disk_boundary=self.kernel.disk_boundary,
            seed=seed,
            replicate=replicate,
            stride=self.stride,
            volumes_sampled=self.vols is not None,
        )
        counts = dict.fromkeys(EVENT_KINDS, 0)
        state = init
        p0 = state.perimeter
        max_perimeter = p0
        inv_sum = 0.0
        gap = 0.0
        event = INIT
        trace.rows.append(TraceRow(state.step, state.perimeter, state.volume, state.height, INIT))
        self._visit(trace, pending, state)

        while pending and state.alive and (max_steps is None or state.step < max_steps):
            inv_sum += 1.0 / state.perimeter
            outcome, right_side, swallowed = self._draw(state.perimeter, stream)
            previous_height = state.height
            state, event = apply_outcome(state, outcome, right_side, swallowed)
            counts[event] += 1
            if not state.alive:
                trace.death_step = state.step
                break
            if state.perimeter > max_perimeter:
                max_perimeter = state.perimeter
            gap = max(gap, abs(HEIGHT_COEFFICIENT * state.height - INTEGRAL_COEFFICIENT * inv_sum))
            if state.height != previous_height:
                record = LayerRecord(state.step, state.height, state.perimeter, state.volume, inv_sum)
                trace.layers.append(record)
                if self.on_layer_complete_callback:
                    self.on_layer_complete_callback(record)
            if state.step % self.stride == 0:
                trace.rows.append(
                    TraceRow(state.step, state.perimeter, state.volume, state.height, event)
                )
            if state.perimeter in pending:
                self._visit(trace, pending, state)

        if trace.rows[-1].step != state.step:
            trace.rows.append(TraceRow(state.step, state.perimeter, state.volume, state.height, event))
        if not state.alive:
            trace.outcome = OUTCOME_DEATH
        elif not pending:
            trace.outcome = OUTCOME_HIT
        else:
            trace.outcome = OUTCOME_BUDGET

        trace.steps = state.step
        trace.max_perimeter = max_perimeter
        trace.height_gap = gap
        trace.event_counts = counts
        trace.final = state
        self._check_hits(trace, targets, p0)
        return trace

    def _visit(self, trace: PeelTrace, pending: set, state: PeelState) -> None:
        if state.perimeter not in pending:
            return
        pending.discard(state.perimeter)
        hit = TargetHit(state.perimeter, state.step, state.height)
        trace.hits[state.perimeter] = hit
        if self.on_target_hit_callback:
            self.on_target_hit_callback(hit)

    @staticmethod
    def _check_hits(trace: PeelTrace, targets: Iterable[int], p0: int) -> None:
        # upward steps are +1, so a target above p0 is visited iff the running max reaches it
        for target in targets:
            if target >= p0 and trace.hit(target) != (trace.max_perimeter >= target):
                raise RuntimeError(
                    f"replicate {trace.replicate}: target {target} hit={trace.hit(target)} "
                    f"but running max is {trace.max_perimeter}"
                )


def run_until(
    init: PeelState,
    kernel: KernelTable,
    vols: Optional[VolumeSampler],
    targets: Iterable[int],
    max_steps: Optional[int],
    rng,
    **kwargs,
) -> PeelTrace:
    """Functional form of PeelingEngine.run_until."""
    return PeelingEngine(kernel, vols).run_until(init, targets, max_steps, rng, **kwargs)


def rescale(trace: PeelTrace) -> RescaledPath:
    """
    Rescale a trace by L: time by L^(3/2), perimeter by L, volume by
    (3/4) L^-2 and height by sqrt(3/2) L^-1/2.
    """
    L = trace.scale
    steps = np.array([row.step for row in trace.rows], dtype=np.float64)
    c_height = height_scale(L)
    death_time = None
    if trace.death_step is not None:
        death_time = (trace.death_step - 1) / time_scale(L)
    return RescaledPath(
        t=steps / time_scale(L),
        p_hat=np.array([row.perimeter for row in trace.rows], dtype=np.float64) / L,
        v_hat=np.array([row.volume for row in trace.rows], dtype=np.float64) * volume_scale(L),
        h_hat=np.array([row.height for row in trace.rows], dtype=np.float64) * c_height,
        events=[row.event for row in trace.rows],
        death_time=death_time,
        hit_radii={target: c_height * hit.height for target, hit in trace.hits.items()},
    )


def height_integral_residual(trace: PeelTrace) -> float:
    """
    sup_t |h_hat_t - 2^(-3/2) int_0^t du / P_hat_u| along the whole trace.

    With t = i / L^(3/2) and P_hat = P / L, both terms carry the factor L^-1/2.
    """
    if trace.steps < 1:
        raise ValueError("height residual needs a trace with at least one step")
    return trace.height_gap / math.sqrt(trace.scale)


@dataclass
class ExplorationTask:
    """
    One exploration per replicate index, picklable for the worker pool.

    Traces of replicates at or beyond keep_rows lose their rows after the run.
    """

    kernel: KernelTable
    targets: Tuple[int, ...]
    seed: int
    scale: Optional[float] = None
    max_steps: Optional[int] = None
    init_mode: str = SIMPLE_EDGE
    vols: Optional[VolumeSampler] = None
    stride: Optional[int] = None
    keep_rows: int = 0

    def __call__(self, index: int) -> PeelTrace:
        engine = PeelingEngine(
            self.kernel, self.vols if index < self.keep_rows else None, self.scale, self.stride
        )
        trace = engine.run_until(
            init_state(self.init_mode),
            self.targets,
            self.max_steps,
            replicate_rng(self.seed, index),
            seed=self.seed,
            replicate=index,
            init_mode=self.init_mode,
        )
        if index >= self.keep_rows:
            trace.rows = []
        return trace


def _check_target(target: int, init_mode: str) -> None:
    p0 = init_state(init_mode).perimeter
    if target < p0:
        raise ValueError(f"target floor(bL)={target} is below the start perimeter {p0} of {init_mode}")


def hit_kernel(
    a: float, b: float, L: int, capacity_factor: float = 1.0, init_mode: str = SIMPLE_EDGE
) -> Tuple[KernelTable, int]:
    """
    Kernel of the disk with boundary floor(aL) and the target floor(bL).

    The target must be at least the start perimeter of init_mode: a chain
    started above its target never visits it.
    """
    boundary, target = int(math.floor(a * L)), int(math.floor(b * L))
    if boundary < 1 or target < 1:
        raise ValueError(f"floor(aL) and floor(bL) must be >= 1, got {boundary}, {target}")
    _check_target(target, init_mode)
    capacity = max(64, target, int(math.ceil(capacity_factor * target)))
    return KernelTable(boundary, capacity), target


def estimate_hit_prob(
    a: float,
    b: float,
    L: int,
    N: int,
    seed: int,
    n_jobs: Optional[int] = None,
    init_mode: str = SIMPLE_EDGE,
    max_steps: Optional[int] = None,
    level: float = 0.95,
    threshold: Optional[float] = 3.0,
    config: Optional[Dict] = None,
    kernel: Optional[KernelTable] = None,
) -> SummaryReport:
    """
    Frequency with which the exploration of a disk with boundary floor(aL)
    reaches perimeter floor(bL) before the cemetery.

    Budget-exhausted runs are unresolved: they are counted separately and
    excluded from the estimate.

    Args:
        a, b: Outer and inner perimeters
        L: Scaling parameter
        N: Number of explorations
        seed: Master seed
        n_jobs: Worker processes
        init_mode: Initial state of every exploration
        max_steps: Per-exploration step budget
        level: Confidence level of the Wilson interval
        threshold: Largest passing |estimate - a/(a+b)| / SE (None for info only)
        config: Configuration echo
        kernel: Prebuilt kernel (built from a, b, L when omitted)

    Returns:
        SummaryReport: estimate against the reference a/(a+b)
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if kernel is None:
        table, target = hit_kernel(a, b, L, init_mode=init_mode)
    else:
        table, target = kernel, int(math.floor(b * L))
        _check_target(target, init_mode)
    logger.info(f"Estimating hit probability: a={a}, b={b}, L={L}, N={N}")
    task = ExplorationTask(table, (target,), seed, scale=L, max_steps=max_steps, init_mode=init_mode)
    outcomes = [trace.outcome for trace in map_replicates(task, N, n_jobs)]

    n_hit = outcomes.count(OUTCOME_HIT)
    n_death = outcomes.count(OUTCOME_DEATH)
    n_budget = outcomes.count(OUTCOME_BUDGET)
    if n_budget:
        logger.warning(f"L={L}: {n_budget} of {N} explorations exhausted the step budget")
    resolved = n_hit + n_death
    reference = hit_prob(a, b)
    p0 = init_state(init_mode).perimeter
    details = {
        "L": L,
        "disk_boundary": table.disk_boundary,
        "target": target,
        "n_hit": n_hit,
        "n_death": n_death,
        "n_budget": n_budget,
        "discrete_reference": discrete_hit_prob(table.disk_boundary, p0, target),
    }
    if resolved == 0:
        return SummaryReport(
            f"peel-hit/L={L}", config or {}, 0, math.nan, (math.nan, math.nan), reference,
            "z_score", math.nan, threshold, details,
        )
    estimate = n_hit / resolved
    se = binomial_se(reference, resolved)
    return SummaryReport(
        id=f"peel-hit/L={L}",
        config=config or {},
        n=resolved,
        estimate=estimate,
        ci=wilson_ci(n_hit, resolved, level),
        reference=reference,
        statistic_name="z_score",
        statistic=abs(estimate - reference) / se,
        threshold=threshold,
        details=details,
    )
