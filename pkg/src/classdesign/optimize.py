"""Coordinate-exchange design search with terminal re-evaluation of the
last visited designs, and seed-reproducible multi-start."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Design, DesignSpace, RngStream, as_stream, canonicalize_design, validate_design

log = logging.getLogger(__name__)

FULL_GRID = "full-grid"
EXCLUDE_CURRENT = "exclude-current-points"
POLICIES = (FULL_GRID, EXCLUDE_CURRENT)

# phases of a single run's stream
_INIT, _SWEEP, _TERMINAL, _START = 0, 1, 2, 3

LossFn = Callable[[Design, RngStream], object]


def _value(est) -> float:
    return float(getattr(est, "value", est))


@dataclass(frozen=True)
class SearchConfig:
    p: int = 6
    q: int = 10
    restarts: int = 20
    policy: str | None = None
    max_sweeps: int = 100
    threads: int = 1

    def __post_init__(self):
        if self.p < 1 or self.q < 1 or self.restarts < 1:
            raise ValueError("p, q and restarts must be at least 1")
        if self.policy is not None and self.policy not in POLICIES:
            raise ValueError(f"unknown exchange policy {self.policy!r}")


@dataclass(frozen=True)
class Visit:
    design: Design
    loss: float
    sweep: int


@dataclass
class RunResult:
    design: Design
    avg_loss: float
    init: Design
    init_loss: float
    history: list[Visit]
    terminal: list[tuple[Design, list[float]]]
    sweeps: int
    evaluations: int
    warnings: list[str] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)


@dataclass
class SearchResult:
    design: Design
    avg_loss: float
    best_restart: int
    runs: list[RunResult]
    evaluations: int
    wall_time: float

    def to_record(self) -> dict:
        return {
            "design": [list(b) for b in self.design.blocks],
            "avg_loss": self.avg_loss,
            "best_restart": self.best_restart,
            "evaluations": self.evaluations,
            "restarts": [
                {
                    "init": [list(b) for b in r.init.blocks],
                    "init_loss": r.init_loss,
                    "design": [list(b) for b in r.design.blocks],
                    "avg_loss": r.avg_loss,
                    "sweeps": r.sweeps,
                    "evaluations": r.evaluations,
                    "history": [{"design": [list(b) for b in v.design.blocks], "loss": v.loss, "sweep": v.sweep}
                                for v in r.history],
                    "warnings": r.warnings,
                }
                for r in self.runs
            ],
        }


def default_policy(space: DesignSpace) -> str:
    return EXCLUDE_CURRENT if space.policy == "distinct" else FULL_GRID


def candidates(design: Design, space: DesignSpace, group: int, pos: int, policy: str) -> list[float]:
    """Replacement values for one coordinate, in grid order.

    The current value is never a candidate. ``exclude-current-points``
    also drops every value already used in the coordinate's group.
    """
    spec = space.groups[group]
    block = design.blocks[group]
    if policy == EXCLUDE_CURRENT:
        if not spec.distinct:
            raise ValueError("exclude-current-points needs a group with distinct points")
        used = set(block)
        return [v for v in spec.grid if v not in used]
    if spec.distinct:
        raise ValueError("full-grid exchange would repeat points in a distinct group")
    return [v for v in spec.grid if v != block[pos]]


def _evaluate_all(loss_fn: LossFn, designs: list[Design], streams: list[RngStream], pool) -> list[float]:
    if pool is None:
        return [_value(loss_fn(d, s)) for d, s in zip(designs, streams)]
    return [_value(v) for v in pool.map(loss_fn, designs, streams)]


def coordinate_exchange(loss_fn: LossFn, space: DesignSpace, init: Design, policy: str | None = None,
                        p: int = 6, q: int = 10, rng: RngStream | int | None = None, *,
                        max_sweeps: int = 100, pool: ThreadPoolExecutor | None = None) -> RunResult:
    """One run of coordinate exchange from ``init``.

    Sweeps the coordinates, estimating the loss at every candidate
    replacement and accepting the best only if it is strictly below the
    current loss, until a whole sweep makes no swap. The last min(h, p)
    accepted designs (or ``init`` when none was) are then re-estimated
    ``q`` times each and the lowest average wins.
    """
    report = validate_design(init, space)
    if not report.ok:
        raise ValueError(f"invalid initial design: {'; '.join(report.violations)}")
    policy = policy or default_policy(space)
    stream = as_stream(rng)
    # ``working`` keeps every coordinate in its own slot for the whole run;
    # time groups are sorted only when a design is evaluated or recorded
    working = Design(init.blocks)
    current = canonicalize_design(working, space)
    loss = init_loss = _value(loss_fn(current, stream.split(_INIT)))
    evaluations = 1
    history: list[Visit] = []
    warnings: list[str] = []
    events: list[dict] = []
    sweep = 0
    coords = space.coordinate_map()
    while True:
        swapped = False
        s_sweep = stream.split(_SWEEP).split(sweep)
        for c, (g, pos) in enumerate(coords):
            values = candidates(working, space, g, pos, policy)
            if not values:
                warnings.append(f"sweep {sweep}: no candidates for coordinate {c}")
                continue
            raw = [working.replace(g, pos, v) for v in values]
            trials = [canonicalize_design(r, space) for r in raw]
            s_coord = s_sweep.split(c)
            losses = _evaluate_all(loss_fn, trials, [s_coord.split(k) for k in range(len(trials))], pool)
            evaluations += len(trials)
            k = int(np.argmin(losses))
            accepted = losses[k] < loss
            events.append({"sweep": sweep, "coordinate": c, "candidates": len(trials),
                           "best": losses[k], "accepted": bool(accepted)})
            if accepted:
                working, current, loss = raw[k], trials[k], losses[k]
                history.append(Visit(current, loss, sweep))
                swapped = True
        sweep += 1
        if not swapped:
            break
        if sweep >= max_sweeps:
            warnings.append(f"stopped after {max_sweeps} sweeps with swaps still occurring")
            log.warning(warnings[-1])
            break
    finalists = [v.design for v in history[-p:]] if history else [current]
    terminal = []
    s_term = stream.split(_TERMINAL)
    for i, d in enumerate(finalists):
        reps = _evaluate_all(loss_fn, [d] * q, [s_term.split(i).split(k) for k in range(q)], pool)
        evaluations += q
        terminal.append((d, reps))
    avgs = [float(np.mean(r)) for _, r in terminal]
    best = int(np.argmin(avgs))
    return RunResult(terminal[best][0], avgs[best], init, init_loss, history, terminal, sweep, evaluations,
                     warnings, events)


def run_stream(seed: RngStream | int | None, restart: int) -> RngStream:
    return as_stream(seed).split(restart)


def initial_design(space: DesignSpace, stream: RngStream) -> Design:
    return space.random_design(stream.split(_START).generator())


def multi_start_search(loss_fn: LossFn, space: DesignSpace, cfg: SearchConfig = SearchConfig(),
                       rng: RngStream | int | None = None, *, inits: list[Design] | None = None) -> SearchResult:
    """Independent coordinate-exchange runs; the lowest average loss wins.

    Restart ``i`` uses stream ``split(i)`` of ``rng`` for its random start
    and every loss estimate, so results do not depend on ``cfg.threads``.
    Ties go to the lowest restart index.
    """
    t0 = time.perf_counter()
    n = len(inits) if inits is not None else cfg.restarts
    streams = [run_stream(rng, i) for i in range(n)]
    starts = inits if inits is not None else [initial_design(space, s) for s in streams]

    def run(i: int) -> RunResult:
        return coordinate_exchange(loss_fn, space, starts[i], cfg.policy, cfg.p, cfg.q, streams[i],
                                   max_sweeps=cfg.max_sweeps)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            runs = list(pool.map(run, range(n)))
    else:
        runs = [run(i) for i in range(n)]
    best = min(range(n), key=lambda i: (runs[i].avg_loss, i))
    return SearchResult(runs[best].design, runs[best].avg_loss, best, runs,
                        sum(r.evaluations for r in runs), time.perf_counter() - t0)
