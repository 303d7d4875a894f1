"""Hyperparameter sweeping with Pareto-front selection.

Each swept point runs the full multi-branch generation and scores a
(diversity, degeneration) objective pair; the front keeps the points not
dominated under (maximize diversity, minimize degeneration).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .metrics import corpus_degeneration, self_bleu
from .process import GenerationConfig, multi_branch

PARAM_ORDER = ("alpha", "beta", "l0", "delta", "temperature")
SAMPLING_MODES = ("grid", "random")
DEFAULT_MAX_DEGEN = 0.9


class NoAdmissiblePointError(ValueError):
    """Raised when every front point exceeds the degeneration cap."""


@dataclass(frozen=True)
class ParamSpec:
    """Either an explicit grid of values or a (min, max) range."""

    grid: tuple[float, ...] | None = None
    low: float | None = None
    high: float | None = None

    def __post_init__(self) -> None:
        if self.grid is not None:
            if len(self.grid) == 0:
                raise ValueError("grid must be nonempty")
        elif self.low is None or self.high is None:
            raise ValueError("need either a grid or a (min, max) range")
        elif self.low > self.high:
            raise ValueError("min must be <= max")

    @classmethod
    def from_dict(cls, raw: dict) -> "ParamSpec":
        if "grid" in raw:
            return cls(grid=tuple(float(v) for v in raw["grid"]))
        return cls(low=float(raw["min"]), high=float(raw["max"]))


@dataclass(frozen=True)
class SweepSpace:
    """Search space over the schedule parameters and temperature."""

    params: dict[str, ParamSpec]
    sampling: str = "grid"
    budget: int = 1

    def __post_init__(self) -> None:
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        for name in self.params:
            if name not in PARAM_ORDER:
                raise ValueError(f"unknown sweep parameter {name!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepSpace":
        params = {name: ParamSpec.from_dict(raw[name])
                  for name in PARAM_ORDER if name in raw}
        return cls(params=params,
                   sampling=raw.get("sampling", "grid"),
                   budget=int(raw.get("budget", 1)))


@dataclass(frozen=True)
class SweepPoint:
    """One evaluated parameter vector."""

    run_id: int
    params: dict[str, float]
    diversity: float
    degeneration: float


@dataclass(frozen=True)
class ParetoFront:
    points: tuple[SweepPoint, ...]


def _base_values(base_cfg: GenerationConfig) -> dict[str, float]:
    sched = base_cfg.schedule
    return {"alpha": sched.alpha, "beta": sched.beta, "l0": sched.l0,
            "delta": sched.delta, "temperature": base_cfg.temperature}


def enumerate_vectors(space: SweepSpace, base_cfg: GenerationConfig,
                      rng: np.random.Generator) -> list[dict[str, float]]:
    """Parameter vectors in documented order.

    Grid mode enumerates the cross product row-major over
    (alpha, beta, l0, delta, temperature), truncated to the budget;
    random mode draws budget vectors, uniform over ranges or uniform
    choices from explicit grids.  Parameters absent from the space stay
    at their base-config values.
    """
    base = _base_values(base_cfg)
    if space.sampling == "grid":
        axes = []
        for name in PARAM_ORDER:
            spec = space.params.get(name)
            if spec is None:
                axes.append((base[name],))
            elif spec.grid is None:
                raise ValueError(f"grid sampling requires explicit values for {name}")
            else:
                axes.append(spec.grid)
        product = itertools.islice(itertools.product(*axes), space.budget)
        return [dict(zip(PARAM_ORDER, combo)) for combo in product]
    vectors = []
    for _ in range(space.budget):
        vec = dict(base)
        for name in PARAM_ORDER:
            spec = space.params.get(name)
            if spec is None:
                continue
            if spec.grid is not None:
                vec[name] = float(spec.grid[rng.integers(len(spec.grid))])
            else:
                vec[name] = float(rng.uniform(spec.low, spec.high))
        vectors.append(vec)
    return vectors


def _configure(base_cfg: GenerationConfig, vec: dict[str, float]) -> GenerationConfig:
    sched = replace(base_cfg.schedule, alpha=vec["alpha"], beta=vec["beta"],
                    l0=vec["l0"], delta=vec["delta"])
    return replace(base_cfg, schedule=sched, temperature=vec["temperature"])


def evaluate_objectives(model, prompts, cfg: GenerationConfig) -> tuple[float, float]:
    """(diversity, degeneration) for one config over all prompts.

    Diversity is 1 - mean self-BLEU of each prompt's branch corpus;
    degeneration is the mean per-branch repetition score.
    """
    bleus = []
    degens = []
    for prompt in prompts:
        branches = multi_branch(model, prompt, cfg)
        corpus = [b.tokens for b in branches]
        bleus.append(self_bleu(corpus))
        degens.append(corpus_degeneration(corpus))
    return 1.0 - float(np.mean(bleus)), float(np.mean(degens))


def run_sweep(space: SweepSpace, base_cfg: GenerationConfig, model, prompts,
              rng: np.random.Generator) -> list[SweepPoint]:
    """Evaluate every sampled parameter vector; deterministic under a seed."""
    if not prompts:
        raise ValueError("prompts must be nonempty")
    points = []
    for run_id, vec in enumerate(enumerate_vectors(space, base_cfg, rng)):
        cfg = _configure(base_cfg, vec)
        diversity, degeneration = evaluate_objectives(model, prompts, cfg)
        points.append(SweepPoint(run_id=run_id, params=vec,
                                 diversity=diversity, degeneration=degeneration))
    return points


def dominates(a: SweepPoint, b: SweepPoint) -> bool:
    """a dominates b: at least as good on both objectives, better on one."""
    return (a.diversity >= b.diversity and a.degeneration <= b.degeneration
            and (a.diversity > b.diversity or a.degeneration < b.degeneration))


def pareto_front(points) -> ParetoFront:
    """Non-dominated points via a sort-and-scan; objective duplicates kept."""
    if not points:
        raise ValueError("points must be nonempty")
    ordered = sorted(points, key=lambda p: (-p.diversity, p.degeneration, p.run_id))
    front: list[SweepPoint] = []
    best_degen = float("inf")  # lowest degeneration among strictly higher diversity
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].diversity == ordered[i].diversity:
            j += 1
        group = ordered[i:j]
        group_min = min(p.degeneration for p in group)
        for p in group:
            if p.degeneration == group_min and p.degeneration < best_degen:
                front.append(p)
        best_degen = min(best_degen, group_min)
        i = j
    return ParetoFront(points=tuple(front))


def select_best(front: ParetoFront, max_degen: float = DEFAULT_MAX_DEGEN) -> SweepPoint:
    """Most diverse admissible point; ties by lower degeneration, then run_id."""
    admissible = [p for p in front.points if p.degeneration <= max_degen]
    if not admissible:
        raise NoAdmissiblePointError(
            f"every front point has degeneration > {max_degen}")
    return min(admissible, key=lambda p: (-p.diversity, p.degeneration, p.run_id))
