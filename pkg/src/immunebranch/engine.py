"""Event-driven simulation of a single episode.

Every type's death time is fixed when the type is created: the root's is
drawn from its clock (or imposed, for the conditioned variant) and a new
type founded by a child of type ``k`` dies at ``death[k] + Exponential(1)``.
A type death is then just a scheduled event that removes all of its living
members.  Birth streams are generated lazily: a pathogen's next birth is only
scheduled if it falls strictly before its type's death, so birth events
never need to be cancelled.

Random draws are consumed in a fixed order, shared with the compiled kernel
in :mod:`immunebranch._kernel`:

* root death time (star variant: a uniform coin first, then Exponential(1)
  only if the root clock is nonzero);
* the root's first birth gap;
* on each birth event: a uniform mutation coin; for a mutant in the mixed
  variant with ``p < 1``, a uniform beneficial/sterile coin; for a mutant,
  its clock; for a non-sterile child, its first gap; then the parent's next
  gap.

Ties in time are broken by kind (deaths first) and then by scheduling order.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import IO, Optional, Union

import numpy as np

from .analytics import DomainError, ModelParams, Variant
from .streams import episode_rng, stream_key

__all__ = [
    "StopRule",
    "Verdict",
    "EpisodeOutcome",
    "TypeRecord",
    "PathogenRecord",
    "TraceEvent",
    "Episode",
    "Violation",
    "simulate",
    "run_episode",
    "validate_genealogy",
    "write_trace",
]

DEATH = 0
BIRTH = 1


@dataclass(frozen=True)
class StopRule:
    """Censoring bounds.

    An episode is declared survived when the clock passes ``time_horizon``
    or the living population reaches ``population_cap``; it is aborted when
    the number of pathogens ever born reaches ``progeny_cap``.
    """

    time_horizon: float = 200.0
    population_cap: int = 10_000
    progeny_cap: int = 10_000_000

    def __post_init__(self):
        if not self.time_horizon > 0:
            raise DomainError(f"time_horizon must be positive, got {self.time_horizon!r}")
        if int(self.population_cap) < 1 or int(self.progeny_cap) < 1:
            raise DomainError("population_cap and progeny_cap must be positive integers")

    @classmethod
    def progeny_only(cls, progeny_cap: int = 10_000_000) -> "StopRule":
        """No time or population censoring; for estimating total progeny."""
        return cls(math.inf, np.iinfo(np.int64).max, progeny_cap)


class Verdict(enum.IntEnum):
    EXTINCT = 0
    CENSORED_SURVIVED = 1
    ABORTED_PROGENY_CAP = 2


@dataclass(frozen=True)
class EpisodeOutcome:
    verdict: Verdict
    total_progeny_N: int
    viable_Nv: int
    sterile_S: int
    extinction_time: Optional[float]
    peak_population: int
    types_created: int

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.name.lower(),
            "total_progeny_N": self.total_progeny_N,
            "viable_Nv": self.viable_Nv,
            "sterile_S": self.sterile_S,
            "extinction_time": self.extinction_time,
            "peak_population": self.peak_population,
            "types_created": self.types_created,
        }


@dataclass
class TypeRecord:
    type_id: int
    parent_type: Optional[int]
    death_time: float
    clock: float


@dataclass
class PathogenRecord:
    pathogen_id: int
    type_id: int
    birth_time: float
    sterile: bool = False
    parent_id: Optional[int] = None


@dataclass
class TraceEvent:
    time: float
    kind: str  # "birth" or "death"
    pathogen_id: Optional[int]  # newborn for births, None for deaths
    type_id: int
    removed: int = 0  # living members removed by a death event


@dataclass
class Episode:
    params: ModelParams
    stop: StopRule
    outcome: EpisodeOutcome
    types: list[TypeRecord] = field(default_factory=list)
    pathogens: list[PathogenRecord] = field(default_factory=list)
    events: list[TraceEvent] = field(default_factory=list)


def _root_death(params: ModelParams, rng: np.random.Generator) -> tuple[float, float]:
    if params.variant is Variant.CONDITIONED:
        return params.t, params.t
    if params.variant is Variant.STAR:
        if rng.random() < params.r:
            k = rng.exponential(1.0)
            return k, k
        return 0.0, 0.0
    k = rng.exponential(1.0)
    return k, k


def simulate(
    params: ModelParams,
    stop: Optional[StopRule] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    record: bool = True,
) -> Episode:
    """Run one episode, optionally keeping the full genealogy and event log."""
    stop = stop or StopRule()
    rng = rng if rng is not None else episode_rng(stream_key(0), 0)
    lam, r, p = params.lam, params.r, params.p
    mean_gap = 1.0 / lam
    sterile_coin = params.variant is Variant.MIXED and p < 1.0
    horizon = stop.time_horizon
    pop_cap = int(stop.population_cap)
    progeny_cap = int(stop.progeny_cap)

    d0, k0 = _root_death(params, rng)
    death = [d0]
    alive = [1]
    types = [TypeRecord(0, None, d0, k0)] if record else []
    pathogens = [PathogenRecord(0, 0, 0.0)] if record else []
    events: list[TraceEvent] = []

    heap: list[tuple] = []
    seq = 0
    heapq.heappush(heap, (d0, DEATH, seq, 0, -1))
    seq += 1
    gap = rng.exponential(mean_gap)
    if gap < d0:
        heapq.heappush(heap, (gap, BIRTH, seq, 0, 0))
        seq += 1

    population = 1
    peak = 1
    n_total = 1
    n_sterile = 0
    verdict = None
    ext_time = None

    while verdict is None:
        t, kind, _, tid, pid = heapq.heappop(heap)
        if t > horizon:
            verdict = Verdict.CENSORED_SURVIVED
            break
        if kind == DEATH:
            removed = alive[tid]
            population -= removed
            alive[tid] = 0
            if record:
                events.append(TraceEvent(t, "death", None, tid, removed))
            if population == 0:
                verdict = Verdict.EXTINCT
                ext_time = t
            continue

        is_sterile = False
        if rng.random() < r:
            if sterile_coin and not rng.random() < p:
                is_sterile = True
            clock = rng.exponential(1.0)
            child_type = len(death)
            d_child = death[tid] + clock
            death.append(d_child)
            alive.append(0)
            heapq.heappush(heap, (d_child, DEATH, seq, child_type, -1))
            seq += 1
            if record:
                types.append(TypeRecord(child_type, tid, d_child, clock))
        else:
            child_type = tid
            d_child = death[tid]

        child_id = n_total
        n_total += 1
        if is_sterile:
            n_sterile += 1
        alive[child_type] += 1
        population += 1
        if population > peak:
            peak = population
        if record:
            pathogens.append(PathogenRecord(child_id, child_type, t, is_sterile, pid))
            events.append(TraceEvent(t, "birth", child_id, child_type))

        if not is_sterile:
            gap = rng.exponential(mean_gap)
            if t + gap < d_child:
                heapq.heappush(heap, (t + gap, BIRTH, seq, child_type, child_id))
                seq += 1
        gap = rng.exponential(mean_gap)
        if t + gap < death[tid]:
            heapq.heappush(heap, (t + gap, BIRTH, seq, tid, pid))
            seq += 1

        if population >= pop_cap:
            verdict = Verdict.CENSORED_SURVIVED
        elif n_total >= progeny_cap:
            verdict = Verdict.ABORTED_PROGENY_CAP

    outcome = EpisodeOutcome(
        verdict=verdict,
        total_progeny_N=n_total,
        viable_Nv=n_total - n_sterile,
        sterile_S=n_sterile,
        extinction_time=ext_time,
        peak_population=peak,
        types_created=len(death),
    )
    return Episode(params, stop, outcome, types, pathogens, events)


def run_episode(
    params: ModelParams,
    stop: Optional[StopRule] = None,
    seed: Union[int, np.random.Generator] = 0,
) -> EpisodeOutcome:
    """Outcome of one episode; an integer seed selects episode 0 of that master seed."""
    rng = seed if isinstance(seed, np.random.Generator) else episode_rng(stream_key(seed), 0)
    return simulate(params, stop, rng, record=False).outcome


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


def validate_genealogy(episode: Episode) -> list[Violation]:
    """Check a recorded episode against the construction's invariants.

    Returns an empty list when the trace is consistent.
    """
    out: list[Violation] = []
    types = {t.type_id: t for t in episode.types}
    pathogens = {q.pathogen_id: q for q in episode.pathogens}

    for t in episode.types:
        if t.parent_type is None:
            continue
        parent = types.get(t.parent_type)
        if parent is None:
            out.append(Violation("MissingParentType", f"type {t.type_id} -> {t.parent_type}"))
            continue
        if t.death_time < parent.death_time:
            out.append(
                Violation(
                    "AncestralOrder",
                    f"type {t.type_id} dies at {t.death_time} before parent type {parent.type_id} at {parent.death_time}",
                )
            )
        if not math.isclose(t.death_time, parent.death_time + t.clock, rel_tol=1e-12, abs_tol=1e-12):
            out.append(Violation("ClockMismatch", f"type {t.type_id}"))

    for q in episode.pathogens:
        if q.parent_id is None:
            continue
        parent = pathogens.get(q.parent_id)
        if parent is None:
            out.append(Violation("MissingParent", f"pathogen {q.pathogen_id} -> {q.parent_id}"))
            continue
        if parent.sterile:
            out.append(Violation("SterileParent", f"pathogen {q.pathogen_id} has sterile parent {parent.pathogen_id}"))
        parent_death = types[parent.type_id].death_time
        if q.birth_time >= parent_death:
            out.append(
                Violation(
                    "PosthumousBirth",
                    f"pathogen {q.pathogen_id} born at {q.birth_time}, parent type {parent.type_id} died at {parent_death}",
                )
            )

    members: dict[int, int] = {}
    for q in episode.pathogens:
        members[q.type_id] = members.get(q.type_id, 0) + 1
    for ev in episode.events:
        if ev.kind != "death":
            continue
        t = types.get(ev.type_id)
        if t is None or ev.time != t.death_time:
            out.append(Violation("DeathTimeMismatch", f"type {ev.type_id} removed at {ev.time}"))
        n = members.get(ev.type_id, 0)
        if ev.removed != n:
            out.append(Violation("IncompleteRemoval", f"type {ev.type_id}: removed {ev.removed} of {n} members"))
    return out


def write_trace(episode: Episode, fh: IO[str]) -> None:
    """Dump the event log as one JSON object per line: ``t``, ``kind``, ``pathogen``, ``type``."""
    for ev in episode.events:
        rec = {"t": ev.time, "kind": ev.kind, "pathogen": ev.pathogen_id, "type": ev.type_id}
        if ev.kind == "death":
            rec["removed"] = ev.removed
        fh.write(json.dumps(rec) + "\n")
