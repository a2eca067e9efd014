"""
Worst-case state sequences for a fixed policy.

Two adversaries are provided. ``BRUTE_BLOCKS`` enumerates every block-form
profile with a bounded number of blocks whose boundaries sit on a duration grid;
the minimum it returns is an upper bound on the true infimum over all state
sequences. ``FIXED_SET`` scores a given list of profiles, e.g. the two sets used
for the example family's upper bound.

Only profiles whose consecutive blocks carry different states are enumerated;
any other block profile equals one of these after merging.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .channel import ChannelFamily, is_example_family
from .stopping import (
    INF,
    Block,
    Policy,
    StateProfile,
    batch_stopping_times,
    optimal_stopping_time,
    ratio_from_times,
    regret_from_times,
    stopping_time_fluid,
)

TIE_TOL = 1e-12
UPPER_BOUND_NOTE = "block-form adversary: value bounds the true worst case from the policy's side"


class AdversaryError(ValueError):
    pass


class Mode(enum.Enum):
    BRUTE_BLOCKS = "blocks"
    FIXED_SET = "fixed"


@dataclass(frozen=True)
class AdversarySpec:
    mode: Mode = Mode.BRUTE_BLOCKS
    max_blocks: int = 4
    duration_grid: float = 1 / 16
    horizon: float | None = None
    fixed_profiles: tuple[StateProfile, ...] = ()
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.mode is Mode.BRUTE_BLOCKS:
            if self.max_blocks < 1:
                raise AdversaryError("max_blocks must be at least 1")
            if not self.duration_grid > 0:
                raise AdversaryError("duration_grid must be positive")
            if self.horizon is not None and self.horizon < 0:
                raise AdversaryError("horizon must be non-negative")
        elif not self.fixed_profiles:
            raise AdversaryError("a fixed-set adversary needs at least one profile")
        object.__setattr__(self, "fixed_profiles", tuple(self.fixed_profiles))

    @classmethod
    def blocks(cls, max_blocks: int = 4, grid: float = 1 / 16, horizon: float | None = None):
        return cls(Mode.BRUTE_BLOCKS, max_blocks, grid, horizon)

    @classmethod
    def fixed(cls, profiles: Sequence[StateProfile], label: str = ""):
        return cls(Mode.FIXED_SET, fixed_profiles=tuple(profiles), label=label)

    def describe(self) -> str:
        if self.mode is Mode.FIXED_SET:
            return f"fixed:{self.label or len(self.fixed_profiles)}"
        h = "auto" if self.horizon is None else repr(self.horizon)
        return f"blocks:max={self.max_blocks},grid={self.duration_grid!r},horizon={h}"

    def coarsened(self, factor: int) -> "AdversarySpec":
        """Same search with a grid ``factor`` times coarser: a subset of this one's profiles."""
        return AdversarySpec.blocks(self.max_blocks, self.duration_grid * factor, self.horizon)


@dataclass(frozen=True)
class WorstCaseResult:
    ratio: float
    witness: StateProfile
    evaluations: int
    note: str = ""


@dataclass(frozen=True)
class WorstRegretResult:
    regret: float
    witness: StateProfile
    evaluations: int
    note: str = ""


def default_horizon(family: ChannelFamily, policy_span: float) -> float:
    """Latest block boundary the adversary ever needs.

    Past both the last policy switch and the clairvoyant stopping time, a
    constant tail in the least favourable state is at least as harmful as any
    further switching, so boundaries beyond ``max(switch, max tau*)`` add
    nothing. ``max tau*`` is at most ``1 / min_s C(s)``.
    """
    c_min = float(family.capacities.min())
    if c_min > 0:
        return max(policy_span, 1.0 / c_min)
    # a zero-capacity state lets the clairvoyant time diverge; fall back to a generous span
    positive = family.capacities[family.capacities > 0]
    return policy_span + (1.0 / positive.min() if positive.size else 1.0)


# -- block enumeration ----------------------------------------------------------


@lru_cache(maxsize=64)
def _boundary_combos(n_points: int, n_finite: int) -> np.ndarray:
    if n_finite == 0:
        return np.zeros((1, 0), dtype=np.int64)
    flat = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(1, n_points + 1), n_finite)),
        dtype=np.int64,
    )
    out = flat.reshape(-1, n_finite)
    out.setflags(write=False)
    return out


def _patterns(n_states: int, length: int) -> list[tuple[int, ...]]:
    out = []
    for first in range(n_states):
        seqs = [(first,)]
        for _ in range(length - 1):
            seqs = [s + (x,) for s in seqs for x in range(n_states) if x != s[-1]]
        out.extend(seqs)
    return out


@dataclass
class _Chunk:
    states: np.ndarray  # (n+1,)
    ends: np.ndarray  # (N, n)
    tau_star: np.ndarray  # (N,)
    source: StateProfile | None = None


class SearchSet:
    """Profiles grouped by state pattern, with clairvoyant times precomputed."""

    family: ChannelFamily
    chunks: list[_Chunk]
    grid: float | None = None
    note = UPPER_BOUND_NOTE

    @property
    def size(self) -> int:
        return sum(c.ends.shape[0] for c in self.chunks)

    def profile(self, chunk: _Chunk, row: int) -> StateProfile:
        if chunk.source is not None:
            return chunk.source
        labels = self.family.labels
        ends = chunk.ends[row]
        starts = np.concatenate([[0.0], ends])
        blocks = [Block(labels[s], float(e - b)) for s, b, e in zip(chunk.states, starts, ends)]
        blocks.append(Block(labels[chunk.states[-1]], INF))
        return StateProfile(tuple(blocks))

    def scores(self, switch: np.ndarray, rates: np.ndarray, objective: str):
        """Yield (chunk, scores (P, N)) where lower scores are worse for the policy."""
        for chunk in self.chunks:
            tau = batch_stopping_times(chunk.ends, chunk.states, switch, rates)
            if objective == "ratio":
                yield chunk, ratio_from_times(chunk.tau_star[None, :], tau)
            else:
                yield chunk, -regret_from_times(chunk.tau_star[None, :], tau)

    def worst_values(self, switch: np.ndarray, rates: np.ndarray, objective: str = "ratio") -> np.ndarray:
        """Worst score per policy for a stack of rate tables sharing ``switch``."""
        best = np.full(rates.shape[0], np.inf)
        for _, score in self.scores(switch, rates, objective):
            np.minimum(best, score.min(axis=1), out=best)
        return best

    def worst(self, switch: np.ndarray, rates: np.ndarray, objective: str = "ratio"):
        """(worst score, witness profile) for a single policy, ties broken lexicographically."""
        per_chunk = []
        for chunk, score in self.scores(switch, rates[None], objective):
            score = score[0]
            low = score.min()
            rows = np.nonzero(score <= low + TIE_TOL)[0]
            # within a chunk the labels are fixed, so the order is by durations
            cols = [chunk.ends[rows, i] for i in range(chunk.ends.shape[1])]
            first = rows[np.lexsort(tuple(reversed(cols)))[0]] if cols else rows[0]
            per_chunk.append((low, float(score[first]), chunk, int(first)))
        overall = min(low for low, *_ in per_chunk)
        candidates = [
            (self.profile(chunk, row), value)
            for low, value, chunk, row in per_chunk
            if value <= overall + TIE_TOL
        ]
        witness, value = min(candidates, key=lambda c: c[0].sort_key())
        return value, witness


class BlockSearch(SearchSet):
    """All block profiles of one brute-force adversary."""

    def __init__(self, family: ChannelFamily, max_blocks: int, grid: float, horizon: float):
        self.family = family
        self.grid = grid
        self.n_points = max(int(math.ceil(horizon / grid - 1e-9)), 0)
        caps = family.capacities[None, None, :]
        n_states = len(family.labels)
        self.chunks = []
        for n_finite in range(max_blocks):
            if n_finite > self.n_points or (n_finite and n_states == 1):
                break
            combos = _boundary_combos(self.n_points, n_finite) * grid
            for pattern in _patterns(n_states, n_finite + 1):
                states = np.array(pattern)
                tau_star = batch_stopping_times(combos, states, np.empty(0), caps)[0]
                self.chunks.append(_Chunk(states, combos, tau_star))


class FixedSearch(SearchSet):
    """An explicit list of profiles, one chunk each."""

    note = "fixed profile set"

    def __init__(self, family: ChannelFamily, profiles: Sequence[StateProfile]):
        self.family = family
        caps = family.capacities[None, None, :]
        self.chunks = []
        for prof in profiles:
            ends = prof.block_ends[None, :]
            states = prof.state_indices(family)
            tau_star = batch_stopping_times(ends, states, np.empty(0), caps)[0]
            self.chunks.append(_Chunk(states, ends, tau_star, prof))


@lru_cache(maxsize=32)
def _cached_search(family: ChannelFamily, max_blocks: int, grid: float, horizon: float) -> BlockSearch:
    return BlockSearch(family, max_blocks, grid, horizon)


def block_search(family: ChannelFamily, spec: AdversarySpec, policy_span: float = 0.0) -> BlockSearch:
    horizon = spec.horizon if spec.horizon is not None else default_horizon(family, policy_span)
    return _cached_search(family, spec.max_blocks, spec.duration_grid, float(horizon))


def search_for(family: ChannelFamily, spec: AdversarySpec, horizon: float | None = None) -> SearchSet:
    """Search set of ``spec``; ``horizon`` overrides an unset block horizon."""
    if spec.mode is Mode.FIXED_SET:
        return FixedSearch(family, spec.fixed_profiles)
    if spec.horizon is None and horizon is not None:
        return _cached_search(family, spec.max_blocks, spec.duration_grid, float(horizon))
    return block_search(family, spec)


def _policy_span(policy: Policy) -> float:
    sw = policy.switch_times
    return float(sw[-1]) if sw.size else 0.0


def worst_case(family: ChannelFamily, policy: Policy, spec: AdversarySpec) -> WorstCaseResult:
    """Least favourable profile for ``policy``: min over the search set of tau*/tau."""
    if spec.mode is Mode.FIXED_SET:
        value, witness = _fixed_worst(family, policy, spec.fixed_profiles, "ratio")
        return WorstCaseResult(value, witness, len(spec.fixed_profiles), "fixed profile set")
    search = block_search(family, spec, _policy_span(policy))
    if search.size == 0:
        raise AdversaryError("empty adversary search space")
    value, witness = search.worst(policy.switch_times, policy.rate_table(family), "ratio")
    return WorstCaseResult(float(value), witness, search.size, UPPER_BOUND_NOTE)


def worst_regret(family: ChannelFamily, policy: Policy, spec: AdversarySpec) -> WorstRegretResult:
    """Most favourable profile for the clairvoyant: max over the search set of 1/tau* - 1/tau."""
    if spec.mode is Mode.FIXED_SET:
        value, witness = _fixed_worst(family, policy, spec.fixed_profiles, "regret")
        return WorstRegretResult(-value, witness, len(spec.fixed_profiles), "fixed profile set")
    search = block_search(family, spec, _policy_span(policy))
    if search.size == 0:
        raise AdversaryError("empty adversary search space")
    value, witness = search.worst(policy.switch_times, policy.rate_table(family), "regret")
    return WorstRegretResult(-float(value), witness, search.size, UPPER_BOUND_NOTE.replace("bounds", "lower-bounds"))


def _fixed_worst(family, policy, profiles, objective):
    scored = []
    for prof in profiles:
        tau = stopping_time_fluid(family, policy, prof).tau
        tau_star = optimal_stopping_time(family, prof).tau
        if objective == "ratio":
            scored.append((ratio_from_times(tau_star, tau), prof))
        else:
            scored.append((-regret_from_times(tau_star, tau), prof))
    low = min(v for v, _ in scored)
    value, witness = min(
        ((v, p) for v, p in scored if v <= low + TIE_TOL), key=lambda vp: vp[1].sort_key()
    )
    return float(value), witness


# -- the example family's fixed sets --------------------------------------------


def _require_example(family: ChannelFamily) -> None:
    if not is_example_family(family):
        raise AdversaryError("this adversary set is defined for the two-state example family only")


def s_hat_1(family: ChannelFamily) -> list[StateProfile]:
    """The two profiles that open with one unit of state 1: 1^1 1^inf and 1^1 2^inf."""
    _require_example(family)
    return [StateProfile.of(("1", 1.0), (s, INF)) for s in ("1", "2")]


def s_hat_2(family: ChannelFamily, grid: float = 0.25) -> list[StateProfile]:
    """Profiles 2^1, then 3/4 time units holding state 1 for 1/4 and state 2 for 1/2, then s^inf.

    The 3/4 window is split into cells of width ``grid``. When a third of the
    cells can be given to state 1 exactly, every such assignment is produced;
    otherwise a single state-1 run of length 1/4 slides over grid offsets.
    """
    _require_example(family)
    if not grid > 0:
        raise AdversaryError("grid must be positive")
    cells = 0.75 / grid
    middles: list[list[tuple[str, float]]] = []
    n_cells = int(round(cells))
    if abs(cells - n_cells) < 1e-9 and n_cells % 3 == 0:
        for ones in itertools.combinations(range(n_cells), n_cells // 3):
            seq = ["1" if c in ones else "2" for c in range(n_cells)]
            runs = [(lab, len(list(g)) * grid) for lab, g in itertools.groupby(seq)]
            middles.append(runs)
    else:
        offsets = np.arange(0, int(math.floor(0.5 / grid + 1e-9)) + 1) * grid
        for off in offsets:
            runs = [("2", float(off)), ("1", 0.25), ("2", 0.5 - float(off))]
            middles.append([(lab, d) for lab, d in runs if d > 1e-12])
    profiles = []
    for runs in middles:
        for tail in ("1", "2"):
            blocks = [("2", 1.0), *runs, (tail, INF)]
            merged: list[list] = []
            for lab, d in blocks:
                if merged and merged[-1][0] == lab and not math.isinf(d):
                    merged[-1][1] += d
                else:
                    merged.append([lab, d])
            profiles.append(StateProfile.of(*(tuple(b) for b in merged)))
    return profiles


def cr1_pair(family: ChannelFamily) -> list[StateProfile]:
    """2^inf and 1^1 2^inf: enough to pin a single input law down to ratio 1/3."""
    _require_example(family)
    return [StateProfile.constant("2"), StateProfile.of(("1", 1.0), ("2", INF))]


# -- closed-form case analysis for two-piece example policies -----------------


class CaseSplit(NamedTuple):
    beta: float
    case: int
    r_star: float
    bounds: dict  # case -> (value, r at which it is attained)
    tied: tuple[int, ...]


def _case1(p1: float, t: float, r: float) -> float:
    return (18 * p1 + 6 * r + 2 * t - 9 * p1 * r - 3 * p1 * t - 6) / (2 * r)


def _case2(p1: float, t: float, r: float) -> float:
    return (9 * p1 + 6 * r - 2 * t - 9 * p1 * r + 3 * p1 * t - 3) / r


def _case3(p1: float, t: float, r: float) -> float:
    return (2 * t - 3 * p1 * t + 6) / (2 * r)


def worst_case_case_split(p1: float, t: float) -> CaseSplit:
    """Closed-form worst stretch beta = sup tau/tau* for the policy (p1 until t, then 2/3).

    The clairvoyant time r ranges over [1, 2] and splits into [1, t],
    [t, (t+2)/2] and [(t+2)/2, 2]. In each range the bound is a ratio of
    affine functions of r, hence monotone, so its maximum sits at an end of the
    range; both ends are evaluated rather than trusting a sign condition.
    """
    if not (-1e-12 <= p1 <= 2 / 3 + 1e-12):
        raise ValueError(f"p1 must lie in [0, 2/3], got {p1}")
    if not (1 - 1e-12 <= t <= 2 + 1e-12):
        raise ValueError(f"t must lie in [1, 2], got {t}")
    mid = (t + 2) / 2
    ranges = {1: (_case1, 1.0, t), 2: (_case2, t, mid), 3: (_case3, mid, 2.0)}
    bounds = {}
    for case, (fn, lo, hi) in ranges.items():
        ends = [(fn(p1, t, r), r) for r in (lo, hi)]
        bounds[case] = max(ends, key=lambda vr: (vr[0], -vr[1]))
    beta = max(v for v, _ in bounds.values())
    tied = tuple(c for c, (v, _) in bounds.items() if v >= beta - 1e-12)
    case = tied[0]
    return CaseSplit(beta, case, bounds[case][1], bounds, tied)
