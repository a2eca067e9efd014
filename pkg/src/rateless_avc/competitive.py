"""
Policy optimisation against an adversary, the fixed-set upper bound for the
example family, and the end-to-end reproduction of the ratio chain
1/3 = CR_1 < 11/24 <= CR_2 <= CR <= 1/2.

Policies are scored by their worst-case value (ratio, or negated regret) and
the best grid policy is returned. For block adversaries the grid search first
scores every policy against coarser grids; any coarser grid enumerates a subset
of the full profile set, so its minimum is an upper bound on the policy's true
score and policies whose bound cannot beat the incumbent are skipped. The
result is identical to exhaustive evaluation.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adversary import (
    TIE_TOL,
    AdversarySpec,
    Mode,
    SearchSet,
    cr1_pair,
    default_horizon,
    search_for,
    worst_case,
    worst_case_case_split,
    worst_regret,
)
from .channel import ChannelFamily, Distribution, is_example_family, symmetric_input
from .stopping import INF, REACH_EPS, Policy, StateProfile, symmetric_policy, two_piece_policy


class SearchError(ValueError):
    pass


class Parametrization(enum.Enum):
    EXAMPLE_SYMMETRIC = "symmetric"
    FULL_SIMPLEX = "simplex"


@dataclass(frozen=True)
class PolicySearchSpace:
    ell: int
    p_grid: float
    t_grid: float = 0.125
    t_range: tuple[float, float] = (1.0, 2.0)
    parametrization: Parametrization = Parametrization.EXAMPLE_SYMMETRIC
    p_ranges: tuple[tuple[float, float], ...] | None = None
    inject_p: tuple[float, ...] = ()
    inject_t: tuple[float, ...] = ()

    def __post_init__(self):
        if self.ell < 1:
            raise SearchError("ell must be at least 1")
        if not (self.p_grid > 0 and self.t_grid > 0):
            raise SearchError("grid steps must be positive")
        lo, hi = self.t_range
        if self.ell > 1 and not (0 < lo <= hi):
            raise SearchError(f"invalid switch-time range {self.t_range}")
        if self.p_ranges is not None and len(self.p_ranges) != self.ell:
            raise SearchError("p_ranges needs one (lo, hi) pair per piece")

    @classmethod
    def paper_two_piece(cls, p_grid: float = 1 / 66, t_grid: float = 0.125) -> "PolicySearchSpace":
        """Two pieces with the first parameter capped at 2/3 and the switch in [1, 2]."""
        return cls(2, p_grid, t_grid, (1.0, 2.0), p_ranges=((0.0, 2 / 3), (0.0, 1.0)),
                   inject_p=(10 / 33, 2 / 3), inject_t=(1.5,))


def value_grid(lo: float, hi: float, step: float, inject: Sequence[float] = ()) -> np.ndarray:
    """``lo, lo+step, ...`` up to ``hi`` plus injected points inside ``[lo, hi]``.

    When ``step`` divides the range the points are computed as ``lo + (hi-lo) i/n``
    so that values such as 2/3 on a 1/66 grid come out exactly.
    """
    span = hi - lo
    n = span / step
    if abs(n - round(n)) < 1e-6:
        n = int(round(n))
        pts = lo + span * np.arange(n + 1) / max(n, 1)
    else:
        pts = np.append(lo + step * np.arange(int(math.floor(n)) + 1), hi)
    extra = [float(x) for x in inject if lo - 1e-12 <= x <= hi + 1e-12]
    pts = np.sort(np.concatenate([pts, extra]))
    keep = np.concatenate([[True], np.diff(pts) > 1e-9])
    return pts[keep]


def _simplex_points(size: int, step: float) -> list[Distribution]:
    n = int(round(1 / step))
    if abs(n * step - 1) > 1e-6:
        raise SearchError("simplex grid step must divide 1")
    out = []
    for bars in itertools.combinations(range(n + size - 1), size - 1):
        parts = np.diff(np.concatenate([[-1], bars, [n + size - 1]])) - 1
        out.append(Distribution(parts / n))
    return out


class _Grid:
    """Enumerates the policies of a search space with their rate tables."""

    def __init__(self, family: ChannelFamily, space: PolicySearchSpace):
        self.family = family
        self.space = space
        sym = space.parametrization is Parametrization.EXAMPLE_SYMMETRIC
        if sym and family.input_size != 4:
            raise SearchError("the symmetric parametrization needs a four-letter input alphabet")
        ranges = space.p_ranges or ((0.0, 1.0),) * space.ell
        self.choices: list[list] = []
        for lo, hi in ranges:
            if sym:
                self.choices.append([float(p) for p in value_grid(lo, hi, space.p_grid, space.inject_p)])
            else:
                self.choices.append(_simplex_points(family.input_size, space.p_grid))
        if any(not c for c in self.choices):
            raise SearchError("empty policy grid")
        self.dists = [[symmetric_input(p) if sym else p for p in c] for c in self.choices]
        self.rates = [np.array([family.rates(d) for d in ds]) for ds in self.dists]
        if space.ell > 1:
            ts = value_grid(*space.t_range, space.t_grid, space.inject_t)
            self.switches = [np.array(c) for c in itertools.combinations(ts.tolist(), space.ell - 1)]
        else:
            self.switches = [np.empty(0)]
        if not self.switches:
            raise SearchError("switch-time grid is empty")
        self.shape = tuple(len(c) for c in self.choices)
        self.n_combos = int(np.prod(self.shape))
        self.size = self.n_combos * len(self.switches)

    @property
    def max_span(self) -> float:
        return max((float(s[-1]) for s in self.switches if s.size), default=0.0)

    def combos(self, start: int, stop: int) -> np.ndarray:
        return np.stack(np.unravel_index(np.arange(start, stop), self.shape), axis=1)

    def rate_stack(self, combos: np.ndarray) -> np.ndarray:
        return np.stack([self.rates[i][combos[:, i]] for i in range(self.space.ell)], axis=1)

    def index(self, switch_idx: int, combo_flat: int) -> int:
        # policy order: distribution parameters first, then switch times
        return combo_flat * len(self.switches) + switch_idx

    def split(self, index: int) -> tuple[int, int]:
        combo_flat, switch_idx = divmod(index, len(self.switches))
        return switch_idx, combo_flat

    def policy(self, index: int) -> Policy:
        switch_idx, combo_flat = self.split(index)
        combo = np.unravel_index(combo_flat, self.shape)
        dists = [self.dists[i][combo[i]] for i in range(self.space.ell)]
        sw = self.switches[switch_idx]
        durations = np.diff(np.concatenate([[0.0], sw])).tolist()
        return Policy.from_parts(dists, durations)

    def params(self, index: int) -> tuple[list, list[float]]:
        switch_idx, combo_flat = self.split(index)
        combo = np.unravel_index(combo_flat, self.shape)
        ps = [self.choices[i][combo[i]] for i in range(self.space.ell)]
        return ps, self.switches[switch_idx].tolist()


@dataclass
class CompetitiveReport:
    cr_lower: float
    best_policy: Policy
    worst_witness: StateProfile
    cr_upper: float | None = None
    diagnostics: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list, repr=False)


@dataclass
class RegretReport:
    regret: float
    best_policy: Policy
    worst_witness: StateProfile
    diagnostics: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list, repr=False)


def _screening_sets(family, adversary: AdversarySpec, horizon: float) -> tuple[list[SearchSet], SearchSet]:
    full = search_for(family, adversary, horizon)
    if adversary.mode is Mode.FIXED_SET:
        return [], full
    tiers = []
    factor = 2
    while adversary.duration_grid * factor <= 0.25 + 1e-12:
        tiers.append(search_for(family, adversary.coarsened(factor), horizon))
        factor *= 2
    return tiers[::-1], full


def _grid_search(family, space, adversary, objective, exhaustive, workers, chunk=2048):
    grid = _Grid(family, space)
    if adversary.mode is Mode.BRUTE_BLOCKS and adversary.horizon is None:
        horizon = default_horizon(family, grid.max_span)
    else:
        horizon = adversary.horizon
    tiers, full = _screening_sets(family, adversary, horizon)
    if exhaustive:
        tiers = []
    first = tiers[0] if tiers else full

    bound = np.empty(grid.size)

    def screen(job):
        s_idx, start, stop = job
        rates = grid.rate_stack(grid.combos(start, stop))
        vals = first.worst_values(grid.switches[s_idx], rates, objective)
        idx = [grid.index(s_idx, c) for c in range(start, stop)]
        bound[idx] = vals

    jobs = [
        (s_idx, start, min(start + chunk, grid.n_combos))
        for s_idx in range(len(grid.switches))
        for start in range(0, grid.n_combos, chunk)
    ]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(screen, jobs))
    else:
        for job in jobs:
            screen(job)

    exact = np.zeros(grid.size, dtype=bool)
    values = bound.copy()
    if not tiers:
        exact[:] = True
        best = _argmax_first(values)
    else:
        best, best_val = None, -INF
        for idx in sorted(range(grid.size), key=lambda i: (-bound[i], i)):
            if bound[idx] < best_val - TIE_TOL:
                break
            if best is not None and bound[idx] <= best_val + TIE_TOL and idx > best:
                continue
            s_idx, c = grid.split(idx)
            rates = grid.rate_stack(grid.combos(c, c + 1))
            v = bound[idx]
            for tier in [*tiers[1:], full]:
                v = float(tier.worst_values(grid.switches[s_idx], rates, objective)[0])
                values[idx] = v
                if v < best_val - TIE_TOL:
                    break
            else:
                exact[idx] = True
                if best is None or v > best_val + TIE_TOL or (v >= best_val - TIE_TOL and idx < best):
                    best, best_val = idx, v
    s_idx, c = grid.split(best)
    value, witness = full.worst(grid.switches[s_idx], grid.rate_stack(grid.combos(c, c + 1))[0], objective)
    rows = []
    for idx in range(grid.size):
        ps, ts = grid.params(idx)
        rows.append({"p": ps, "t": ts, "value": float(values[idx]), "exact": bool(exact[idx])})
    rows[best]["witness"] = witness.encode()
    diag = {
        "policies": grid.size,
        "exact_evaluations": int(exact.sum()),
        "screening_grids": [t.grid for t in tiers] if tiers else [],
        "adversary": adversary.describe(),
        "adversary_profiles": full.size,
        "horizon": horizon,
        "best_index": int(best),
        "note": full.note,
    }
    return grid, best, float(value), witness, rows, diag


def _argmax_first(values: np.ndarray) -> int:
    top = values.max()
    return int(np.nonzero(values >= top - TIE_TOL)[0][0])


def _refine(family, grid: _Grid, best: int, adversary, objective, value):
    """Coordinate search around the grid optimum, halving the step five times."""
    space = grid.space
    ps, ts = grid.params(best)
    sym = space.parametrization is Parametrization.EXAMPLE_SYMMETRIC
    ranges = space.p_ranges or ((0.0, 1.0),) * space.ell
    ps = [float(p) if sym else np.array(p.probs) for p in ps]

    def build(ps_, ts_):
        dists = [symmetric_input(p) if sym else Distribution(p) for p in ps_]
        return Policy.from_parts(dists, np.diff(np.concatenate([[0.0], ts_])).tolist())

    def score(policy):
        if objective == "ratio":
            r = worst_case(family, policy, adversary)
            return r.ratio, r.witness
        r = worst_regret(family, policy, adversary)
        return -r.regret, r.witness

    current, witness = score(build(ps, ts))
    p_step, t_step = space.p_grid / 2, space.t_grid / 2
    for _ in range(5):
        improved = True
        while improved:
            improved = False
            for cand_ps, cand_ts in _neighbours(ps, ts, p_step, t_step, ranges, space.t_range, sym):
                val, wit = score(build(cand_ps, cand_ts))
                if val > current + TIE_TOL:
                    ps, ts, current, witness = cand_ps, cand_ts, val, wit
                    improved = True
                    break
        p_step, t_step = p_step / 2, t_step / 2
    return build(ps, ts), current, witness


def _neighbours(ps, ts, p_step, t_step, ranges, t_range, sym):
    for i in range(len(ps)):
        if sym:
            for d in (p_step, -p_step):
                v = ps[i] + d
                if ranges[i][0] - 1e-12 <= v <= ranges[i][1] + 1e-12:
                    yield ps[:i] + [min(max(v, 0.0), 1.0)] + ps[i + 1 :], ts
        else:
            for a, b in itertools.permutations(range(ps[i].size), 2):
                if ps[i][a] >= p_step - 1e-12:
                    moved = ps[i].copy()
                    moved[a] -= p_step
                    moved[b] += p_step
                    moved = np.clip(moved, 0, None)
                    yield ps[:i] + [moved / moved.sum()] + ps[i + 1 :], ts
    for j in range(len(ts)):
        for d in (t_step, -t_step):
            moved = list(ts)
            moved[j] += d
            lo_ok = moved[j] >= t_range[0] - 1e-12 and (j == 0 or moved[j] > moved[j - 1])
            hi_ok = moved[j] <= t_range[1] + 1e-12 and (j + 1 == len(moved) or moved[j] < moved[j + 1])
            if lo_ok and hi_ok:
                yield ps, moved


def optimize_cr(
    family: ChannelFamily,
    space: PolicySearchSpace,
    adversary: AdversarySpec,
    refine: bool = False,
    exhaustive: bool = False,
    workers: int | None = None,
) -> CompetitiveReport:
    """Best grid policy for the competitive ratio: max over policies of min over profiles of tau*/tau.

    The value is a lower bound on CR_ell for the adversary actually searched
    (block-form adversaries only ever overstate a policy's ratio, see
    :mod:`rateless_avc.adversary`).
    """
    grid, best, value, witness, rows, diag = _grid_search(
        family, space, adversary, "ratio", exhaustive, workers
    )
    policy = grid.policy(best)
    if refine:
        policy, value, witness = _refine(family, grid, best, adversary, "ratio", value)
        diag["refined"] = True
    diag.update(_case_table(family, policy))
    return CompetitiveReport(value, policy, witness, None, diag, rows)


def optimize_regret(
    family: ChannelFamily,
    space: PolicySearchSpace,
    adversary: AdversarySpec,
    refine: bool = False,
    exhaustive: bool = False,
    workers: int | None = None,
) -> RegretReport:
    """Policy minimising the worst-case regret 1/tau* - 1/tau over the grid."""
    grid, best, value, witness, rows, diag = _grid_search(
        family, space, adversary, "regret", exhaustive, workers
    )
    for row in rows:
        row["value"] = -row["value"]
    policy = grid.policy(best)
    if refine:
        policy, value, witness = _refine(family, grid, best, adversary, "regret", value)
        diag["refined"] = True
    return RegretReport(-value, policy, witness, diag, rows)


def _case_table(family: ChannelFamily, policy: Policy) -> dict:
    """Closed-form case analysis when the policy is a two-piece example policy ending in 2/3."""
    if not is_example_family(family) or policy.ell != 2:
        return {}
    params = [_symmetric_param(p.dist) for p in policy.pieces]
    t = float(policy.switch_times[0])
    if None in params or abs(params[1] - 2 / 3) > 1e-12 or params[0] > 2 / 3 + 1e-12 or not 1 <= t <= 2:
        return {}
    split = worst_case_case_split(params[0], t)
    return {
        "case_split": {
            "beta": split.beta,
            "ratio": 1 / split.beta,
            "case": split.case,
            "r_star": split.r_star,
            "tied_cases": list(split.tied),
            "per_case": {str(c): {"beta": v, "r": r} for c, (v, r) in split.bounds.items()},
        }
    }


def _symmetric_param(dist: Distribution) -> float | None:
    p = dist.probs
    if p.size == 4 and abs(p[0] - p[1]) < 1e-12 and abs(p[2] - p[3]) < 1e-12:
        return float(p[0] + p[1])
    return None


# -- upper bound from the two fixed sets ------------------------------------------


class UpperBoundCase(enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"


def _shat1_ratio(p1: float, r: float) -> tuple[float, bool]:
    """(ratio, stops after 7/4) for 1^1 s^inf under pieces p1 | p2 on (1, 7/4] | 2/3."""
    # 1 - p1 bits after the first unit; within REACH_EPS of 1 counts as decoded
    if p1 <= REACH_EPS:
        return 1.0, False
    if 3 * p1 - 2.25 * r >= 0:
        return 1 / (1.75 + 3 * p1 - 2.25 * r), True
    return 1 / (1 + p1 / r), False


def fixed_set_ratios(p1: float, p2: float) -> dict[str, tuple[float, bool]]:
    """Closed-form ratio on each fixed-set member for the policy p1 on (0,1], p2 on (1,7/4], 2/3 after.

    Keys ``"1^1 1^inf"`` and ``"1^1 2^inf"`` map to ``(ratio, decodes after 7/4)``;
    ``"2^1 mix"`` covers every member of the second set, which all share one
    stopping time because the mix carries 1/4 bit whatever p2 is.
    """
    if not (0 <= p1 <= 1 and 0 <= p2 <= 1):
        raise ValueError(f"p1 and p2 must lie in [0, 1], got ({p1}, {p2})")
    return {
        "1^1 1^inf": _shat1_ratio(p1, 1 - p2),
        "1^1 2^inf": _shat1_ratio(p1, p2 / 2),
        "2^1 mix": (1.75 / (4 - 1.5 * p1), True),
    }


def upper_bound_fixed_sets(p1: float, p2: float) -> tuple[float, UpperBoundCase]:
    """Worst ratio over both fixed sets, with the case fixed by which first-set members decode after 7/4."""
    ratios = fixed_set_ratios(p1, p2)
    long1 = ratios["1^1 1^inf"][1]
    long2 = ratios["1^1 2^inf"][1]
    case = {
        (True, True): UpperBoundCase.A,
        (True, False): UpperBoundCase.B,
        (False, False): UpperBoundCase.C,
        (False, True): UpperBoundCase.D,
    }[(long1, long2)]
    return min(r for r, _ in ratios.values()), case


def upper_bound_policy(p1: float, p2: float) -> Policy:
    return symmetric_policy([p1, p2, 2 / 3], [1.0, 1.75])


def maximize_upper_bound(n: int = 101, inject: Sequence[float] = (1 / 3, 2 / 3)) -> dict:
    """Max of :func:`upper_bound_fixed_sets` over an n x n grid on [0,1]^2 plus injected points."""
    axis = value_grid(0.0, 1.0, 1.0 / (n - 1), inject)
    best = (-INF, None, None, None)
    for p1 in axis:
        for p2 in axis:
            v, case = upper_bound_fixed_sets(float(p1), float(p2))
            if v > best[0] + TIE_TOL:
                best = (v, float(p1), float(p2), case)
    return {"value": best[0], "p1": best[1], "p2": best[2], "case": best[3].value, "grid_points": len(axis) ** 2}


# -- reproduction of the ratio chain ------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    target: str
    passed: bool


@dataclass
class ChainReport:
    cr1: float
    cr1_closed_form: float
    cr1_blocks: float
    cr2_lower: float
    beta: float
    cr_upper: float
    checks: list[Check]
    details: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "chain": {"a_cr1": self.cr1, "b_cr2_lower": self.cr2_lower, "c_cr_upper": self.cr_upper},
            "cr1_closed_form": self.cr1_closed_form,
            "cr1_blocks": self.cr1_blocks,
            "beta": self.beta,
            "checks": [c.__dict__ for c in self.checks],
            "passed": self.passed,
            "details": self.details,
        }


def reproduce_paper(family: ChannelFamily, fast: bool = False) -> ChainReport:
    """Evaluate the three links of the chain on the example family and check them."""
    if not is_example_family(family):
        raise SearchError("the ratio chain is defined for the example family only")
    tol = 0.03 if fast else 0.02
    p_grid = 1 / 12 if fast else 1 / 60
    brute_grid = 1 / 8 if fast else 1 / 16
    ub_points = 21 if fast else 101

    one_piece = PolicySearchSpace(1, p_grid, inject_p=(1 / 3, 2 / 3))
    pair = AdversarySpec.fixed(cr1_pair(family), "cr1-pair")
    a = optimize_cr(family, one_piece, pair)
    ps = value_grid(0.0, 1.0, p_grid, (1 / 3, 2 / 3))
    closed = float(max(min(p, 1 / 3) for p in ps if p > 0))
    a_blocks = optimize_cr(family, one_piece, AdversarySpec.blocks(4, brute_grid))

    policy = two_piece_policy(10 / 33, 1.5, 2 / 3)
    b = worst_case(family, policy, AdversarySpec.blocks(4, brute_grid, 4.0))
    split = worst_case_case_split(10 / 33, 1.5)

    c = maximize_upper_bound(ub_points)

    checks = [
        Check("a: CR_1 (two-sequence adversary) = 1/3", a.cr_lower, "1/3 +- 1e-9", abs(a.cr_lower - 1 / 3) <= 1e-9),
        Check("a: max_p min{p, 1/3} = 1/3", closed, "1/3 +- 1e-9", abs(closed - 1 / 3) <= 1e-9),
        Check("a: CR_1 (block adversary) ~ 1/3", a_blocks.cr_lower, f"1/3 +- {tol}", abs(a_blocks.cr_lower - 1 / 3) <= tol),
        Check("b: CR_2 >= 11/24", b.ratio, f">= 11/24 - {tol}", b.ratio >= 11 / 24 - tol),
        Check("b: beta(10/33, 3/2) = 24/11", split.beta, "24/11 +- 1e-9", abs(split.beta - 24 / 11) <= 1e-9),
        Check("c: CR <= 1/2", c["value"], "1/2 +- 1e-9", abs(c["value"] - 0.5) <= 1e-9),
        Check("separation: CR_2 lower - CR_1 >= 0.10", b.ratio - a.cr_lower, ">= 0.10", b.ratio - a.cr_lower >= 0.10),
        Check("order: CR_2 lower <= upper", c["value"] - b.ratio, ">= 0", b.ratio <= c["value"] + 1e-9),
    ]
    details = {
        "fast": fast,
        "tolerance": tol,
        "a_policy_p": _symmetric_param(a.best_policy.pieces[0].dist),
        "a_blocks_policy_p": _symmetric_param(a_blocks.best_policy.pieces[0].dist),
        "a_witness": a.worst_witness.encode(),
        "b_policy": "two:10/33@1.5,2/3",
        "b_witness": b.witness.encode(),
        "b_profiles": b.evaluations,
        "b_case": split.case,
        "b_tied_cases": list(split.tied),
        "c_argmax": [c["p1"], c["p2"]],
        "c_case": c["case"],
        "c_grid_points": c["grid_points"],
    }
    return ChainReport(a.cr_lower, closed, a_blocks.cr_lower, b.ratio, split.beta, c["value"], checks, details)


# -- CSV ------------------------------------------------------------------------


def rows_to_csv(rows: list[dict], ell: int, value_name: str = "worst_ratio") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = [f"p_{i + 1}" for i in range(ell)] + [f"t_{i + 1}" for i in range(ell - 1)]
    writer.writerow(header + [value_name, "exact", "witness"])
    for row in rows:
        ps = [p if isinstance(p, float) else " ".join(repr(x) for x in p.tolist()) for p in row["p"]]
        writer.writerow([*ps, *row["t"], repr(row["value"]), int(row["exact"]), row.get("witness", "")])
    return buf.getvalue()
