"""
Channel families, information measures and the two-state example family.

All information quantities are in bits. A channel is stored as a row-stochastic
matrix ``W[x, y]``; a family is an ordered collection of such matrices sharing
input and output alphabets, one per channel state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9
DEFAULT_CAPACITY_TOL = 1e-12


class ChannelError(ValueError):
    """Invalid distribution, channel matrix or channel file."""


class CapacityError(RuntimeError):
    """Raised when the capacity iteration does not reach the requested gap."""

    def __init__(self, message: str, best: "CapacityResult"):
        super().__init__(message)
        self.best = best


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over an input alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size == 0:
            raise ChannelError(f"distribution must be a non-empty vector, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < -SIMPLEX_TOL):
            raise ChannelError(f"distribution has negative or non-finite entries: {p.tolist()}")
        if abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise ChannelError(f"distribution sums to {p.sum():.12g}, expected 1")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.all(self.probs == other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def tolist(self) -> list[float]:
        return self.probs.tolist()

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        return cls(np.full(size, 1.0 / size))


@dataclass(frozen=True, eq=False)
class Dmc:
    """Discrete memoryless channel; ``matrix[x, y] = W(y|x)``."""

    matrix: np.ndarray

    def __post_init__(self):
        w = _frozen(self.matrix)
        if w.ndim != 2 or 0 in w.shape:
            raise ChannelError(f"channel matrix must be 2-D and non-empty, got shape {w.shape}")
        for x, row in enumerate(w):
            if not np.all(np.isfinite(row)) or np.any(row < -SIMPLEX_TOL):
                raise ChannelError(f"row {x} has negative or non-finite entries")
            if abs(row.sum() - 1.0) > SIMPLEX_TOL:
                raise ChannelError(f"row {x} sums to {row.sum():.12g}, expected 1")
        object.__setattr__(self, "matrix", w)

    @property
    def input_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def output_size(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class CapacityResult:
    capacity: float
    maximizer: Distribution
    iterations: int
    residual: float


@dataclass(frozen=True, eq=False)
class ChannelFamily:
    """An arbitrarily varying channel: one :class:`Dmc` per state label."""

    states: tuple[tuple[str, Dmc], ...]
    capacity_tol: float = field(default=DEFAULT_CAPACITY_TOL, repr=False)

    def __post_init__(self):
        states = tuple((str(label), dmc) for label, dmc in self.states)
        if not states:
            raise ChannelError("a channel family needs at least one state")
        labels = [label for label, _ in states]
        if len(set(labels)) != len(labels):
            raise ChannelError(f"state labels must be unique, got {labels}")
        shape = states[0][1].matrix.shape
        for label, dmc in states:
            if dmc.matrix.shape != shape:
                raise ChannelError(
                    f"state {label!r} has shape {dmc.matrix.shape}, expected {shape}"
                )
        object.__setattr__(self, "states", states)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.states)

    @property
    def input_size(self) -> int:
        return self.states[0][1].input_size

    @property
    def output_size(self) -> int:
        return self.states[0][1].output_size

    def index(self, label: str) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ChannelError(f"unknown state label {label!r}; known: {list(self.labels)}") from None

    def dmc(self, label: str) -> Dmc:
        return self.states[self.index(label)][1]

    @cached_property
    def capacity_results(self) -> tuple[CapacityResult, ...]:
        return tuple(capacity(dmc, tol=self.capacity_tol) for _, dmc in self.states)

    @property
    def capacities(self) -> np.ndarray:
        """Per-state capacities in bits, in state order."""
        return np.array([r.capacity for r in self.capacity_results])

    def rates(self, dist: Distribution) -> np.ndarray:
        """Mutual information of ``dist`` under every state, in state order."""
        return np.array([mutual_information(dist, dmc) for _, dmc in self.states])


def _check_input(p: Distribution, w: Dmc) -> None:
    if len(p) != w.input_size:
        raise ChannelError(
            f"distribution has {len(p)} entries but channel has {w.input_size} inputs"
        )


def _divergence_rows(w: np.ndarray, q: np.ndarray) -> np.ndarray:
    """D(W(.|x) || q) in bits for every row x, with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log2(w / q), 0.0)
    return terms.sum(axis=1)


def mutual_information(p: Distribution, w: Dmc) -> float:
    """I(X;Y) in bits for the joint law p(x) W(y|x)."""
    if not isinstance(p, Distribution):
        p = Distribution(p)
    _check_input(p, w)
    probs = p.probs
    q = probs @ w.matrix
    support = probs > 0
    d = _divergence_rows(w.matrix[support], q)
    value = float(probs[support] @ d)
    return max(value, 0.0)


def capacity(w: Dmc, tol: float = 1e-9, max_iter: int = 100_000) -> CapacityResult:
    """Capacity by alternating maximisation.

    Stops once the standard bracket ``I(p) <= C <= max_x D(W(.|x) || pW)`` is
    narrower than ``tol``. The reported capacity is the lower end, i.e. the
    value attained by the returned maximizer.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = w.input_size
    p = np.full(m, 1.0 / m)
    best = None
    for it in range(1, max_iter + 1):
        q = p @ w.matrix
        d = _divergence_rows(w.matrix, q)
        lower = float(p @ d)
        upper = float(d.max())
        gap = max(upper - lower, 0.0)
        if best is None or gap < best.residual:
            best = CapacityResult(max(lower, 0.0), Distribution(p / p.sum()), it, gap)
        if gap <= tol:
            return best
        p = p * np.exp2(d - upper)
        p /= p.sum()
    raise CapacityError(
        f"capacity iteration did not reach gap {tol:g} in {max_iter} steps "
        f"(best gap {best.residual:.3g})",
        best,
    )


def symmetric_input(p: float) -> Distribution:
    """Input law over {1,2,3,4} putting p/2 on each of 1,2 and (1-p)/2 on each of 3,4."""
    if not 0.0 <= p <= 1.0:
        raise ChannelError(f"p must lie in [0, 1], got {p}")
    return Distribution([p / 2, p / 2, (1 - p) / 2, (1 - p) / 2])


def _example_matrices() -> tuple[np.ndarray, np.ndarray]:
    # outputs: 1, 2, 3, 4, erasure
    w1 = np.zeros((4, 5))
    w1[0, 2:4] = 0.5
    w1[1, 2:4] = 0.5
    w1[2, 2] = 1.0
    w1[3, 3] = 1.0
    w2 = np.zeros((4, 5))
    w2[0, 0] = w2[0, 4] = 0.5
    w2[1, 1] = w2[1, 4] = 0.5
    w2[2:4, 0:2] = 0.25
    w2[2:4, 4] = 0.5
    return w1, w2


def example_family() -> ChannelFamily:
    """Two-state family: W1 favours inputs {3,4}, W2 favours {1,2} behind an erasure."""
    w1, w2 = _example_matrices()
    return ChannelFamily((("1", Dmc(w1)), ("2", Dmc(w2))))


def is_example_family(family: ChannelFamily) -> bool:
    if family.labels != ("1", "2"):
        return False
    w1, w2 = _example_matrices()
    return bool(
        np.allclose(family.dmc("1").matrix, w1, atol=1e-12)
        and np.allclose(family.dmc("2").matrix, w2, atol=1e-12)
    )


# -- JSON channel files -------------------------------------------------------


def family_from_dict(data: dict) -> ChannelFamily:
    try:
        n_in = int(data["input_size"])
        n_out = int(data["output_size"])
        raw_states = data["states"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ChannelError(f"channel file missing field: {exc}") from None
    states = []
    for entry in raw_states:
        label = str(entry.get("label"))
        rows = np.asarray(entry.get("rows"), dtype=float)
        if rows.shape != (n_in, n_out):
            raise ChannelError(
                f"state {label!r}: rows have shape {rows.shape}, expected ({n_in}, {n_out})"
            )
        for x, row in enumerate(rows):
            if np.any(row < 0) or abs(row.sum() - 1.0) > SIMPLEX_TOL:
                raise ChannelError(
                    f"state {label!r}: row {x} is not a distribution (sum {row.sum():.12g})"
                )
        states.append((label, Dmc(rows)))
    return ChannelFamily(tuple(states))


def family_to_dict(family: ChannelFamily) -> dict:
    return {
        "input_size": family.input_size,
        "output_size": family.output_size,
        "states": [
            {"label": label, "rows": dmc.matrix.tolist()} for label, dmc in family.states
        ],
    }


def load_family(source: str | Path) -> ChannelFamily:
    """Load a family from a JSON file; the literal ``"example"`` gives :func:`example_family`."""
    if str(source) == "example":
        return example_family()
    try:
        data = json.loads(Path(source).read_text())
    except OSError as exc:
        raise ChannelError(f"cannot read channel file {source}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ChannelError(f"channel file {source} is not valid JSON: {exc}") from None
    return family_from_dict(data)


def single_state_family(matrix: Sequence[Sequence[float]] | np.ndarray, label: str = "0") -> ChannelFamily:
    return ChannelFamily(((label, Dmc(np.asarray(matrix, dtype=float))),))


def bsc(crossover: float) -> Dmc:
    return Dmc(np.array([[1 - crossover, crossover], [crossover, 1 - crossover]]))


def total_variation(p: Iterable[float], q: Iterable[float]) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())
