"""
Piecewise-constant input policies, block-form state profiles and stopping times.

Time is normalised by the message length ``k``: a duration of 1.5 means 1.5k
channel uses, and accumulated information is measured in units of k bits, so
decoding happens when the accumulation reaches 1. Within every intersection of
a policy piece and a state block the accumulation rate is constant, which makes
the fluid stopping time exact (linear interpolation inside one segment).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ChannelError, ChannelFamily, Distribution, symmetric_input

INF = math.inf
# accumulations within this distance of the target count as having reached it
REACH_EPS = 1e-12


class GrammarError(ValueError):
    """Malformed profile or policy text; ``position`` is the 0-based offset of the problem."""

    def __init__(self, message: str, text: str = "", position: int = 0):
        super().__init__(f"{message} (at position {position} in {text!r})" if text else message)
        self.text = text
        self.position = position


def _format_duration(d: float) -> str:
    return "inf" if math.isinf(d) else repr(float(d))


@dataclass(frozen=True)
class Piece:
    dist: Distribution
    duration: float


@dataclass(frozen=True)
class Policy:
    """Product input law ``p_1^{n_1} ... p_{l-1}^{n_{l-1}} p_l^inf`` with durations in units of k."""

    pieces: tuple[Piece, ...]

    def __post_init__(self):
        pieces = tuple(self.pieces)
        if not pieces:
            raise ValueError("a policy needs at least one piece")
        for i, piece in enumerate(pieces):
            last = i == len(pieces) - 1
            if last and not math.isinf(piece.duration):
                raise ValueError("the last policy piece must have infinite duration")
            if not last and not (0 < piece.duration < INF):
                raise ValueError(f"piece {i} needs a finite positive duration, got {piece.duration}")
        sizes = {len(p.dist) for p in pieces}
        if len(sizes) != 1:
            raise ValueError(f"pieces use different alphabet sizes: {sorted(sizes)}")
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def single(cls, dist: Distribution) -> "Policy":
        return cls((Piece(dist, INF),))

    @classmethod
    def from_parts(cls, dists: Sequence[Distribution], durations: Sequence[float]) -> "Policy":
        """``durations`` lists the finite pieces only (one fewer than ``dists``)."""
        if len(durations) != len(dists) - 1:
            raise ValueError("need exactly one duration per non-final piece")
        return cls(tuple(Piece(d, t) for d, t in zip(dists, list(durations) + [INF])))

    @property
    def ell(self) -> int:
        return len(self.pieces)

    @property
    def switch_times(self) -> np.ndarray:
        """Cumulative times at which the policy moves to its next piece."""
        return np.cumsum([p.duration for p in self.pieces[:-1]], dtype=float)

    def rate_table(self, family: ChannelFamily) -> np.ndarray:
        """``table[i, s]`` = mutual information of piece i under state s (bits per use)."""
        return np.array([family.rates(p.dist) for p in self.pieces])

    def to_dict(self) -> dict:
        return {
            "pieces": [
                {"p": p.dist.tolist(), "duration": "inf" if math.isinf(p.duration) else p.duration}
                for p in self.pieces
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Policy":
        try:
            raw = data["pieces"]
            pieces = []
            for entry in raw:
                dur = entry["duration"]
                dur = INF if isinstance(dur, str) and dur.lower() in {"inf", "infinity"} else float(dur)
                pieces.append(Piece(Distribution(entry["p"]), dur))
        except (KeyError, TypeError) as exc:
            raise GrammarError(f"policy JSON is missing or malformed: {exc}") from None
        return cls(tuple(pieces))


def symmetric_policy(ps: Sequence[float], switch_times: Sequence[float] = ()) -> Policy:
    """Example-family policy from symmetric parameters ``p_i`` and cumulative switch times."""
    times = [0.0, *switch_times]
    durations = [b - a for a, b in zip(times, times[1:])]
    return Policy.from_parts([symmetric_input(p) for p in ps], durations)


def two_piece_policy(p1: float, t: float, p2: float = 2 / 3) -> Policy:
    return symmetric_policy([p1, p2], [t])


_SHORTHAND_SINGLE = re.compile(r"^single:(?P<p>[^,@]+)$")
_SHORTHAND_TWO = re.compile(r"^two:(?P<p1>[^@]+)@(?P<t>[^,]+),(?P<p2>.+)$")


def parse_policy(text: str) -> Policy:
    """``single:<p>``, ``two:<p1>@<t>,<p2>`` or a path to a policy JSON file."""
    text = text.strip()
    m = _SHORTHAND_SINGLE.match(text)
    try:
        if m:
            return symmetric_policy([_parse_number(m["p"], text, 7)])
        m = _SHORTHAND_TWO.match(text)
        if m:
            p1 = _parse_number(m["p1"], text, m.start("p1"))
            t = _parse_number(m["t"], text, m.start("t"))
            p2 = _parse_number(m["p2"], text, m.start("p2"))
            return two_piece_policy(p1, t, p2)
    except ChannelError as exc:
        raise GrammarError(str(exc), text, 0) from None
    if text.startswith(("single:", "two:")):
        raise GrammarError("malformed policy shorthand", text, text.index(":") + 1)
    path = Path(text)
    if path.suffix == ".json" or path.exists():
        try:
            return Policy.from_dict(json.loads(path.read_text()))
        except OSError as exc:
            raise GrammarError(f"cannot read policy file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise GrammarError(f"policy file is not valid JSON: {exc}") from None
    raise GrammarError("expected single:<p>, two:<p1>@<t>,<p2> or a policy JSON path", text, 0)


def _parse_number(token: str, text: str, pos: int) -> float:
    token = token.strip()
    if "/" in token:
        num, _, den = token.partition("/")
        try:
            return float(num) / float(den)
        except (ValueError, ZeroDivisionError):
            raise GrammarError(f"bad number {token!r}", text, pos) from None
    try:
        return float(token)
    except ValueError:
        raise GrammarError(f"bad number {token!r}", text, pos) from None


@dataclass(frozen=True)
class Block:
    label: str
    duration: float


@dataclass(frozen=True)
class StateProfile:
    """State sequence as constant blocks; the last block lasts forever."""

    blocks: tuple[Block, ...]

    def __post_init__(self):
        blocks = tuple(Block(str(b.label), float(b.duration)) for b in self.blocks)
        if not blocks:
            raise ValueError("a profile needs at least one block")
        for i, b in enumerate(blocks):
            last = i == len(blocks) - 1
            if last and not math.isinf(b.duration):
                raise ValueError("the last block of a profile must be infinite")
            if not last and not (0 < b.duration < INF):
                raise ValueError(f"block {i} needs a finite positive duration, got {b.duration}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def of(cls, *blocks: tuple[str, float]) -> "StateProfile":
        """``StateProfile.of(("1", 1), ("2", INF))``"""
        return cls(tuple(Block(str(lab), dur) for lab, dur in blocks))

    @classmethod
    def constant(cls, label: str) -> "StateProfile":
        return cls((Block(str(label), INF),))

    @classmethod
    def parse(cls, text: str) -> "StateProfile":
        blocks = []
        pos = 0
        for token in text.split(","):
            stripped = token.strip()
            offset = pos + token.find(stripped[:1]) if stripped else pos
            label, caret, dur = stripped.partition("^")
            if not caret or not label:
                raise GrammarError("expected label^duration", text, offset)
            if dur.lower() in {"inf", "infinity"}:
                value = INF
            else:
                value = _parse_number(dur, text, offset + len(label) + 1)
            blocks.append(Block(label, value))
            pos += len(token) + 1
        try:
            return cls(tuple(blocks))
        except ValueError as exc:
            raise GrammarError(str(exc), text, max(pos - 1, 0)) from None

    def encode(self) -> str:
        return ",".join(f"{b.label}^{_format_duration(b.duration)}" for b in self.blocks)

    def sort_key(self) -> tuple:
        return tuple((b.label, b.duration) for b in self.blocks)

    @property
    def block_ends(self) -> np.ndarray:
        return np.cumsum([b.duration for b in self.blocks[:-1]], dtype=float)

    def state_indices(self, family: ChannelFamily) -> np.ndarray:
        return np.array([family.index(b.label) for b in self.blocks], dtype=int)

    def normalized(self) -> "StateProfile":
        """Merge adjacent blocks carrying the same label."""
        merged: list[Block] = []
        for b in self.blocks:
            if merged and merged[-1].label == b.label:
                merged[-1] = Block(b.label, merged[-1].duration + b.duration)
            else:
                merged.append(b)
        return StateProfile(tuple(merged))

    def __str__(self) -> str:
        return self.encode()


@dataclass(frozen=True)
class StoppingResult:
    """``tau`` in units of k (``inf`` when accumulation never reaches 1)."""

    tau: float
    trace: tuple[tuple[float, float], ...]

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.tau)


def _merged_segments(policy_bounds: np.ndarray, profile_bounds: np.ndarray) -> np.ndarray:
    return np.unique(np.concatenate([[0.0], policy_bounds, profile_bounds]))


def _accumulate(starts: np.ndarray, rate_at) -> StoppingResult:
    """Walk segments [starts[j], starts[j+1]) (last one open-ended) until accumulation hits 1."""
    acc = 0.0
    trace = [(0.0, 0.0)]
    for j, x0 in enumerate(starts):
        rate = rate_at(x0)
        x1 = starts[j + 1] if j + 1 < len(starts) else INF
        gained = rate * (x1 - x0) if rate > 0 else 0.0
        if acc + gained >= 1.0 - REACH_EPS:
            tau = min(x0 + max(1.0 - acc, 0.0) / rate, x1)
            trace.append((float(tau), 1.0))
            return StoppingResult(float(tau), tuple(trace))
        if math.isinf(x1):
            break
        acc += gained
        trace.append((float(x1), float(acc)))
    return StoppingResult(INF, tuple(trace))


def stopping_time_fluid(family: ChannelFamily, policy: Policy, profile: StateProfile) -> StoppingResult:
    """Normalised time at which the policy's accumulated mutual information reaches k bits."""
    rates = policy.rate_table(family)
    states = profile.state_indices(family)
    switch = policy.switch_times
    ends = profile.block_ends
    starts = _merged_segments(switch, ends)

    def rate_at(x: float) -> float:
        piece = int(np.searchsorted(switch, x, side="right"))
        block = int(np.searchsorted(ends, x, side="right"))
        return float(rates[piece, states[block]])

    return _accumulate(starts, rate_at)


def optimal_stopping_time(family: ChannelFamily, profile: StateProfile) -> StoppingResult:
    """Clairvoyant stopping time: the same accumulation at rate C(s)."""
    caps = family.capacities
    states = profile.state_indices(family)
    ends = profile.block_ends
    starts = _merged_segments(np.empty(0), ends)

    def rate_at(x: float) -> float:
        return float(caps[states[int(np.searchsorted(ends, x, side="right"))]])

    return _accumulate(starts, rate_at)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def integer_schedule(durations: Sequence[float], k: int) -> list[int]:
    """Finite durations scaled by k and rounded to channel uses (ties up)."""
    return [_round_half_up(d * k) for d in durations]


def per_use_index(durations: Sequence[float], k: int, n: int) -> np.ndarray:
    """Index of the piece/block covering each of the first n channel uses."""
    lengths = integer_schedule(durations[:-1], k)
    head = np.repeat(np.arange(len(lengths)), lengths)[:n]
    return np.concatenate([head, np.full(n - head.size, len(durations) - 1)]).astype(int)


def stopping_time_integer(family: ChannelFamily, policy: Policy, profile: StateProfile, k: int) -> int | float:
    """Smallest number of channel uses whose summed per-use mutual information reaches k bits.

    Returns ``math.inf`` when the tail never gets there.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return 0
    rates = policy.rate_table(family)
    states = profile.state_indices(family)
    pol_bounds = np.cumsum(integer_schedule([p.duration for p in policy.pieces[:-1]], k))
    pro_bounds = np.cumsum(integer_schedule([b.duration for b in profile.blocks[:-1]], k))
    cuts = [int(c) for c in np.unique(np.concatenate([[0], pol_bounds, pro_bounds]))]
    acc = 0.0
    for j, start in enumerate(cuts):
        last = j + 1 == len(cuts)
        length = INF if last else cuts[j + 1] - start
        piece = int(np.searchsorted(pol_bounds, start, side="right"))
        block = int(np.searchsorted(pro_bounds, start, side="right"))
        rate = float(rates[piece, states[block]])
        if rate > 0:
            # slack absorbs float drift when a segment ends exactly on k bits
            need = max(1, math.ceil((k - acc) / rate - 1e-9))
            if need <= length:
                return start + need
        if last:
            return INF
        acc += rate * length
    return INF


def ratio(family: ChannelFamily, policy: Policy, profile: StateProfile) -> float:
    """tau*/tau for one profile; 0 when the policy never decodes, 1 when neither does."""
    tau = stopping_time_fluid(family, policy, profile).tau
    tau_star = optimal_stopping_time(family, profile).tau
    return ratio_from_times(tau_star, tau)


def regret_value(family: ChannelFamily, policy: Policy, profile: StateProfile) -> float:
    """1/tau* - 1/tau in bits per channel use (an unbounded time contributes rate 0)."""
    tau = stopping_time_fluid(family, policy, profile).tau
    tau_star = optimal_stopping_time(family, profile).tau
    return regret_from_times(tau_star, tau)


def ratio_from_times(tau_star, tau):
    tau_star = np.asarray(tau_star, dtype=float)
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(np.isinf(tau), np.where(np.isinf(tau_star), 1.0, 0.0), tau_star / tau)
    return float(out) if out.ndim == 0 else out


def regret_from_times(tau_star, tau):
    with np.errstate(divide="ignore"):
        out = 1.0 / np.asarray(tau_star, dtype=float) - 1.0 / np.asarray(tau, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


# -- batched evaluation -------------------------------------------------------


def batch_stopping_times(
    ends: np.ndarray, states: np.ndarray, switch: np.ndarray, rates: np.ndarray
) -> np.ndarray:
    """Fluid stopping times for many profiles sharing one state pattern.

    ``ends`` is (N, n): cumulative end times of the n finite blocks of each
    profile. ``states`` is (n+1,): state index of every block, tail included.
    ``switch`` is (l-1,): cumulative policy switch times. ``rates`` is
    (P, l, S): rate tables for P policies sharing these switch times.
    Returns a (P, N) array of stopping times (``inf`` when never reached).
    """
    ends = np.asarray(ends, dtype=float)
    if ends.ndim != 2:
        ends = ends.reshape(1, -1)
    n_rows = ends.shape[0]
    switch = np.asarray(switch, dtype=float)
    bounds = np.concatenate([ends, np.broadcast_to(switch, (n_rows, switch.size))], axis=1)
    bounds.sort(axis=1)
    starts = np.concatenate([np.zeros((n_rows, 1)), bounds], axis=1)  # (N, m+1)

    block = (ends[:, None, :] <= starts[:, :, None]).sum(axis=2)
    piece = np.searchsorted(switch, starts, side="right")
    rate = rates[:, piece, np.asarray(states)[block]]  # (P, N, m+1)

    tail_rate = rate[:, :, -1]
    tail_start = starts[None, :, -1]
    if bounds.shape[1] == 0:
        acc_tail = np.zeros_like(tail_rate)
        any_reached = np.zeros(tail_rate.shape, dtype=bool)
        inside = np.zeros_like(tail_rate)
    else:
        seg_rate = rate[:, :, :-1]
        gained = seg_rate * np.diff(starts, axis=1)
        acc_end = np.cumsum(gained, axis=2)
        reached = acc_end >= 1.0 - REACH_EPS
        any_reached = reached.any(axis=2)
        j = reached.argmax(axis=2)[:, :, None]
        r_j = np.take_along_axis(seg_rate, j, axis=2)[:, :, 0]
        acc_j = np.take_along_axis(acc_end - gained, j, axis=2)[:, :, 0]
        x0 = np.take_along_axis(np.broadcast_to(starts[:, :-1], seg_rate.shape), j, axis=2)[:, :, 0]
        x1 = np.take_along_axis(np.broadcast_to(starts[:, 1:], seg_rate.shape), j, axis=2)[:, :, 0]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            inside = np.minimum(x0 + np.maximum(1.0 - acc_j, 0.0) / r_j, x1)
        acc_tail = acc_end[:, :, -1]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tail = np.where(tail_rate > 0, tail_start + np.maximum(1.0 - acc_tail, 0.0) / tail_rate, INF)
    return np.where(any_reached, inside, tail)
