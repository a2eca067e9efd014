"""
Monte Carlo harness for the random-coding scheme with state-aware typicality decoding.

Messages are 0-based indices in ``[0, 2**k)``. Time index ``j`` (0-based) is
governed by the policy piece and the state block that cover it after scaling
durations by ``k`` and rounding to whole channel uses, exactly as in
:func:`rateless_avc.stopping.stopping_time_integer`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelFamily, Distribution, total_variation
from .stopping import Policy, StateProfile, per_use_index, stopping_time_integer

MAX_K = 14


class SimError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Codebook:
    k: int
    codewords: np.ndarray  # (2**k, n_total) input symbols
    piece_map: np.ndarray  # (n_total,) governing policy piece per time index
    dists: tuple[Distribution, ...]

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def length(self) -> int:
        return self.codewords.shape[1]


@dataclass(frozen=True)
class DecoderConfig:
    g: float = 0.06
    delta: float = 0.25
    min_subchunk: int = 4

    def __post_init__(self):
        if not self.g > 0:
            raise SimError("g must be positive")
        if not self.delta > 0:
            raise SimError("delta must be positive")
        if self.min_subchunk < 1:
            raise SimError("min_subchunk must be at least 1")


@dataclass(frozen=True)
class SubchunkDiag:
    piece: int
    state: str
    length: int
    distance: float | None  # mean l-inf type distance of the sent codeword
    used: bool


@dataclass
class SimOutcome:
    trials: int
    errors: int
    decode_time: int
    stopping_time: int
    per_subchunk_diag: list[SubchunkDiag] = field(default_factory=list)
    mean_max_distance: float | None = None

    @property
    def error_rate(self) -> float:
        return self.errors / self.trials if self.trials else 0.0


def generate_codebook(
    family: ChannelFamily,
    policy: Policy,
    k: int,
    n_total: int,
    seed: int | Sequence[int],
    max_k: int = MAX_K,
) -> Codebook:
    """Draw 2**k codewords of length ``n_total``, entry j i.i.d. from the piece covering j."""
    if k < 0:
        raise SimError("k must be non-negative")
    if k > max_k:
        raise SimError(f"k={k} exceeds the size guard {max_k}; raise max_k to allow it")
    if n_total < 0:
        raise SimError("n_total must be non-negative")
    for piece in policy.pieces:
        if len(piece.dist) != family.input_size:
            raise SimError("policy and channel input alphabets differ")
    rng = np.random.default_rng(seed)
    pieces = per_use_index([p.duration for p in policy.pieces], k, n_total)
    words = np.empty((2**k, n_total), dtype=np.int64)
    for i, piece in enumerate(policy.pieces):
        cols = np.nonzero(pieces == i)[0]
        if cols.size:
            words[:, cols] = rng.choice(family.input_size, size=(2**k, cols.size), p=piece.dist.probs)
    words.setflags(write=False)
    return Codebook(k, words, pieces, tuple(p.dist for p in policy.pieces))


def check_delta_close(codebook: Codebook, policy: Policy, delta: float) -> tuple[bool, int, float]:
    """Prefix-averaged TV between the codebook's empirical marginals and the policy.

    Returns ``(ok, worst_prefix, worst_avg_tv)`` where ``worst_prefix`` is the
    prefix length (1-based) with the largest average, the shortest one on ties.
    """
    n = codebook.length
    if n == 0:
        return True, 0, 0.0
    size = len(policy.pieces[0].dist)
    pieces = per_use_index([p.duration for p in policy.pieces], codebook.k, n)
    tv = np.empty(n)
    for j in range(n):
        q = np.bincount(codebook.codewords[:, j], minlength=size) / codebook.size
        tv[j] = total_variation(q, policy.pieces[pieces[j]].dist.probs)
    avg = np.cumsum(tv) / np.arange(1, n + 1)
    worst = int(np.nonzero(avg >= avg.max() - 1e-12)[0][0])  # shortest among near-ties
    return bool(np.all(avg <= delta + 1e-12)), worst + 1, float(avg[worst])


def _time_states(family: ChannelFamily, profile: StateProfile, k: int, n: int) -> np.ndarray:
    blocks = per_use_index([b.duration for b in profile.blocks], k, n)
    return profile.state_indices(family)[blocks]


def _subchunks(piece_map: np.ndarray, states: np.ndarray) -> list[tuple[int, int, np.ndarray]]:
    """Time indices grouped by (policy piece, state), in key order."""
    pieces = piece_map[: states.size]
    keys = pieces * (int(states.max(initial=0)) + 1) + states
    out = []
    for key in np.unique(keys):
        idx = np.nonzero(keys == key)[0]
        out.append((int(pieces[idx[0]]), int(states[idx[0]]), idx))
    return out


def _type_distances(codebook, family, piece, state, idx, received, rows=None) -> np.ndarray:
    """l-inf distance between each candidate's joint type and p_i(x) W_s(y|x) on ``idx``."""
    words = codebook.codewords if rows is None else codebook.codewords[rows]
    n_out = family.output_size
    cells = family.input_size * n_out
    target = (codebook.dists[piece].probs[:, None] * family.states[state][1].matrix).ravel()
    codes = words[:, idx] * n_out + received[idx][None, :]
    offsets = np.arange(words.shape[0])[:, None] * cells
    counts = np.bincount((codes + offsets).ravel(), minlength=words.shape[0] * cells)
    joint = counts.reshape(words.shape[0], cells) / idx.size
    return np.abs(joint - target[None, :]).max(axis=1)


def dsi_decode(
    codebook: Codebook,
    family: ChannelFamily,
    profile: StateProfile,
    received: np.ndarray,
    config: DecoderConfig,
    decode_time: int | None = None,
) -> int:
    """First message whose joint type is within ``g`` on every used sub-chunk; 0 if none is."""
    received = np.asarray(received, dtype=np.int64)
    if decode_time is not None and received.size != decode_time:
        raise SimError(f"received {received.size} symbols, expected {decode_time}")
    if received.size > codebook.length:
        raise SimError(f"received {received.size} symbols but codewords have length {codebook.length}")
    states = _time_states(family, profile, codebook.k, received.size)
    ok = np.ones(codebook.size, dtype=bool)
    for piece, state, idx in _subchunks(codebook.piece_map, states):
        if idx.size < config.min_subchunk:
            continue
        ok &= _type_distances(codebook, family, piece, state, idx, received) <= config.g + 1e-12
    hits = np.nonzero(ok)[0]
    return int(hits[0]) if hits.size else 0


def transmit(family: ChannelFamily, states: np.ndarray, word: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Pass ``word`` through the state sequence, one memoryless use per symbol."""
    if word.size == 0:
        return np.empty(0, dtype=np.int64)
    mats = np.stack([dmc.matrix for _, dmc in family.states])
    probs = mats[states, word]  # (n, |Y|)
    u = rng.random(word.size)
    out = (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
    return np.minimum(out, family.output_size - 1)


def run_sim(
    family: ChannelFamily,
    policy: Policy,
    profile: StateProfile,
    k: int,
    config: DecoderConfig,
    trials: int,
    seed: int,
    decode_time: int | None = None,
    ensemble: bool = False,
    max_k: int = MAX_K,
    workers: int | None = None,
) -> SimOutcome:
    """Estimate the decoding error at ``ceil((1+delta) tau_k)`` channel uses.

    One codebook is drawn from ``seed`` and reused for every trial; with
    ``ensemble=True`` each trial draws its own codebook instead. Trial ``i``
    uses the generator seeded by ``(seed, i)``.
    """
    if trials < 0:
        raise SimError("trials must be non-negative")
    tau = stopping_time_integer(family, policy, profile, k)
    if math.isinf(tau):
        raise SimError("the policy never accumulates k bits on this profile")
    if decode_time is None:
        decode_time = int(math.ceil((1 + config.delta) * tau - 1e-9))
    if decode_time < 0:
        raise SimError("decode_time must be non-negative")
    shared = None if ensemble else generate_codebook(family, policy, k, decode_time, seed, max_k)
    states = _time_states(family, profile, k, decode_time)
    pieces = per_use_index([p.duration for p in policy.pieces], k, decode_time)
    layout = _subchunks(pieces, states)

    def trial(i: int):
        rng = np.random.default_rng([seed, i])
        book = shared or generate_codebook(family, policy, k, decode_time, [seed, i, 1], max_k)
        msg = int(rng.integers(book.size))
        received = transmit(family, states, book.codewords[msg], rng)
        guess = dsi_decode(book, family, profile, received, config, decode_time)
        dists = [
            float(_type_distances(book, family, p, s, idx, received, rows=[msg])[0])
            for p, s, idx in layout
        ]
        return guess != msg, dists

    if workers and workers > 1 and trials > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(trial, range(trials)))
    else:
        results = [trial(i) for i in range(trials)]

    errors = sum(int(err) for err, _ in results)
    per_chunk = np.array([d for _, d in results]).reshape(trials, len(layout))
    diag = [
        SubchunkDiag(
            piece=p,
            state=family.labels[s],
            length=int(idx.size),
            distance=float(per_chunk[:, c].mean()) if trials else None,
            used=idx.size >= config.min_subchunk,
        )
        for c, (p, s, idx) in enumerate(layout)
    ]
    worst = float(per_chunk.max(axis=1).mean()) if trials and layout else None
    return SimOutcome(trials, errors, decode_time, int(tau), diag, worst)
