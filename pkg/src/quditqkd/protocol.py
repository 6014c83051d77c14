"""Monte Carlo engine for the prepare-and-measure session.

Per round: Alice draws a uniform unordered index pair i < j and a sign
bit s, prepares (|i> + (-1)^s |j>)/sqrt(2), and sends it through the
channel.  Bob draws his own pair and measures the three-outcome basis
{Plus, Minus, Outside}.  Pairs are announced, rounds with equal pairs
are sifted into the raw key (Plus -> 0, Minus -> 1; a sifted round whose
outcome fell Outside decodes to a fresh random bit and is counted
separately), a random sample of the sifted rounds is revealed to
estimate the error rate, and the continuation inequality

    e_b * e_c + (N - 1)(1 - e_c)/(N - 2) < 1/2      (strict)

is evaluated on the estimates.

Randomness contract
-------------------

One master seed expands via SeedSequence.spawn into five child streams:
alice, bob, channel, sample, pairing (in that index order).  Per round,
alice consumes exactly two uniforms (pair, sign), the channel two
(term, auxiliary), bob three (pair, outcome, outside-decode noise).
Batched draws fill row-major, so any chunking of rounds -- including the
one-round-at-a-time networked runner -- reproduces identical sessions.
The sample stream is consumed once (a single permutation of the sifted
rounds); the pairing stream is left untouched here and feeds the
post-processing stage seeds downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .channels import (
    ChannelModel,
    InterceptResend,
    RandomDephase,
    UnitaryTerm,
    resolve_channel,
    transmit,
)
from .field import FieldSpec
from .qstates import Outcome, PairState, SparseKet, decide_outcome, probabilities

# Two-sided 99% normal quantile, hardcoded to avoid a scipy dependency.
Z_99 = 2.5758293035489004

STREAM_ALICE = 0
STREAM_BOB = 1
STREAM_CHANNEL = 2
STREAM_SAMPLE = 3
STREAM_PAIRING = 4
_STREAM_COUNT = 5

_ENGINE_CHUNK = 1 << 18

EC_MODES = ("in_pair", "announced")


def spawn_streams(seed) -> list[np.random.Generator]:
    """The five independent child generators of one master seed.

    Index layout: [alice, bob, channel, sample, pairing].  Every role in
    the networked runner builds this same list from its own seed and uses
    only its slot, so a shared seed reproduces the in-process engine.
    """
    children = np.random.SeedSequence(seed).spawn(_STREAM_COUNT)
    return [np.random.default_rng(c) for c in children]


def pair_table(spec: FieldSpec) -> np.ndarray:
    """All unordered index pairs u < v in lexicographic order, shape (C, 2)."""
    n = spec.order
    return np.array(
        [(u, v) for u in range(n) for v in range(u + 1, n)], dtype=np.int16
    )


def pick_pair_index(u: float, count: int) -> int:
    """Uniform table row from one uniform draw (top edge clamped)."""
    return min(int(u * count), count - 1)


def pair_offset(spec: FieldSpec, i: int, j: int, u: int, v: int) -> int:
    """Line offset of Bob's pair {u, v} relative to Alice's {i, j}.

    Returns the field factor a with u = i + a*(i+j) when both pairs share
    the same index difference, else -1 (off the line).  Offsets a and a^1
    name the same unordered pair, so class membership is a & ~1.
    """
    delta = i ^ j
    if (u ^ v) != delta:
        return -1
    return spec.mul(u ^ i, spec.inv(delta))


def pm_condition_lhs(e_b, e_c, n: int):
    """Left side of the continuation inequality, duck-typed.

    Exact inputs give an exact value (Fraction comparisons against the
    0.5 literal are exact in Python), so boundary cases are decidable.
    """
    if n < 2:
        raise ValueError("continuation condition needs n >= 2 (order >= 4)")
    if not (0 <= e_b <= 1 and 0 <= e_c <= 1):
        raise ValueError("e_b and e_c must lie in [0, 1]")
    order = 1 << n
    return e_b * e_c + (order - 1) * (1 - e_c) / (order - 2)


def check_pm_condition(e_b, e_c, n: int) -> bool:
    """Strict continuation verdict on the announced-statistics pair."""
    return pm_condition_lhs(e_b, e_c, n) < 0.5


def condition_verdict(e_b, e_c, n: int, strict: bool = True):
    """(lhs, verdict) from two rate estimates; undefined rates fail.

    Shared by the in-process engine and the networked roles so both
    decide continuation identically.
    """
    if e_b.rate is None or e_c.rate is None:
        return None, False
    lhs = pm_condition_lhs(e_b.rate, e_c.rate, n)
    return lhs, (lhs < 0.5 if strict else lhs <= 0.5)


def wilson_interval(successes: int, trials: int, z: float = Z_99):
    """Wilson score interval; (0, 1) when there are no trials."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    zz = z * z
    denom = 1.0 + zz / trials
    center = (p + zz / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + zz / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class RateEstimate:
    """A counted rate with its Wilson confidence interval."""

    successes: int
    trials: int
    z: float
    rate: float | None
    low: float
    high: float

    @classmethod
    def from_counts(cls, successes: int, trials: int, z: float = Z_99):
        rate = successes / trials if trials else None
        low, high = wilson_interval(successes, trials, z)
        return cls(int(successes), int(trials), z, rate, low, high)

    @property
    def half_width(self) -> float:
        return (self.high - self.low) / 2

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high

    def to_json_dict(self) -> dict:
        return {
            "successes": self.successes,
            "trials": self.trials,
            "rate": self.rate,
            "low": self.low,
            "high": self.high,
            "half_width": self.half_width,
            "z": self.z,
        }


@dataclass(frozen=True)
class SessionConfig:
    """Parameters of one simulated session.

    ``channel`` is a ChannelModel or a builder string such as
    "z_flip:0.3".  ``ec_mode`` selects the accepted-rate estimator:
    "in_pair" conditions on in-pair outcomes (the reading matched by the
    closed-form analysis) while "announced" uses basis announcements
    alone, kept for comparison.  The continuation comparison is strict
    by default; ``condition_strict=False`` relaxes it to <= for
    boundary experiments.
    """

    n: int = 2
    rounds: int = 10000
    channel: ChannelModel | str = "identity"
    sample_fraction: float = 0.1
    seed: int = 0
    ec_mode: str = "in_pair"
    condition_strict: bool = True
    modulus: int | None = None

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.sample_fraction < 1:
            raise ValueError("sample_fraction must be strictly between 0 and 1")
        if self.ec_mode not in EC_MODES:
            raise ValueError(f"ec_mode must be one of {EC_MODES}")


@dataclass(frozen=True)
class RoundRecord:
    """One row of the round log (decoded view)."""

    round_index: int
    alice_pair: tuple[int, int]
    alice_bit: int
    bob_pair: tuple[int, int]
    outcome: Outcome
    sifted: bool
    offset: int | None


class RoundLog:
    """Columnar per-round record of a session.

    Arrays (length = round count): alice_i/alice_j/alice_s, bob_i/bob_j,
    outcome, bob_bit (decoded, including the random fill for sifted
    Outside rounds), and offset (line offset, -1 when Bob's pair is off
    Alice's line).
    """

    def __init__(self, alice_i, alice_j, alice_s, bob_i, bob_j, outcome, bob_bit, offset):
        self.alice_i = alice_i
        self.alice_j = alice_j
        self.alice_s = alice_s
        self.bob_i = bob_i
        self.bob_j = bob_j
        self.outcome = outcome
        self.bob_bit = bob_bit
        self.offset = offset

    def __len__(self) -> int:
        return len(self.alice_i)

    @property
    def sifted(self) -> np.ndarray:
        return (self.alice_i == self.bob_i) & (self.alice_j == self.bob_j)

    @property
    def clicked(self) -> np.ndarray:
        return self.outcome != int(Outcome.OUTSIDE)

    def record(self, idx: int) -> RoundRecord:
        off = int(self.offset[idx])
        return RoundRecord(
            idx,
            (int(self.alice_i[idx]), int(self.alice_j[idx])),
            int(self.alice_s[idx]),
            (int(self.bob_i[idx]), int(self.bob_j[idx])),
            Outcome(int(self.outcome[idx])),
            bool(self.sifted[idx]),
            None if off < 0 else off,
        )

    def to_csv(self, fileobj) -> None:
        """Write the log as CSV: round,i,j,s,i_prime,j_prime,outcome,sifted,offset."""
        writer = csv.writer(fileobj)
        writer.writerow(
            ["round", "i", "j", "s", "i_prime", "j_prime", "outcome", "sifted", "offset"]
        )
        names = {0: "plus", 1: "minus", 2: "outside"}
        sift = self.sifted
        for r in range(len(self)):
            off = int(self.offset[r])
            writer.writerow(
                [
                    r,
                    int(self.alice_i[r]),
                    int(self.alice_j[r]),
                    int(self.alice_s[r]),
                    int(self.bob_i[r]),
                    int(self.bob_j[r]),
                    names[int(self.outcome[r])],
                    int(sift[r]),
                    "" if off < 0 else off,
                ]
            )


@dataclass(frozen=True)
class SessionStats:
    """Summary statistics of a session.

    ``e_b`` is the in-pair sample error rate (the estimator the
    closed-form analysis predicts); ``e_b_all`` additionally counts the
    randomly decoded Outside rounds of the sample.  ``status`` is
    "insufficient-sift" when no round survived sifting.
    """

    status: str
    rounds: int
    sifted_count: int
    sample_count: int
    outside_in_sifted: int
    key_length: int
    ec_mode: str
    e_b: RateEstimate
    e_b_all: RateEstimate
    e_c: RateEstimate
    counts: dict[tuple[int, int], int]
    condition_lhs: float | None
    condition_pass: bool

    def to_json_dict(self) -> dict:
        return {
            "status": self.status,
            "rounds": self.rounds,
            "sifted": self.sifted_count,
            "sampled": self.sample_count,
            "outside_in_sifted": self.outside_in_sifted,
            "key_length": self.key_length,
            "ec_mode": self.ec_mode,
            "e_b": self.e_b.to_json_dict(),
            "e_b_all": self.e_b_all.to_json_dict(),
            "e_c": self.e_c.to_json_dict(),
            "counts": {f"{a},{o}": c for (a, o), c in sorted(self.counts.items())},
            "condition": {"lhs": self.condition_lhs, "pass": self.condition_pass},
        }


class SessionOutput(NamedTuple):
    alice_key: np.ndarray
    bob_key: np.ndarray
    stats: SessionStats
    log: RoundLog


def draw_alice_round(spec: FieldSpec, table: np.ndarray, rng) -> PairState:
    """Alice's per-round preparation: two uniforms (pair, sign bit)."""
    row = pick_pair_index(rng.random(), len(table))
    s = int(rng.random() >= 0.5)
    return PairState(spec, int(table[row, 0]), int(table[row, 1]), s)


def draw_bob_round(spec: FieldSpec, table: np.ndarray, ket: SparseKet, rng):
    """Bob's per-round measurement: three uniforms (pair, outcome, noise).

    Returns ((u, v), outcome, noise_bit).  The noise bit is drawn every
    round whether or not it is needed, keeping the draw count fixed.
    """
    row = pick_pair_index(rng.random(), len(table))
    u, v = int(table[row, 0]), int(table[row, 1])
    p_plus, p_minus, _ = probabilities(ket, spec.el(u), spec.el(v))
    outcome = decide_outcome(float(p_plus), float(p_minus), rng.random())
    noise = int(rng.random() >= 0.5)
    return (u, v), outcome, noise


def decode_bob_bit(outcome: Outcome, noise_bit: int) -> int:
    """Plus -> 0, Minus -> 1, Outside -> the provided random bit."""
    return int(outcome) if outcome != Outcome.OUTSIDE else noise_bit


def estimate_ec(log: RoundLog, mode: str = "in_pair", z: float = Z_99) -> RateEstimate:
    """Accepted-rate estimate from announced data.

    "in_pair": among rounds measured on Alice's line with an in-pair
    outcome, the fraction whose offset class is {0, 1} (i.e. Bob's pair
    equals Alice's).  Rejected (unsifted) on-line rounds enter the
    denominator.  "announced": same ratio over announcements alone,
    ignoring outcomes; this alternative reading yields 2/N for every
    channel and is kept only for comparison.  Zero denominator gives an
    undefined estimate (rate None).
    """
    if mode not in EC_MODES:
        raise ValueError(f"unknown ec mode {mode!r}")
    if len(log) == 0:
        raise ValueError("empty round log")
    on_line = log.offset >= 0
    in_class = on_line & ((log.offset & ~1) == 0)
    if mode == "in_pair":
        clicked = log.clicked
        num = int(np.count_nonzero(in_class & clicked))
        den = int(np.count_nonzero(on_line & clicked))
    else:
        num = int(np.count_nonzero(in_class))
        den = int(np.count_nonzero(on_line))
    return RateEstimate.from_counts(num, den, z)


def _empty_stats(cfg: SessionConfig, log: RoundLog) -> SessionStats:
    none = RateEstimate.from_counts(0, 0)
    return SessionStats(
        status="insufficient-sift",
        rounds=cfg.rounds,
        sifted_count=0,
        sample_count=0,
        outside_in_sifted=0,
        key_length=0,
        ec_mode=cfg.ec_mode,
        e_b=none,
        e_b_all=none,
        e_c=estimate_ec(log, cfg.ec_mode),
        counts=_outcome_counts(log),
        condition_lhs=None,
        condition_pass=False,
    )


def _outcome_counts(log: RoundLog) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    on = log.offset >= 0
    if on.any():
        code = log.offset[on].astype(np.int64) * 3 + log.outcome[on]
        for c, k in zip(*np.unique(code, return_counts=True)):
            counts[(int(c) // 3, int(c) % 3)] = int(k)
    off = ~on
    if off.any():
        for o, k in zip(*np.unique(log.outcome[off], return_counts=True)):
            counts[(-1, int(o))] = int(k)
    return counts


def run_session(cfg: SessionConfig) -> SessionOutput:
    """Run a full session and estimate its statistics.

    Vectorised over rounds; consumes randomness exactly as the scalar
    per-round helpers above, so a scalar replay with the same master
    seed (as the networked runner performs) produces identical output.
    """
    spec = FieldSpec.get(cfg.n, cfg.modulus)
    model = resolve_channel(cfg.channel, spec)
    streams = spawn_streams(cfg.seed)
    table = pair_table(spec)
    pairs = len(table)
    rounds = cfg.rounds

    alice_i = np.empty(rounds, np.int16)
    alice_j = np.empty(rounds, np.int16)
    alice_s = np.empty(rounds, np.int8)
    bob_i = np.empty(rounds, np.int16)
    bob_j = np.empty(rounds, np.int16)
    outcome = np.empty(rounds, np.int8)
    bob_bit = np.empty(rounds, np.int8)
    offset = np.empty(rounds, np.int16)

    mul_t = spec.mul_table.astype(np.int16)
    inv_t = spec.inv_table.astype(np.int16)
    phase_tabs = {}
    for ti, (_, action) in enumerate(model.terms):
        if isinstance(action, UnitaryTerm):
            phase_tabs[ti] = np.array(
                [(action.mask >> y) & 1 for y in range(spec.order)], dtype=np.int8
            )

    for lo in range(0, rounds, _ENGINE_CHUNK):
        hi = min(lo + _ENGINE_CHUNK, rounds)
        m = hi - lo
        a_draw = streams[STREAM_ALICE].random((m, 2))
        c_draw = streams[STREAM_CHANNEL].random((m, 2))
        b_draw = streams[STREAM_BOB].random((m, 3))

        a_row = np.minimum((a_draw[:, 0] * pairs).astype(np.int64), pairs - 1)
        ai = table[a_row, 0]
        aj = table[a_row, 1]
        s = (a_draw[:, 1] >= 0.5).astype(np.int8)

        t_arr = np.minimum(
            np.searchsorted(model.cum_weights, c_draw[:, 0], side="right"),
            len(model.terms) - 1,
        )
        aux = c_draw[:, 1]
        # Transmitted state per round: support {m1, m2} (m2 = -1 for a
        # collapsed single-term ket) and relative sign bit sigma.
        m1 = ai.copy()
        m2 = aj.copy()
        sigma = s.copy()
        nterms = np.full(m, 2, np.int8)
        for ti, (_, action) in enumerate(model.terms):
            rows = t_arr == ti
            if not rows.any():
                continue
            if isinstance(action, UnitaryTerm):
                ph = phase_tabs[ti]
                sigma[rows] ^= ph[ai[rows]] ^ ph[aj[rows]]
                x1 = ai[rows] ^ action.shift
                x2 = aj[rows] ^ action.shift
                m1[rows] = np.minimum(x1, x2)
                m2[rows] = np.maximum(x1, x2)
            elif isinstance(action, RandomDephase):
                sigma[rows] ^= aux[rows] < 0.5
            else:
                assert isinstance(action, InterceptResend)
                m1[rows] = np.where(aux[rows] < 0.5, ai[rows], aj[rows])
                m2[rows] = -1
                sigma[rows] = 0
                nterms[rows] = 1

        b_row = np.minimum((b_draw[:, 0] * pairs).astype(np.int64), pairs - 1)
        bu = table[b_row, 0]
        bv = table[b_row, 1]
        sign2 = (1 - 2 * sigma.astype(np.int64))
        c_u = (bu == m1) * 1 + (bu == m2) * sign2
        c_v = (bv == m1) * 1 + (bv == m2) * sign2
        # Squared projections are dyadic rationals, exact in float64, so
        # the threshold comparisons match the scalar Fraction path.
        p_plus = (c_u + c_v) ** 2 / (2.0 * nterms)
        p_minus = (c_u - c_v) ** 2 / (2.0 * nterms)
        u_out = b_draw[:, 1]
        out = np.where(u_out < p_plus, 0, np.where(u_out < p_plus + p_minus, 1, 2))
        noise = (b_draw[:, 2] >= 0.5).astype(np.int8)

        delta = ai ^ aj
        on_line = (bu ^ bv) == delta
        off = np.full(m, -1, np.int16)
        off[on_line] = mul_t[(bu ^ ai)[on_line], inv_t[delta[on_line]]]

        alice_i[lo:hi] = ai
        alice_j[lo:hi] = aj
        alice_s[lo:hi] = s
        bob_i[lo:hi] = bu
        bob_j[lo:hi] = bv
        outcome[lo:hi] = out
        bob_bit[lo:hi] = np.where(out < 2, out, noise)
        offset[lo:hi] = off

    log = RoundLog(alice_i, alice_j, alice_s, bob_i, bob_j, outcome, bob_bit, offset)

    sift_idx = np.flatnonzero(log.sifted)
    n_sift = len(sift_idx)
    if n_sift == 0:
        empty = np.zeros(0, np.uint8)
        return SessionOutput(empty, empty, _empty_stats(cfg, log), log)

    # Sample selection: one permutation draw, prefix of floor(f * sifted).
    perm = streams[STREAM_SAMPLE].permutation(n_sift)
    n_samp = int(cfg.sample_fraction * n_sift)
    sample_pos = np.sort(perm[:n_samp])
    sample_rounds = sift_idx[sample_pos]
    keep = np.ones(n_sift, bool)
    keep[sample_pos] = False
    keep_rounds = sift_idx[keep]

    alice_key = alice_s[keep_rounds].astype(np.uint8)
    bob_key = bob_bit[keep_rounds].astype(np.uint8)

    samp_click = log.clicked[sample_rounds]
    samp_err = alice_s[sample_rounds] != bob_bit[sample_rounds]
    e_b = RateEstimate.from_counts(
        int(np.count_nonzero(samp_err & samp_click)),
        int(np.count_nonzero(samp_click)),
    )
    e_b_all = RateEstimate.from_counts(int(np.count_nonzero(samp_err)), n_samp)
    e_c = estimate_ec(log, cfg.ec_mode)
    lhs, verdict = condition_verdict(e_b, e_c, cfg.n, cfg.condition_strict)

    stats = SessionStats(
        status="ok",
        rounds=rounds,
        sifted_count=n_sift,
        sample_count=n_samp,
        outside_in_sifted=int(np.count_nonzero(~log.clicked[sift_idx])),
        key_length=len(alice_key),
        ec_mode=cfg.ec_mode,
        e_b=e_b,
        e_b_all=e_b_all,
        e_c=e_c,
        counts=_outcome_counts(log),
        condition_lhs=lhs,
        condition_pass=verdict,
    )
    return SessionOutput(alice_key, bob_key, stats, log)


def replay_session_scalar(cfg: SessionConfig) -> SessionOutput:
    """Round-at-a-time reference implementation of :func:`run_session`.

    Used by tests to pin the batching invariance; the networked roles
    follow exactly this draw order across processes.
    """
    spec = FieldSpec.get(cfg.n, cfg.modulus)
    model = resolve_channel(cfg.channel, spec)
    streams = spawn_streams(cfg.seed)
    table = pair_table(spec)
    cols = {name: [] for name in ("ai", "aj", "s", "bi", "bj", "out", "bit", "off")}
    for _ in range(cfg.rounds):
        prep = draw_alice_round(spec, table, streams[STREAM_ALICE])
        ket = transmit(model, prep.ket(), streams[STREAM_CHANNEL])
        (u, v), out, noise = draw_bob_round(spec, table, ket, streams[STREAM_BOB])
        cols["ai"].append(prep.i)
        cols["aj"].append(prep.j)
        cols["s"].append(prep.s)
        cols["bi"].append(u)
        cols["bj"].append(v)
        cols["out"].append(int(out))
        cols["bit"].append(decode_bob_bit(out, noise))
        cols["off"].append(pair_offset(spec, prep.i, prep.j, u, v))
    log = RoundLog(
        np.array(cols["ai"], np.int16),
        np.array(cols["aj"], np.int16),
        np.array(cols["s"], np.int8),
        np.array(cols["bi"], np.int16),
        np.array(cols["bj"], np.int16),
        np.array(cols["out"], np.int8),
        np.array(cols["bit"], np.int8),
        np.array(cols["off"], np.int16),
    )
    sift_idx = np.flatnonzero(log.sifted)
    if len(sift_idx) == 0:
        empty = np.zeros(0, np.uint8)
        return SessionOutput(empty, empty, _empty_stats(cfg, log), log)
    perm = streams[STREAM_SAMPLE].permutation(len(sift_idx))
    n_samp = int(cfg.sample_fraction * len(sift_idx))
    sample_pos = np.sort(perm[:n_samp])
    keep = np.ones(len(sift_idx), bool)
    keep[sample_pos] = False
    keep_rounds = sift_idx[keep]
    alice_key = log.alice_s[keep_rounds].astype(np.uint8)
    bob_key = log.bob_bit[keep_rounds].astype(np.uint8)
    sample_rounds = sift_idx[sample_pos]
    samp_click = log.clicked[sample_rounds]
    samp_err = log.alice_s[sample_rounds] != log.bob_bit[sample_rounds]
    e_b = RateEstimate.from_counts(
        int(np.count_nonzero(samp_err & samp_click)),
        int(np.count_nonzero(samp_click)),
    )
    e_b_all = RateEstimate.from_counts(int(np.count_nonzero(samp_err)), n_samp)
    e_c = estimate_ec(log, cfg.ec_mode)
    lhs, verdict = condition_verdict(e_b, e_c, cfg.n, cfg.condition_strict)
    stats = SessionStats(
        status="ok",
        rounds=cfg.rounds,
        sifted_count=len(sift_idx),
        sample_count=n_samp,
        outside_in_sifted=int(np.count_nonzero(~log.clicked[sift_idx])),
        key_length=len(alice_key),
        ec_mode=cfg.ec_mode,
        e_b=e_b,
        e_b_all=e_b_all,
        e_c=e_c,
        counts=_outcome_counts(log),
        condition_lhs=lhs,
        condition_pass=verdict,
    )
    return SessionOutput(alice_key, bob_key, stats, log)
