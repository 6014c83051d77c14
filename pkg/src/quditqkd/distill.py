"""Two-way post-processing on labeled key bits.

Each key position carries an error label (x, z): z marks a raw-key bit
disagreement (Bob's bit = Alice's ^ z), x marks an index-shift error.
Label categories map onto an :class:`~quditqkd.analysis.ErrorMatrix` as
identity=(0,0), x=(1,0), y=(1,1), z=(0,1).

The pipeline runs k pumping stages -- random pairing, keep the first
position of pairs whose announced bit parities agree (z1 ^ z2 == 0),
new label (x1 ^ x2, z1) -- then groups survivors into blocks of odd
size r, replacing each block with its parity.  A block's output
z-label is the parity of its z labels; its x-label is the majority
vote.  ``ep_recursion`` is the i.i.d. closed form of the pumping
stage, ``majority_stage`` of the blocking stage.

The final error-correcting code itself is out of scope: the pipeline
ends in a rate verdict, plus :func:`toeplitz_compress`, an explicitly
non-cryptographic stand-in for key compression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import ErrorMatrix

_SEED_BOUND = 1 << 63


class InsufficientKeyError(ValueError):
    """Key shorter than the 2**k * r positions the schedule consumes."""


@dataclass(frozen=True)
class DistillParams:
    """Pumping depth k and majority block size r (odd)."""

    k: int
    r: int

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.r < 1 or self.r % 2 == 0:
            raise ValueError("r must be odd and >= 1")

    @property
    def min_length(self) -> int:
        return (1 << self.k) * self.r


@dataclass(frozen=True)
class DistillBudget:
    """Search limits and acceptance margins for parameter selection.

    ``margin`` operationalizes the "much greater" in both feasibility
    tests; ``z_budget`` bounds r * (residual z rate); ``css_target`` is
    the reported goal for the final x_fail + z_fail sum.
    """

    k_max: int = 30
    r_max: int = 999_999
    css_target: float = 0.01
    z_budget: float = 0.005
    margin: float = 10.0

    def __post_init__(self) -> None:
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if self.r_max < 1 or self.r_max % 2 == 0:
            raise ValueError("r_max must be odd and >= 1")
        if not 0 < self.z_budget < self.css_target:
            raise ValueError("need 0 < z_budget < css_target")
        if self.margin <= 0:
            raise ValueError("margin must be positive")


@dataclass(frozen=True)
class LabeledKey:
    """Alice's bits with per-position (x, z) error labels."""

    bits: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.bits) == len(self.x) == len(self.z)):
            raise ValueError("bits, x, z must have equal length")
        for arr in (self.bits, self.x, self.z):
            if len(arr) and int(arr.max(initial=0)) > 1:
                raise ValueError("entries must be bits")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def bob_bits(self) -> np.ndarray:
        return self.bits ^ self.z


def _coerce_matrix(m) -> ErrorMatrix:
    if isinstance(m, ErrorMatrix):
        return m
    return ErrorMatrix(*m)


def sample_labeled_key(m, count: int, rng: np.random.Generator) -> LabeledKey:
    """i.i.d. labels from an error matrix plus uniform key bits.

    Consumes a (count, 2) uniform block: column 0 picks the label
    category (identity, x, y, z cumulative order), column 1 the bit.
    """
    m = _coerce_matrix(m)
    draws = rng.random((count, 2))
    cum = np.cumsum([float(m.p_i), float(m.p_x), float(m.p_y), float(m.p_z)])
    cum[-1] = 1.0
    cat = np.minimum(np.searchsorted(cum, draws[:, 0], side="right"), 3)
    x = ((cat == 1) | (cat == 2)).astype(np.uint8)
    z = ((cat == 2) | (cat == 3)).astype(np.uint8)
    bits = (draws[:, 1] >= 0.5).astype(np.uint8)
    return LabeledKey(bits, x, z)


def _pumped_coeffs(m: ErrorMatrix, k: int) -> tuple[float, float, float, float]:
    """(A, B, C, D) after k pumpings, rescaled by max(p_i+p_x, p_y+p_z)^m.

    The raw coefficients underflow for large k; every downstream use is
    scale invariant, so each is divided by the dominant base.  The
    rescaled A + C lies in [1, 2].
    """
    pi, px, py, pz = m.as_floats()
    a0, b0 = pi + px, pi - px
    # d0 sign chosen so the k = 0 (exponent 1) case reproduces the input;
    # even exponents at k >= 1 make the two conventions agree.
    c0, d0 = py + pz, pz - py
    base = max(a0, c0)
    if base == 0:
        raise ValueError("degenerate error matrix: p_i+p_x and p_y+p_z both zero")
    exp = 1 << k
    return (
        (a0 / base) ** exp,
        (b0 / base) ** exp,
        (c0 / base) ** exp,
        (d0 / base) ** exp,
    )


def ep_recursion(m, k: int) -> ErrorMatrix:
    """Closed form for the label distribution after k pumping stages.

    With A = (p_i+p_x)^(2^k), B = (p_i-p_x)^(2^k), C = (p_y+p_z)^(2^k),
    D = (p_z-p_y)^(2^k), the survivors are distributed as
    ((A+B), (A-B), (C-D), (C+D)) / (2(A+C)) over (i, x, y, z).
    k = 0 reproduces the input.
    """
    m = _coerce_matrix(m)
    if k < 0:
        raise ValueError("k must be >= 0")
    a, b, c, d = _pumped_coeffs(m, k)
    denom = 2 * (a + c)
    if denom == 0:
        raise ValueError("degenerate error matrix: A + C = 0")
    return ErrorMatrix(
        (a + b) / denom, (a - b) / denom, (c - d) / denom, (c + d) / denom
    )


def _binomial_tail_above_half(r: int, x: float) -> float:
    """P(Binomial(r, x) > r/2) by full summation over the tail."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lo = r // 2 + 1
    t = np.arange(lo, r + 1)
    if r <= 200:
        return float(
            sum(math.comb(r, int(k)) * x ** int(k) * (1 - x) ** int(r - k) for k in t)
        )
    # Log-space for large r: log C(r,t) from cumulative log factorials.
    logfact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, r + 1)))])
    logs = (
        logfact[r]
        - logfact[t]
        - logfact[r - t]
        + t * math.log(x)
        + (r - t) * math.log1p(-x)
    )
    peak = logs.max()
    return float(math.exp(peak) * np.exp(logs - peak).sum())


def majority_stage(m, r: int) -> tuple[float, float]:
    """Residual (x_fail, z_fail) of parity blocks of odd size r.

    z_fail = [1 - (1 - 2(p_z+p_y))^r]/2 is the block parity error;
    x_fail = P(Binomial(r, p_x+p_y) > r/2) is the majority-vote failure.
    """
    m = _coerce_matrix(m)
    if r < 1 or r % 2 == 0:
        raise ValueError("r must be odd and >= 1")
    x = float(m.p_x + m.p_y)
    z = float(m.p_z + m.p_y)
    z_fail = (1.0 - (1.0 - 2.0 * z) ** r) / 2.0
    x_fail = _binomial_tail_above_half(r, x)
    return x_fail, z_fail


def check_secure_condition(m) -> bool:
    """Strict pumping-convergence test: (p_i - p_x)^2 > (p_i + p_x)(p_y + p_z)."""
    m = _coerce_matrix(m)
    return (m.p_i - m.p_x) ** 2 > (m.p_i + m.p_x) * (m.p_y + m.p_z)


@dataclass(frozen=True)
class KTrial:
    """Diagnostics for one candidate pumping depth."""

    k: int
    x_rate: float
    z_rate: float
    r: int | None
    cond1_value: float | None
    cond2_lhs: float
    cond2_rhs: float
    status: str

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "x_rate": self.x_rate,
            "z_rate": self.z_rate,
            "r": self.r,
            "cond1_value": self.cond1_value,
            "cond2_lhs": self.cond2_lhs,
            "cond2_rhs": self.cond2_rhs,
            "status": self.status,
        }


@dataclass(frozen=True)
class SelectionOutcome:
    """Result of the (k, r) search with its per-k diagnostic trail."""

    feasible: bool
    params: DistillParams | None
    trail: tuple[KTrial, ...]
    budget: DistillBudget
    x_fail: float | None = None
    z_fail: float | None = None
    meets_target: bool | None = None

    def to_json_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "k": self.params.k if self.params else None,
            "r": self.params.r if self.params else None,
            "x_fail": self.x_fail,
            "z_fail": self.z_fail,
            "meets_target": self.meets_target,
            "budget": {
                "k_max": self.budget.k_max,
                "r_max": self.budget.r_max,
                "css_target": self.budget.css_target,
                "z_budget": self.budget.z_budget,
                "margin": self.budget.margin,
            },
            "trail": [t.to_json_dict() for t in self.trail],
        }


def select_params(m, budget: DistillBudget | None = None) -> SelectionOutcome:
    """Smallest pumping depth k whose derived block size passes both tests.

    For each k the residual rates x' = p_x'+p_y' and z' = p_z'+p_y' come
    from :func:`ep_recursion`.  r is the largest odd integer at most
    z_budget / z' (capped at r_max; r_max itself when z' = 0), rounded
    down so the z budget stays met.  Feasibility needs
    2 r (1/2 - x')^2 >= margin and, as the r-independent existence test,
    (B+D)^2 >= margin * (2/z_budget) * C(A+C) -- scale invariant, so it
    is evaluated on the rescaled coefficients.  A matrix with no
    residual error at some k is trivially feasible with r = 1.
    """
    m = _coerce_matrix(m)
    budget = budget or DistillBudget()
    trail: list[KTrial] = []
    cond2_factor = budget.margin * (2.0 / budget.z_budget)
    for k in range(budget.k_max + 1):
        a, b, c, d = _pumped_coeffs(m, k)
        denom = 2 * (a + c)
        x_rate = (a - b + c - d) / denom
        z_rate = c / (a + c)
        cond2_lhs = (b + d) ** 2
        cond2_rhs = cond2_factor * c * (a + c)
        if x_rate == 0.0 and z_rate == 0.0:
            trail.append(KTrial(k, x_rate, z_rate, 1, None, cond2_lhs, cond2_rhs, "trivial"))
            return _finish_selection(m, DistillParams(k, 1), trail, budget)
        if x_rate >= 0.5:
            trail.append(
                KTrial(k, x_rate, z_rate, None, None, cond2_lhs, cond2_rhs, "x-rate-too-high")
            )
            continue
        if z_rate == 0.0:
            r = budget.r_max
        else:
            r = min(int(budget.z_budget / z_rate), budget.r_max)
            if r % 2 == 0:
                r -= 1
            if r < 1:
                trail.append(
                    KTrial(k, x_rate, z_rate, None, None, cond2_lhs, cond2_rhs, "z-budget-unmet")
                )
                continue
        cond1_value = 2.0 * r * (0.5 - x_rate) ** 2
        ok1 = cond1_value >= budget.margin
        ok2 = cond2_lhs >= cond2_rhs
        if ok1 and ok2:
            trail.append(
                KTrial(k, x_rate, z_rate, r, cond1_value, cond2_lhs, cond2_rhs, "feasible")
            )
            return _finish_selection(m, DistillParams(k, r), trail, budget)
        status = "cond1-failed" if not ok1 else "cond2-failed"
        trail.append(KTrial(k, x_rate, z_rate, r, cond1_value, cond2_lhs, cond2_rhs, status))
    return SelectionOutcome(False, None, tuple(trail), budget)


def _finish_selection(
    m: ErrorMatrix, params: DistillParams, trail: list[KTrial], budget: DistillBudget
) -> SelectionOutcome:
    x_fail, z_fail = majority_stage(ep_recursion(m, params.k), params.r)
    return SelectionOutcome(
        True,
        params,
        tuple(trail),
        budget,
        x_fail=x_fail,
        z_fail=z_fail,
        meets_target=(x_fail + z_fail) <= budget.css_target,
    )


@dataclass(frozen=True)
class StageRecord:
    """Bookkeeping for one pumping stage."""

    stage: int
    seed: int
    input_length: int
    paired: int
    kept: int

    def to_json_dict(self) -> dict:
        return {
            "stage": self.stage,
            "seed": self.seed,
            "input_length": self.input_length,
            "paired": self.paired,
            "kept": self.kept,
        }


@dataclass(frozen=True)
class DistillationReport:
    """Outcome of one simulated post-processing run."""

    params: DistillParams
    input_length: int
    stages: tuple[StageRecord, ...]
    survivor_count: int
    survivor_tallies: dict[tuple[int, int], int]
    n_blocks: int
    alice_out: np.ndarray
    bob_out: np.ndarray
    out_x: np.ndarray
    out_z: np.ndarray
    disagreement_count: int
    expected_lengths: tuple[float, ...] | None = None

    @property
    def disagreement_rate(self) -> float | None:
        return self.disagreement_count / self.n_blocks if self.n_blocks else None

    @property
    def out_tallies(self) -> dict[tuple[int, int], int]:
        tallies: dict[tuple[int, int], int] = {}
        for xb, zb in zip(self.out_x.tolist(), self.out_z.tolist()):
            tallies[(xb, zb)] = tallies.get((xb, zb), 0) + 1
        return tallies

    def to_json_dict(self) -> dict:
        return {
            "k": self.params.k,
            "r": self.params.r,
            "input_length": self.input_length,
            "stages": [s.to_json_dict() for s in self.stages],
            "survivors": self.survivor_count,
            "survivor_tallies": {
                f"{x},{z}": c for (x, z), c in sorted(self.survivor_tallies.items())
            },
            "blocks": self.n_blocks,
            "disagreements": self.disagreement_count,
            "disagreement_rate": self.disagreement_rate,
            "out_tallies": {f"{x},{z}": c for (x, z), c in sorted(self.out_tallies.items())},
            "expected_lengths": list(self.expected_lengths)
            if self.expected_lengths is not None
            else None,
        }


def _label_tallies(x: np.ndarray, z: np.ndarray) -> dict[tuple[int, int], int]:
    tallies: dict[tuple[int, int], int] = {}
    code = x.astype(np.int64) * 2 + z
    for c, k in zip(*np.unique(code, return_counts=True)):
        tallies[(int(c) // 2, int(c) % 2)] = int(k)
    return tallies


def expected_stage_lengths(m, k: int, initial_length: int) -> tuple[float, ...]:
    """Analytic expected survivor counts after each pumping stage.

    A pair survives stage t with probability a_t^2 + c_t^2 where a_t, c_t
    are the stage-t marginals of (p_i+p_x, p_y+p_z).  Key-rate accounting
    is not fixed by the source analysis; this models the implemented
    discard-both-on-mismatch rule.
    """
    m = _coerce_matrix(m)
    lengths = [float(initial_length)]
    for t in range(k):
        mt = ep_recursion(m, t)
        a0 = float(mt.p_i + mt.p_x)
        c0 = float(mt.p_y + mt.p_z)
        lengths.append((lengths[-1] / 2.0) * (a0 * a0 + c0 * c0))
    return tuple(lengths)


def pair_stage_permutation(length: int, seed: int) -> np.ndarray:
    """The pairing shuffle of one stage: positions perm[2t], perm[2t+1] pair up."""
    return np.random.default_rng(seed).permutation(length)


def block_parities(bits, r: int) -> np.ndarray:
    """Parity of each consecutive r-chunk; the trailing remainder is dropped."""
    bits = np.asarray(bits, np.uint8)
    blocks = len(bits) // r
    if blocks == 0:
        return np.zeros(0, np.uint8)
    return np.bitwise_xor.reduce(bits[: blocks * r].reshape(blocks, r), axis=1)


def draw_stage_seeds(k: int, rng: np.random.Generator) -> np.ndarray:
    """k pairing seeds from the shared stream; no draw at all when k = 0."""
    if k == 0:
        return np.zeros(0, dtype=np.uint64)
    return rng.integers(0, _SEED_BOUND, size=k, dtype=np.uint64)


def simulate_distillation(
    keys: LabeledKey,
    params: DistillParams,
    rng: np.random.Generator,
    matrix=None,
) -> DistillationReport:
    """Run the label-level pipeline on concrete keys.

    Stage seeds come from ``rng`` via :func:`draw_stage_seeds` (the
    networked runner announces these same seeds on the wire).  Blocks
    are consecutive r-chunks of the survivors; the trailing remainder is
    dropped.  With k = 0, r = 1 the keys pass through unchanged.
    """
    length = len(keys)
    if length < params.min_length:
        raise InsufficientKeyError(
            f"need at least 2**k * r = {params.min_length} labeled bits, got {length}"
        )
    bits = keys.bits.astype(np.uint8)
    x = keys.x.astype(np.uint8)
    z = keys.z.astype(np.uint8)
    seeds = draw_stage_seeds(params.k, rng)
    stages: list[StageRecord] = []
    for t in range(params.k):
        cur = len(bits)
        perm = pair_stage_permutation(cur, int(seeds[t]))
        half = cur // 2
        first = perm[0 : 2 * half : 2]
        second = perm[1 : 2 * half : 2]
        keep = (z[first] ^ z[second]) == 0
        stages.append(StageRecord(t, int(seeds[t]), cur, half, int(np.count_nonzero(keep))))
        kept_first = first[keep]
        kept_second = second[keep]
        bits = bits[kept_first]
        x = x[kept_first] ^ x[kept_second]
        z = z[kept_first]
    survivors = len(bits)
    tallies = _label_tallies(x, z) if survivors else {}
    r = params.r
    n_blocks = survivors // r
    used = n_blocks * r
    alice_out = block_parities(bits, r)
    z_out = block_parities(z, r)
    x_out = (
        (x[:used].reshape(n_blocks, r).astype(np.int64).sum(axis=1) * 2 > r).astype(np.uint8)
        if n_blocks
        else np.zeros(0, np.uint8)
    )
    bob_out = alice_out ^ z_out
    expected = (
        expected_stage_lengths(matrix, params.k, length) if matrix is not None else None
    )
    return DistillationReport(
        params=params,
        input_length=length,
        stages=tuple(stages),
        survivor_count=survivors,
        survivor_tallies=tallies,
        n_blocks=n_blocks,
        alice_out=alice_out,
        bob_out=bob_out,
        out_x=x_out,
        out_z=z_out,
        disagreement_count=int(z_out.astype(np.int64).sum()),
        expected_lengths=expected,
    )


def toeplitz_compress(bits: np.ndarray, output_fraction: float, rng) -> np.ndarray:
    """Toeplitz-style parity compression of a bit vector.

    NOT a cryptographic privacy-amplification step: a placeholder with
    the right shape (seeded random binary Toeplitz matrix applied over
    GF(2)) standing in for the out-of-scope final code.
    """
    if not 0 < output_fraction <= 1:
        raise ValueError("output_fraction must be in (0, 1]")
    length = len(bits)
    out_len = int(output_fraction * length)
    if out_len == 0:
        return np.zeros(0, np.uint8)
    diag = rng.integers(0, 2, size=out_len + length - 1, dtype=np.uint8)
    conv = np.convolve(diag.astype(np.int64), np.asarray(bits, np.int64), mode="valid")
    return (conv % 2).astype(np.uint8)
