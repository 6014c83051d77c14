"""Built-in consistency suites behind the ``verify`` CLI subcommand.

Each suite recomputes expected behaviour along an independent path
(bitwise polynomial arithmetic, dense matrix algebra, exact fraction
sums) and tallies agreements against the fast implementations, so a
table or sign regression cannot pass silently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .field import FieldElement, FieldSpec, field_spec
from .qstates import SparseKet, conjugate_bell, probabilities

__all__ = [
    "SuiteResult",
    "check_field_tables",
    "check_born_completeness",
    "check_conjugation",
    "run_all",
]

FIELD_DEGREES = (2, 3, 4, 5, 6, 7, 8)
BORN_DEGREES = (2, 3, 4)
SAMPLED_CONJUGATION_DEGREES = (3, 4)


@dataclass(frozen=True)
class SuiteResult:
    """Agreement tally for one named suite."""

    label: str
    ok: int
    total: int

    @property
    def passed(self) -> bool:
        return self.ok == self.total

    def line(self) -> str:
        word = "ok" if self.passed else "MISMATCH"
        return f"{self.label}: {self.ok}/{self.total} {word}"


def _slow_mul(a: int, b: int, modulus: int, n: int) -> int:
    # carry-less multiply then modulus reduction, no lookup tables
    acc = 0
    for bit in range(n):
        if (b >> bit) & 1:
            acc ^= a << bit
    for bit in range(2 * n - 2, n - 1, -1):
        if (acc >> bit) & 1:
            acc ^= modulus << (bit - n)
    return acc


def check_field_tables(n: int) -> SuiteResult:
    """Products, inverses and the zero-indicator norm for one degree."""
    spec = field_spec(n)
    order = spec.order
    ok = total = 0
    for a in range(order):
        for b in range(order):
            total += 1
            ok += spec.mul(a, b) == _slow_mul(a, b, spec.modulus, n)
    for a in range(1, order):
        total += 1
        ok += spec.mul(a, spec.inv(a)) == 1
    for a in range(order):
        total += 1
        ok += spec.norm(a) == (0 if a == 0 else 1)
    return SuiteResult(f"field tables (n={n})", ok, total)


def _all_kets(spec: FieldSpec):
    for i in range(spec.order):
        yield SparseKet.single(spec, i)
    for i, j in itertools.combinations(range(spec.order), 2):
        for s in (0, 1):
            yield SparseKet.pair(spec, i, j, s)


def check_born_completeness(n: int) -> SuiteResult:
    """Exact outcome distributions sum to one for every ket and basis."""
    spec = field_spec(n)
    ok = total = 0
    pairs = [
        (FieldElement(spec, i), FieldElement(spec, j))
        for i, j in itertools.combinations(range(spec.order), 2)
    ]
    for ket in _all_kets(spec):
        for ip, jp in pairs:
            total += 1
            p_plus, p_minus, p_out = probabilities(ket, ip, jp)
            good = p_plus + p_minus + p_out == Fraction(1)
            good = good and all(0 <= p <= 1 for p in (p_plus, p_minus, p_out))
            ok += bool(good)
    return SuiteResult(f"born completeness (n={n})", ok, total)


def _frame_vector(spec: FieldSpec, lam: int, beta: int, b: int, kappa: int):
    # two-register basis order: qubit value major, qudit index minor
    order = spec.order
    vec = np.zeros(2 * order, dtype=np.int64)
    vec[spec.mul(lam, b) ^ beta] += 1
    vec[order + (spec.mul(lam, b ^ 1) ^ beta)] += (-1) ** kappa
    return vec


def _error_matrix_dense(spec: FieldSpec, a: int, ell: int):
    order = spec.order
    mat = np.zeros((order, order), dtype=np.int64)
    for y in range(order):
        mat[y ^ a, y] = -1 if (ell and spec.norm(y)) else 1
    return mat


def _conjugation_case(spec: FieldSpec, lam, beta, a, ell, b, kappa) -> bool:
    out = conjugate_bell(
        FieldElement(spec, lam),
        FieldElement(spec, beta),
        FieldElement(spec, a),
        ell,
        FieldElement(spec, b),
        kappa,
    )
    dense = _error_matrix_dense(spec, a, ell)
    vec = _frame_vector(spec, lam, beta, b, kappa)
    got = np.concatenate([dense @ vec[: spec.order], dense @ vec[spec.order :]])
    want = _frame_vector(spec, lam, beta, out.a.value, out.ell)
    return bool(np.array_equal(got, want) or np.array_equal(got, -want))


def check_conjugation(
    n: int, samples: int | None = None, seed: int = 0
) -> SuiteResult:
    """Frame-index arithmetic against a dense matrix action.

    ``samples=None`` walks the whole tuple space (lam, beta, a, ell, b,
    kappa) with lam nonzero; otherwise that many uniform draws.
    """
    spec = field_spec(n)
    order = spec.order
    ok = total = 0
    if samples is None:
        space = itertools.product(
            range(1, order), range(order), range(order), (0, 1), range(order), (0, 1)
        )
        label = "conjugation" if n == 2 else f"conjugation (n={n})"
    else:
        rng = np.random.default_rng(seed)
        space = (
            (
                int(rng.integers(1, order)),
                int(rng.integers(order)),
                int(rng.integers(order)),
                int(rng.integers(2)),
                int(rng.integers(order)),
                int(rng.integers(2)),
            )
            for _ in range(samples)
        )
        label = f"conjugation sampled (n={n})"
    for lam, beta, a, ell, b, kappa in space:
        total += 1
        ok += _conjugation_case(spec, lam, beta, a, ell, b, kappa)
    return SuiteResult(label, ok, total)


def run_all(samples: int = 2000, seed: int = 0) -> list[SuiteResult]:
    """Every suite at its default scope, exhaustive where cheap."""
    results = [check_field_tables(n) for n in FIELD_DEGREES]
    results.extend(check_born_completeness(n) for n in BORN_DEGREES)
    results.append(check_conjugation(2, samples=None))
    results.extend(
        check_conjugation(n, samples=samples, seed=seed + n)
        for n in SAMPLED_CONJUGATION_DEGREES
    )
    return results
