"""Sparse kets, Born probabilities, and Bell-frame conjugation."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quditqkd.field import FieldElement, field_spec
from quditqkd.qstates import (
    BellIndex,
    DiagonalPhase,
    Outcome,
    PairState,
    SparseKet,
    apply_L,
    apply_L_inverse,
    apply_error,
    conjugate_bell,
    conjugate_bell_mask,
    decide_outcome,
    measure,
    probabilities,
)

from oracles import conjugation_matches


def F(spec, v):
    return FieldElement(spec, v)


def random_ket(spec, rng):
    if rng.random() < 0.3:
        return SparseKet.single(spec, int(rng.integers(spec.order)))
    i, j = map(int, rng.choice(spec.order, size=2, replace=False))
    i, j = min(i, j), max(i, j)
    return SparseKet.pair(spec, i, j, int(rng.integers(2)))


class TestSparseKet:
    def test_canonical_form_enforced(self):
        spec = field_spec(2)
        with pytest.raises(ValueError):
            SparseKet(spec, ((1, 1), (0, 1)))
        with pytest.raises(ValueError):
            SparseKet(spec, ((0, -1), (1, 1)))
        with pytest.raises(ValueError):
            SparseKet(spec, ((0, 1), (0, 1)))
        with pytest.raises(ValueError):
            SparseKet(spec, ())

    def test_from_terms_canonicalises_order_and_global_sign(self):
        spec = field_spec(2)
        ket = SparseKet.from_terms(spec, [(3, 1), (1, -1)])
        assert ket.terms == ((1, 1), (3, -1))
        assert ket == SparseKet.pair(spec, 3, 1, 1)

    def test_relative_sign(self):
        spec = field_spec(2)
        assert SparseKet.pair(spec, 0, 1, 0).relative_sign() == 1
        assert SparseKet.pair(spec, 0, 1, 1).relative_sign() == -1
        assert SparseKet.single(spec, 2).relative_sign() == 1

    def test_serialize_roundtrip_exhaustive_small(self):
        spec = field_spec(2)
        kets = [SparseKet.single(spec, i) for i in range(4)]
        kets += [
            SparseKet.pair(spec, i, j, s)
            for i, j in itertools.combinations(range(4), 2)
            for s in (0, 1)
        ]
        for ket in kets:
            assert SparseKet.deserialize(spec, ket.serialize()) == ket

    def test_deserialize_rejects_malformed_payloads(self):
        spec = field_spec(2)
        good = SparseKet.pair(spec, 0, 1, 0).serialize()
        with pytest.raises(ValueError):
            SparseKet.deserialize(spec, good + b"x")
        with pytest.raises(ValueError):
            SparseKet.deserialize(spec, b"")
        bad_sign = bytearray(good)
        bad_sign[2] = 7
        with pytest.raises(ValueError):
            SparseKet.deserialize(spec, bytes(bad_sign))
        bad_index = bytearray(good)
        bad_index[4] = 9
        with pytest.raises(ValueError):
            SparseKet.deserialize(spec, bytes(bad_index))


class TestPairState:
    def test_canonical_order_required(self):
        spec = field_spec(2)
        with pytest.raises(ValueError):
            PairState(spec, 2, 1, 0)
        with pytest.raises(ValueError):
            PairState(spec, 1, 1, 0)

    def test_make_swaps_to_canonical(self):
        spec = field_spec(2)
        state = PairState.make(spec, 3, 1, 1)
        assert (state.i, state.j, state.s) == (1, 3, 1)

    def test_ket_terms(self):
        spec = field_spec(2)
        assert PairState(spec, 0, 2, 0).ket().terms == ((0, 1), (2, 1))
        assert PairState(spec, 0, 2, 1).ket().terms == ((0, 1), (2, -1))


class TestProbabilities:
    """Exact Born rules for the three-outcome pair measurement."""

    def test_matched_pair(self):
        spec = field_spec(2)
        ket = PairState(spec, 1, 2, 0).ket()
        assert probabilities(ket, F(spec, 1), F(spec, 2)) == (1, 0, 0)
        flipped = PairState(spec, 1, 2, 1).ket()
        assert probabilities(flipped, F(spec, 1), F(spec, 2)) == (0, 1, 0)

    def test_single_overlap_two_term(self):
        spec = field_spec(2)
        ket = SparseKet.pair(spec, 0, 1, 0)
        p = probabilities(ket, F(spec, 1), F(spec, 2))
        assert p == (Fraction(1, 4), Fraction(1, 4), Fraction(1, 2))

    def test_single_term_inside_pair(self):
        spec = field_spec(2)
        ket = SparseKet.single(spec, 0)
        p = probabilities(ket, F(spec, 0), F(spec, 1))
        assert p == (Fraction(1, 2), Fraction(1, 2), 0)

    def test_disjoint_support(self):
        spec = field_spec(2)
        ket = SparseKet.pair(spec, 0, 1, 0)
        assert probabilities(ket, F(spec, 2), F(spec, 3)) == (0, 0, 1)

    def test_measurement_pair_order_irrelevant_for_outside(self):
        spec = field_spec(3)
        rng = np.random.default_rng(7)
        for _ in range(50):
            ket = random_ket(spec, rng)
            i, j = map(int, rng.choice(spec.order, size=2, replace=False))
            a = probabilities(ket, F(spec, i), F(spec, j))
            b = probabilities(ket, F(spec, j), F(spec, i))
            assert a[2] == b[2]
            assert a[0] + a[1] == b[0] + b[1]

    def test_identical_indices_rejected(self):
        spec = field_spec(2)
        ket = SparseKet.single(spec, 0)
        with pytest.raises(ValueError):
            probabilities(ket, F(spec, 1), F(spec, 1))

    @settings(max_examples=100)
    @given(n=st.integers(2, 4), seed=st.integers(0, 2**32 - 1))
    def test_completeness_random(self, n, seed):
        spec = field_spec(n)
        rng = np.random.default_rng(seed)
        ket = random_ket(spec, rng)
        i, j = map(int, rng.choice(spec.order, size=2, replace=False))
        p_plus, p_minus, p_out = probabilities(ket, F(spec, i), F(spec, j))
        assert p_plus + p_minus + p_out == 1
        assert min(p_plus, p_minus, p_out) >= 0


class TestDecideOutcome:
    def test_interval_edges(self):
        assert decide_outcome(0.25, 0.25, 0.0) is Outcome.PLUS
        assert decide_outcome(0.25, 0.25, 0.2499) is Outcome.PLUS
        assert decide_outcome(0.25, 0.25, 0.25) is Outcome.MINUS
        assert decide_outcome(0.25, 0.25, 0.4999) is Outcome.MINUS
        assert decide_outcome(0.25, 0.25, 0.5) is Outcome.OUTSIDE
        assert decide_outcome(0.25, 0.25, 0.9999) is Outcome.OUTSIDE

    def test_degenerate_weights(self):
        assert decide_outcome(1.0, 0.0, 0.999999) is Outcome.PLUS
        assert decide_outcome(0.0, 0.0, 0.0) is Outcome.OUTSIDE


def test_measure_frequencies_match_born_weights():
    """Monte Carlo outcome frequencies within 4 sigma of the exact law."""
    spec = field_spec(2)
    rng = np.random.default_rng(11)
    cases = [
        (SparseKet.pair(spec, 0, 1, 0), 1, 2),
        (SparseKet.single(spec, 0), 0, 1),
        (SparseKet.pair(spec, 0, 3, 1), 0, 3),
    ]
    trials = 20000
    for ket, i, j in cases:
        exact = probabilities(ket, F(spec, i), F(spec, j))
        counts = [0, 0, 0]
        for _ in range(trials):
            counts[int(measure(ket, F(spec, i), F(spec, j), rng))] += 1
        for outcome in range(3):
            p = float(exact[outcome])
            sigma = max((p * (1 - p) / trials) ** 0.5, 1e-12)
            assert abs(counts[outcome] / trials - p) <= 4 * sigma + 1e-12


class TestLineMaps:
    @settings(max_examples=150)
    @given(
        n=st.integers(2, 4),
        lam=st.integers(1, 15),
        beta=st.integers(0, 15),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_inverse_composition_is_identity(self, n, lam, beta, seed):
        spec = field_spec(n)
        lam_el = F(spec, 1 + lam % (spec.order - 1))
        beta_el = F(spec, beta % spec.order)
        ket = random_ket(spec, np.random.default_rng(seed))
        assert apply_L_inverse(lam_el, beta_el, apply_L(lam_el, beta_el, ket)) == ket
        assert apply_L(lam_el, beta_el, apply_L_inverse(lam_el, beta_el, ket)) == ket

    def test_forward_action_on_indices(self):
        spec = field_spec(2)
        ket = SparseKet.pair(spec, 0, 1, 0)
        moved = apply_L(F(spec, 2), F(spec, 1), ket)
        # 2*0 + 1 = 1 and 2*1 + 1 = 3
        assert moved.indices == (1, 3)

    def test_error_action_shifts_and_signs(self):
        spec = field_spec(2)
        phase = DiagonalPhase.norm_mask(spec)
        ket = SparseKet.pair(spec, 0, 1, 0)
        out = apply_error(F(spec, 1), phase, ket)
        # indices 0, 1 -> 1, 0; only the old index 1 carries a sign
        assert out.indices == (0, 1)
        assert out.relative_sign() == -1


class TestDiagonalPhase:
    def test_norm_mask_value(self):
        for n in (2, 3, 4):
            spec = field_spec(n)
            assert DiagonalPhase.norm_mask(spec).mask == (1 << spec.order) - 2

    def test_zero_mask_never_flips(self):
        spec = field_spec(2)
        phase = DiagonalPhase.zero(spec)
        assert [phase(i) for i in range(4)] == [0, 0, 0, 0]

    def test_mask_range_checked(self):
        spec = field_spec(2)
        with pytest.raises(ValueError):
            DiagonalPhase(spec, 1 << 4)
        with pytest.raises(ValueError):
            DiagonalPhase(spec, -1)


class TestConjugation:
    """Frame-index arithmetic pinned by a dense matrix oracle."""

    def test_worked_example_shift_with_phase(self):
        spec = field_spec(2)
        out = conjugate_bell(F(spec, 2), F(spec, 1), F(spec, 2), 1, F(spec, 0), 0)
        assert (out.a.value, out.ell) == (1, 0)

    def test_worked_example_phase_only(self):
        spec = field_spec(2)
        out = conjugate_bell(F(spec, 1), F(spec, 0), F(spec, 0), 1, F(spec, 0), 0)
        assert (out.a.value, out.ell) == (0, 1)

    def test_exhaustive_against_matrix_oracle(self):
        spec = field_spec(2)
        count = 0
        for lam, beta, a, ell, b, kappa in itertools.product(
            range(1, 4), range(4), range(4), (0, 1), range(4), (0, 1)
        ):
            out = conjugate_bell(
                F(spec, lam), F(spec, beta), F(spec, a), ell, F(spec, b), kappa
            )
            assert conjugation_matches(spec, lam, beta, a, ell, b, kappa, out)
            count += 1
        assert count == 768

    @pytest.mark.parametrize("n", [2, 3])
    def test_fixed_error_permutes_frames(self, n):
        """For each error the frame map (b, kappa) -> image is a bijection."""
        spec = field_spec(n)
        for lam in range(1, spec.order):
            for beta, a, ell in itertools.product(
                range(spec.order), range(spec.order), (0, 1)
            ):
                images = {
                    (out.a.value, out.ell)
                    for out in (
                        conjugate_bell(
                            F(spec, lam), F(spec, beta), F(spec, a), ell,
                            F(spec, b), kappa,
                        )
                        for b in range(spec.order)
                        for kappa in (0, 1)
                    )
                }
                assert len(images) == 2 * spec.order

    def test_general_mask_agrees_with_norm_rule(self):
        spec = field_spec(3)
        phase = DiagonalPhase.norm_mask(spec)
        rng = np.random.default_rng(3)
        for _ in range(300):
            lam = int(rng.integers(1, 8))
            beta, a, b = (int(v) for v in rng.integers(0, 8, size=3))
            kappa = int(rng.integers(2))
            via_mask = conjugate_bell_mask(
                F(spec, lam), F(spec, beta), F(spec, a), phase, F(spec, b), kappa
            )
            via_rule = conjugate_bell(
                F(spec, lam), F(spec, beta), F(spec, a), 1, F(spec, b), kappa
            )
            assert via_mask == via_rule

    def test_domain_errors(self):
        spec = field_spec(2)
        with pytest.raises(ValueError):
            conjugate_bell(F(spec, 0), F(spec, 0), F(spec, 0), 0, F(spec, 0), 0)
        with pytest.raises(ValueError):
            conjugate_bell(F(spec, 1), F(spec, 0), F(spec, 0), 2, F(spec, 0), 0)
        with pytest.raises(ValueError):
            conjugate_bell(F(spec, 1), F(spec, 0), F(spec, 0), 0, F(spec, 0), 5)

    def test_bell_index_validation(self):
        spec = field_spec(2)
        with pytest.raises(ValueError):
            BellIndex(F(spec, 0), 3)
