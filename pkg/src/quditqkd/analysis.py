"""Closed-form observable prediction in the entangled frame.

For a unitary-mixture channel the joint state shared by the two sides
collapses, per randomly drawn relabelling (lam, beta), to a definite
entangled basis state Psi_{a,l}.  Averaging the conjugation rule over all
(lam != 0, beta) and over the channel terms gives the outcome
distribution e_{a,l}, from which every protocol observable follows:

    e_b * e_c   = e_{0,1} + e_{1,1}
    e_c         = e_{0,0} + e_{1,0} + e_{0,1} + e_{1,1}
    1 - e_c     = (N - 2) * (e_{1,0} + e_{1,1})

The kept-index error matrix (p_I, p_z; p_x, p_y) is the top two rows of
the table divided by e_c.  All arithmetic here is exact rational.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .channels import (
    ChannelModel,
    InterceptResend,
    RandomDephase,
    UnitaryTerm,
    UnsupportedModelError,
)
from .field import FieldSpec
from .qstates import DiagonalPhase, conjugate_bell_mask

Probability = Fraction | float


@dataclass(frozen=True)
class BellDistribution:
    """Distribution over entangled-basis outcome labels (a, ell).

    Missing keys mean probability zero.  Entries are Fractions when
    produced by :func:`bell_distribution`; float-valued tables are
    accepted for sampled data.
    """

    spec: FieldSpec
    e: dict[tuple[int, int], Probability]

    def get(self, a: int, ell: int) -> Probability:
        return self.e.get((a, ell), Fraction(0))

    def total(self) -> Probability:
        return sum(self.e.values())

    def validate(self, tol: float = 0.0) -> None:
        """Check normalisation, positivity, and the per-index sum rule.

        The sum rule: e_{a,0} + e_{a,1} takes the same value for every
        nonzero index a.
        """
        for (a, ell), p in self.e.items():
            self.spec.check(a)
            if ell not in (0, 1):
                raise ValueError(f"bad ell {ell}")
            if p < 0:
                raise ValueError(f"negative probability at {(a, ell)}")
        if abs(self.total() - 1) > tol:
            raise ValueError(f"probabilities sum to {self.total()}")
        masses = {
            a: self.get(a, 0) + self.get(a, 1) for a in range(1, self.spec.order)
        }
        lo, hi = min(masses.values()), max(masses.values())
        if hi - lo > tol:
            raise ValueError("per-index sum rule violated")


def bell_distribution(model: ChannelModel) -> BellDistribution:
    """Exact outcome distribution for a unitary-mixture channel.

    Starting from the reference outcome (0, 0), each unitary term with
    shift c and mask f lands on index c/lam with sign bit
    f(beta) ^ f(lam + beta), averaged uniformly over lam != 0 and beta.
    Intercept-resend terms are not unitary and are rejected.
    """
    spec = model.spec
    N = spec.order
    e: dict[tuple[int, int], Fraction] = {}
    w_pair = Fraction(1, (N - 1) * N)
    b0 = spec.el(0)
    for p, action in model.terms:
        if isinstance(action, InterceptResend):
            raise UnsupportedModelError(
                "bell_distribution requires a unitary-mixture channel"
            )
        if isinstance(action, RandomDephase):
            # Uniform masks flip the sign bit with probability exactly 1/2
            # for any (lam, beta), since the two support labels differ.
            half = p / 2
            e[(0, 0)] = e.get((0, 0), Fraction(0)) + half
            e[(0, 1)] = e.get((0, 1), Fraction(0)) + half
            continue
        assert isinstance(action, UnitaryTerm)
        phase = DiagonalPhase(spec, action.mask)
        a_el = spec.el(action.shift)
        for lam in range(1, N):
            lam_el = spec.el(lam)
            for beta in range(N):
                out = conjugate_bell_mask(
                    lam_el, spec.el(beta), a_el, phase, b0, 0
                )
                key = (out.a.value, out.ell)
                e[key] = e.get(key, Fraction(0)) + p * w_pair
    return BellDistribution(spec, e)


@dataclass(frozen=True)
class ObservablePrediction:
    """Predicted (e_b, e_c) plus an internal-consistency flag.

    ``consistent`` records whether the two routes to e_c (direct sum of
    the kept-index masses versus the complement identity through the
    nonkept masses) agree exactly.  ``e_b`` is None when e_c = 0.
    """

    e_b: Probability | None
    e_c: Probability
    consistent: bool


def predict_observables(d: BellDistribution) -> ObservablePrediction:
    N = d.spec.order
    e_c = d.get(0, 0) + d.get(1, 0) + d.get(0, 1) + d.get(1, 1)
    phase_mass = d.get(0, 1) + d.get(1, 1)
    e_b = None if e_c == 0 else phase_mass / e_c
    alt = (N - 2) * (d.get(1, 0) + d.get(1, 1))
    consistent = (1 - e_c) == alt
    return ObservablePrediction(e_b, e_c, consistent)


@dataclass(frozen=True)
class ErrorMatrix:
    """Kept-index error channel probabilities (p_i, p_x, p_y, p_z)."""

    p_i: Probability
    p_x: Probability
    p_y: Probability
    p_z: Probability

    def __post_init__(self) -> None:
        vals = (self.p_i, self.p_x, self.p_y, self.p_z)
        if any(v < 0 for v in vals):
            raise ValueError("error matrix entries must be nonnegative")
        if abs(sum(vals) - 1) > 1e-9:
            raise ValueError(f"error matrix entries sum to {sum(vals)}")

    def as_floats(self) -> "ErrorMatrix":
        return ErrorMatrix(
            float(self.p_i), float(self.p_x), float(self.p_y), float(self.p_z)
        )

    def astuple(self) -> tuple:
        return (self.p_i, self.p_x, self.p_y, self.p_z)

    def __iter__(self):
        return iter(self.astuple())


def error_matrix(d: BellDistribution) -> ErrorMatrix:
    """Conditional error matrix of the kept indices.

    Layout: p_I and p_z are the index-0 masses (sign unflipped/flipped),
    p_x and p_y the index-1 masses, all divided by e_c.
    """
    e_c = d.get(0, 0) + d.get(1, 0) + d.get(0, 1) + d.get(1, 1)
    if e_c == 0:
        raise ValueError("e_c = 0, error matrix undefined")
    return ErrorMatrix(
        d.get(0, 0) / e_c,
        d.get(1, 0) / e_c,
        d.get(1, 1) / e_c,
        d.get(0, 1) / e_c,
    )


@dataclass(frozen=True)
class EdVerdict:
    """Distillability check on the raw outcome distribution."""

    passes: bool
    lhs: Probability
    e00_exceeds_half: bool


def check_ed_condition(d: BellDistribution) -> EdVerdict:
    """Strict sufficient condition for the two-way distillation to work.

    lhs = e_{0,1} + e_{1,1} + (N - 1)(e_{1,0} + e_{1,1}) < 1/2.  Also
    reports whether e_{0,0} exceeds 1/2, i.e. whether the identity
    outcome dominates the table.
    """
    N = d.spec.order
    lhs = d.get(0, 1) + d.get(1, 1) + (N - 1) * (d.get(1, 0) + d.get(1, 1))
    return EdVerdict(lhs < Fraction(1, 2), lhs, d.get(0, 0) > Fraction(1, 2))


def intercept_distribution(eta, spec: FieldSpec) -> tuple[Fraction, Fraction]:
    """Exact (e_b, e_c) for the partial intercept-resend channel.

    Computed by enumerating outcome probabilities over all of Bob's pair
    choices with Alice's pair fixed at {0, 1}; affine relabellings act
    transitively on ordered pairs and commute with a computational-basis
    intercept, so the fixed pair loses no generality.
    """
    from .channels import as_probability

    eta = as_probability(eta)
    N = spec.order
    pairs = [(u, v) for u in range(N) for v in range(u + 1, N)]
    i, j = 0, 1
    err = inpair = num = den = Fraction(0)
    for s in (0, 1):
        w_s = Fraction(1, 2)
        # branch list: (probability, {index: signed indicator}, term count)
        branches = [
            (1 - eta, {i: 1, j: -1 if s else 1}, 2),
            (eta / 2, {i: 1}, 1),
            (eta / 2, {j: 1}, 1),
        ]
        for bp, amp, ln in branches:
            if bp == 0:
                continue
            for u, v in pairs:
                cu, cv = amp.get(u, 0), amp.get(v, 0)
                p_plus = Fraction((cu + cv) ** 2, 2 * ln)
                p_minus = Fraction((cu - cv) ** 2, 2 * ln)
                w = w_s * bp * Fraction(1, len(pairs))
                same = (u, v) == (i, j)
                on_line = (u ^ v) == (i ^ j)
                if on_line:
                    den += w * (p_plus + p_minus)
                    if same:
                        num += w * (p_plus + p_minus)
                if same:
                    inpair += w * (p_plus + p_minus)
                    err += w * (p_minus if s == 0 else p_plus)
    return err / inpair, num / den


def analysis_report(model: ChannelModel) -> dict:
    """JSON-ready summary of a channel's predicted statistics."""
    from .protocol import check_pm_condition, pm_condition_lhs

    spec = model.spec
    report: dict = {"n": spec.n, "modulus": hex(spec.modulus)}
    if model.has_intercept():
        for p, act in model.terms:
            if not isinstance(act, (InterceptResend, UnitaryTerm)) or (
                isinstance(act, UnitaryTerm) and (act.shift or act.mask)
            ):
                raise UnsupportedModelError(
                    "mixed intercept channels are out of scope for analysis"
                )
        eta = sum(p for p, a in model.terms if isinstance(a, InterceptResend))
        e_b, e_c = intercept_distribution(eta, spec)
        passes = check_pm_condition(e_b, e_c, spec.n)
        lhs = pm_condition_lhs(e_b, e_c, spec.n)
        report.update(
            {
                "kind": "intercept",
                "e_b": float(e_b),
                "e_c": float(e_c),
                "continuation_lhs": float(lhs),
                "continuation_pass": passes,
            }
        )
        return report
    d = bell_distribution(model)
    d.validate()
    pred = predict_observables(d)
    ed = check_ed_condition(d)
    report.update(
        {
            "kind": "unitary",
            "outcome_table": {
                f"{a},{ell}": float(p) for (a, ell), p in sorted(d.e.items())
            },
            "e_b": None if pred.e_b is None else float(pred.e_b),
            "e_c": float(pred.e_c),
            "consistent": pred.consistent,
            "distill_lhs": float(ed.lhs),
            "distill_pass": ed.passes,
            "identity_outcome_dominates": ed.e00_exceeds_half,
        }
    )
    if pred.e_b is not None:
        passes = check_pm_condition(pred.e_b, pred.e_c, spec.n)
        report["continuation_lhs"] = float(pm_condition_lhs(pred.e_b, pred.e_c, spec.n))
        report["continuation_pass"] = passes
    if pred.e_c > 0:
        m = error_matrix(d)
        report["error_matrix"] = {
            "p_i": float(m.p_i),
            "p_x": float(m.p_x),
            "p_y": float(m.p_y),
            "p_z": float(m.p_z),
        }
    return report
