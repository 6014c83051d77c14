"""Channel models for the quantum link between Alice and Bob.

A ``ChannelModel`` is an exact-rational probability mixture of per-round
actions.  Three action kinds cover the workbench:

* ``UnitaryTerm(shift, mask)``: apply the diagonal sign mask, then shift
  every basis label by XOR with ``shift`` (the additive error X_shift).
* ``RandomDephase()``: apply a fresh uniformly random diagonal sign mask
  each use.  Distributionally identical to the uniform mixture over all
  2^N explicit masks, which becomes unwieldy past N = 16.
* ``InterceptResend()``: measure in the computational basis and resend
  the collapsed single-index state.

Channel specs can also be given as strings, e.g. ``"z_flip:0.3"``,
``"shift_noise:0.2"``, ``"partial_intercept:0.4"``, ``"full_dephase"``,
``"identity"``, or ``"custom:[(0.9,a=0,f=0x0),(0.1,a=1,f=0x6)]"``.
Probabilities written in decimal are parsed exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

from .field import FieldSpec
from .qstates import DiagonalPhase, SparseKet, apply_error

FULL_DEPHASE_ENUM_MAX_N = 4  # explicit 2^N mask mixture up to this n


class UnsupportedModelError(ValueError):
    """Raised when an operation cannot handle a channel's action kinds."""


@dataclass(frozen=True)
class UnitaryTerm:
    """Sign mask followed by a basis shift."""

    shift: int
    mask: int


@dataclass(frozen=True)
class InterceptResend:
    """Computational-basis measure-and-resend attack."""


@dataclass(frozen=True)
class RandomDephase:
    """Uniformly random diagonal sign mask, fresh per use."""


Action = UnitaryTerm | InterceptResend | RandomDephase


def as_probability(x) -> Fraction:
    """Coerce a numeric or decimal-string probability to an exact Fraction.

    Floats go through their shortest decimal repr, so 0.3 means 3/10.
    """
    if isinstance(x, float):
        f = Fraction(repr(x))
    elif isinstance(x, Rational):
        f = Fraction(x)
    elif isinstance(x, str):
        f = Fraction(x)
    else:
        raise TypeError(f"cannot interpret {x!r} as a probability")
    if not 0 <= f <= 1:
        raise ValueError(f"probability {f} outside [0, 1]")
    return f


class ChannelModel:
    """Probability mixture of channel actions over a fixed field spec."""

    def __init__(self, spec: FieldSpec, terms: list[tuple[Fraction, Action]]):
        if not terms:
            raise ValueError("channel model needs at least one term")
        total = Fraction(0)
        for p, act in terms:
            if not isinstance(p, Fraction) or p < 0:
                raise ValueError("term probabilities must be nonnegative Fractions")
            if isinstance(act, UnitaryTerm):
                spec.check(act.shift)
                if not 0 <= act.mask < (1 << spec.order):
                    raise ValueError(f"mask {act.mask:#x} out of range")
            elif not isinstance(act, (InterceptResend, RandomDephase)):
                raise TypeError(f"unknown action {act!r}")
            total += p
        if total != 1:
            raise ValueError(f"term probabilities sum to {total}, expected 1")
        self.spec = spec
        self.terms: tuple[tuple[Fraction, Action], ...] = tuple(
            (p, a) for p, a in terms if p > 0
        )
        self._cum = np.cumsum([float(p) for p, _ in self.terms])
        self._cum[-1] = 1.0
        self._cum.setflags(write=False)

    @property
    def cum_weights(self) -> np.ndarray:
        """Cumulative float weights used for term sampling."""
        return self._cum

    def sample_term_index(self, u: float) -> int:
        return min(int(np.searchsorted(self._cum, u, side="right")), len(self.terms) - 1)

    def has_intercept(self) -> bool:
        return any(isinstance(a, InterceptResend) for _, a in self.terms)

    def __repr__(self) -> str:
        return f"ChannelModel({self.spec!r}, {len(self.terms)} terms)"


# -- builders -----------------------------------------------------------------


def identity(spec: FieldSpec) -> ChannelModel:
    return ChannelModel(spec, [(Fraction(1), UnitaryTerm(0, 0))])


def z_flip(spec: FieldSpec, q) -> ChannelModel:
    """Apply the norm-sign operator Z with probability q."""
    q = as_probability(q)
    z = DiagonalPhase.norm_mask(spec).mask
    return ChannelModel(
        spec, [(1 - q, UnitaryTerm(0, 0)), (q, UnitaryTerm(0, z))]
    )


def shift_noise(spec: FieldSpec, eta) -> ChannelModel:
    """With total probability eta, shift by a uniform nonzero field element."""
    eta = as_probability(eta)
    per = eta / (spec.order - 1)
    terms: list[tuple[Fraction, Action]] = [(1 - eta, UnitaryTerm(0, 0))]
    terms += [(per, UnitaryTerm(a, 0)) for a in range(1, spec.order)]
    return ChannelModel(spec, terms)


def full_dephase(spec: FieldSpec) -> ChannelModel:
    """Uniformly random diagonal signs every round.

    Realised as the explicit uniform mixture over all 2^N masks for small
    fields and as a single RandomDephase action (identical distribution,
    per-index fair sign flips) beyond n = 4.
    """
    if spec.n <= FULL_DEPHASE_ENUM_MAX_N:
        count = 1 << spec.order
        per = Fraction(1, count)
        return ChannelModel(
            spec, [(per, UnitaryTerm(0, mask)) for mask in range(count)]
        )
    return ChannelModel(spec, [(Fraction(1), RandomDephase())])


def partial_intercept(spec: FieldSpec, eta) -> ChannelModel:
    """Intercept-resend each round independently with probability eta."""
    eta = as_probability(eta)
    return ChannelModel(
        spec, [(1 - eta, UnitaryTerm(0, 0)), (eta, InterceptResend())]
    )


def custom(spec: FieldSpec, triples) -> ChannelModel:
    """Build a unitary mixture from (probability, shift, mask) triples."""
    return ChannelModel(
        spec,
        [(as_probability(p), UnitaryTerm(spec.check(a), m)) for p, a, m in triples],
    )


_CUSTOM_TERM = re.compile(
    r"\(\s*([^,()]+)\s*,\s*a\s*=\s*(\d+)\s*,\s*f\s*=\s*(0x[0-9a-fA-F]+|\d+)\s*\)"
)


def parse_channel_spec(text: str, spec: FieldSpec) -> ChannelModel:
    """Parse a channel spec string into a model."""
    text = text.strip()
    name, _, arg = text.partition(":")
    name = name.strip()
    if name == "identity":
        return identity(spec)
    if name == "z_flip":
        return z_flip(spec, arg)
    if name == "shift_noise":
        return shift_noise(spec, arg)
    if name == "full_dephase":
        return full_dephase(spec)
    if name == "partial_intercept":
        return partial_intercept(spec, arg)
    if name == "custom":
        body = arg.strip()
        if not (body.startswith("[") and body.endswith("]")):
            raise ValueError(f"custom spec needs a [...] term list: {text!r}")
        triples = [
            (p, int(a), int(m, 0)) for p, a, m in _CUSTOM_TERM.findall(body)
        ]
        if not triples:
            raise ValueError(f"no terms parsed from custom spec {text!r}")
        return custom(spec, triples)
    raise ValueError(f"unknown channel spec {text!r}")


def resolve_channel(channel, spec: FieldSpec) -> ChannelModel:
    """Accept a ChannelModel or a spec string; validate the field spec."""
    if isinstance(channel, ChannelModel):
        if channel.spec != spec:
            raise ValueError("channel model built for a different field spec")
        return channel
    return parse_channel_spec(channel, spec)


# -- transmission -------------------------------------------------------------


def apply_term(
    action: Action, ket: SparseKet, aux_u: float, spec: FieldSpec
) -> SparseKet:
    """Apply one sampled action.  ``aux_u`` feeds the branchy actions.

    Every round consumes exactly one auxiliary uniform whether or not the
    action uses it, keeping draw order identical across implementations.
    """
    if isinstance(action, UnitaryTerm):
        return apply_error(
            spec.el(action.shift), DiagonalPhase(spec, action.mask), ket
        )
    if isinstance(action, RandomDephase):
        if len(ket.terms) == 2 and aux_u < 0.5:
            (i, si), (j, sj) = ket.terms
            return SparseKet.from_terms(spec, [(i, si), (j, -sj)])
        return ket
    # Intercept-resend: Born weights on a 1-2 term ket are uniform over
    # the support, so one fair choice over the canonical ordering works.
    idx = ket.indices
    pick = idx[0] if aux_u < 0.5 or len(idx) == 1 else idx[1]
    return SparseKet.single(spec, pick)


def transmit(
    model: ChannelModel, ket: SparseKet, rng: np.random.Generator
) -> SparseKet:
    """Send one ket through the channel (always two uniform draws)."""
    if ket.spec != model.spec:
        raise ValueError("ket spec does not match channel spec")
    term_u = rng.random()
    aux_u = rng.random()
    _, action = model.terms[model.sample_term_index(term_u)]
    return apply_term(action, ket, aux_u, model.spec)
