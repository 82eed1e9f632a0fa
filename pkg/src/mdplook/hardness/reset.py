"""Reset transform: discounted value at ``s0`` becomes average gain."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from mdplook.core import Policy, TabularMdp


def _coerce_gamma(mdp: TabularMdp, gamma):
    g = Fraction(gamma) if mdp.rational else float(gamma)
    if not 0 < g < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return g


def reset_transform(mdp: TabularMdp, gamma, s0=None, reset_law=None) -> TabularMdp:
    """``P'_a(.|s) = gamma P_a(.|s) + (1 - gamma) nu`` with ``nu`` the point mass at ``s0``.

    ``reset_law`` replaces the point mass by an arbitrary law over state
    indices, given as ``(index, probability)`` pairs. Rewards are unchanged.
    """
    g = _coerce_gamma(mdp, gamma)
    S = mdp.n_states
    nu = np.full(S, mdp.zero, dtype=mdp.kernel.dtype)
    if reset_law is None:
        nu[mdp.state_index(s0)] = mdp.one
    else:
        for i, p in reset_law:
            nu[i] = nu[i] + p
    kernel = g * mdp.kernel + (1 - g) * nu[None, None, :]
    init = mdp.states[mdp.state_index(s0)] if s0 is not None else None
    return mdp.replace(kernel=kernel, gamma=None, initial_state=init)


def reset_transform_augmented(model, gamma, s0) -> TabularMdp:
    """Reset transform of an augmented MDP; the reset target is redrawn from the look-ahead law at ``s0``."""
    return reset_transform(model.mdp, gamma, None, model.initial_weights(s0))


@dataclass
class RenewalCheck:
    gain: object
    value: object
    residual: object

    def as_dict(self) -> dict:
        conv = str if isinstance(self.gain, Fraction) else float
        return {"gain": conv(self.gain), "value": conv(self.value), "residual": conv(self.residual)}


def _check(transformed, mdp, gamma, policy, value_of):
    from mdplook.planners import policy_average_gain, policy_evaluation_discounted

    g = _coerce_gamma(mdp, gamma)
    gain = policy_average_gain(transformed, policy)
    value = value_of(policy_evaluation_discounted(mdp, policy, g))
    return RenewalCheck(gain, value, abs(gain - (1 - g) * value))


def verify_renewal_identity(mdp: TabularMdp, gamma, s0, policy: Policy) -> RenewalCheck:
    """``|g^pi(M') - (1 - gamma) v^pi_gamma(s0; M)|``, zero in rational mode."""
    s = mdp.state_index(s0)
    return _check(reset_transform(mdp, gamma, s0), mdp, gamma, policy, lambda v: v[s])


def verify_renewal_identity_augmented(model, gamma, s0, policy: Policy) -> RenewalCheck:
    """Same identity on an augmented MDP, with ``v(s0)`` averaged over the look-ahead law."""
    return _check(reset_transform_augmented(model, gamma, s0), model.mdp, gamma, policy,
                  lambda v: model.expected_over_initial(v, s0))
