"""Multispecies occupancy model with species-specific detection.

Latent occupancy of the ``S`` species at a site is a multivariate Bernoulli
vector with probabilities ``psi`` over the ``2**S`` presence/absence states.
State ``z`` is encoded in binary with species 0 as the least significant bit,
so for two species ``psi = [psi00, psi10, psi01, psi11]`` where the first
digit refers to species 0.

Unconstrained coordinates ``theta`` hold the multinomial logits of states
``1 .. 2**S - 1`` (state 0, nobody present, is the reference with logit 0)
followed by ``logit(p_s)`` for each species.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax, logit, softmax

from . import kernels
from .survey import MISSING, DetectionHistory

MAX_SPECIES = 20

__all__ = [
    "MAX_SPECIES",
    "OccupancyParams",
    "SiteCounts",
    "n_theta",
    "state_label",
    "theta_to_params",
    "params_to_theta",
    "site_counts",
    "neg_log_likelihood",
    "nll_theta",
    "nll_gradient",
    "marginal_occupancy",
    "conditional_occupancy",
    "marginal_grad",
    "conditional_grad",
]


def n_theta(S: int) -> int:
    return 2**S - 1 + S


def state_label(z: int, S: int) -> str:
    """Presence string of state ``z`` in species order, e.g. ``'10'`` = species 0 only."""
    return "".join(str((z >> s) & 1) for s in range(S))


def _check_S(S: int) -> None:
    if S < 1:
        raise ValueError("need at least one species")
    if S > MAX_SPECIES:
        raise ValueError(f"latent state space too large (S={S} > {MAX_SPECIES})")


@dataclass(frozen=True, eq=False)
class OccupancyParams:
    """Latent-state probabilities ``psi`` (length ``2**S``) and detection ``p`` (length S)."""

    psi: np.ndarray = field()
    p: np.ndarray = field()

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        p = np.array(self.p, dtype=float)
        S = p.shape[0] if p.ndim == 1 else -1
        if S < 1 or psi.shape != (2**S,):
            raise ValueError(f"psi must have length 2**S for S={S}, got shape {psi.shape}")
        _check_S(S)
        if (psi < 0).any() or abs(psi.sum() - 1.0) > 1e-9:
            raise ValueError("psi must be a probability vector")
        if ((p < 0) | (p > 1)).any():
            raise ValueError("p must lie in [0, 1]")
        psi.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "p", p)

    @property
    def S(self) -> int:
        return self.p.shape[0]

    def permuted(self, order: Sequence[int]) -> OccupancyParams:
        """Reorder species so that new species ``k`` is old species ``order[k]``."""
        order = list(order)
        S = self.S
        new_psi = np.empty_like(self.psi)
        for z in range(2**S):
            old = sum(((z >> k) & 1) << order[k] for k in range(S))
            new_psi[z] = self.psi[old]
        return OccupancyParams(new_psi, self.p[order])


def theta_to_params(theta, S: int) -> OccupancyParams:
    theta = np.asarray(theta, dtype=float)
    _check_S(S)
    if theta.shape != (n_theta(S),):
        raise ValueError(f"theta must have length {n_theta(S)} for S={S}, got {theta.shape}")
    k = 2**S - 1
    psi = softmax(np.concatenate(([0.0], theta[:k])))
    return OccupancyParams(psi, expit(theta[k:]))


def params_to_theta(params: OccupancyParams) -> np.ndarray:
    psi = params.psi
    if (psi <= 0).any() or ((params.p <= 0) | (params.p >= 1)).any():
        raise ValueError("params must be interior to map to theta")
    log_psi = np.log(psi)
    return np.concatenate((log_psi[1:] - log_psi[0], logit(params.p)))


@dataclass(frozen=True, eq=False)
class SiteCounts:
    """Per-site sufficient statistics of a detection history.

    Sites without any surveyed occasion are dropped; they contribute nothing.
    """

    det: np.ndarray   # (I, S) int32 detection counts
    nocc: np.ndarray  # (I,) int32 surveyed occasions
    S: int


def site_counts(h: DetectionHistory) -> SiteCounts:
    S = len(h.species)
    _check_S(S)
    nocc = (h.y[0] != MISSING).sum(axis=1)
    keep = nocc > 0
    det = (h.y == 1).sum(axis=2).T[keep]
    return SiteCounts(
        np.ascontiguousarray(det, dtype=np.int32),
        np.ascontiguousarray(nocc[keep], dtype=np.int32),
        S,
    )


def _as_counts(data) -> SiteCounts:
    return data if isinstance(data, SiteCounts) else site_counts(data)


def _split_theta(theta: np.ndarray, S: int) -> tuple[np.ndarray, np.ndarray]:
    k = 2**S - 1
    return log_softmax(np.concatenate(([0.0], theta[:k]))), np.ascontiguousarray(theta[k:])


def neg_log_likelihood(params: OccupancyParams, h: DetectionHistory | SiteCounts) -> float:
    """Negative log-likelihood of the history, latent states summed out exactly."""
    counts = _as_counts(h)
    if counts.S != params.S:
        raise ValueError(f"history has {counts.S} species, params have {params.S}")
    with np.errstate(divide="ignore"):
        log_psi = np.log(params.psi)
    p = params.p
    if ((p <= 0) | (p >= 1)).any() or np.isneginf(log_psi).any():
        return _nll_boundary(params, counts)
    ll, _, _ = kernels.loglik_grad(log_psi, logit(p), counts.det, counts.nocc, False)
    return -ll


def _nll_boundary(params: OccupancyParams, counts: SiteCounts) -> float:
    # p or psi on the boundary: logit coordinates are infinite, so work in
    # probability space directly with the 0**0 = 1 convention.
    S = params.S
    with np.errstate(divide="ignore"):
        logp, logq = np.log(params.p), np.log1p(-params.p)
        log_psi = np.log(params.psi)
    total = 0.0
    for d, n in zip(counts.det, counts.nocc):
        terms = []
        for z in range(2**S):
            if log_psi[z] == -np.inf:
                continue
            t = log_psi[z]
            for s in range(S):
                if (z >> s) & 1:
                    if d[s]:
                        t += d[s] * logp[s]
                    if n - d[s]:
                        t += (n - d[s]) * logq[s]
                elif d[s]:
                    t = -np.inf
            terms.append(t)
        terms = np.array(terms)
        mx = terms.max()
        total += mx + np.log(np.exp(terms - mx).sum()) if np.isfinite(mx) else -np.inf
    return -total


def nll_theta(theta, data: DetectionHistory | SiteCounts, want_grad: bool = True):
    """NLL (and gradient) as a function of the unconstrained coordinates.

    Returns ``(nll, grad)``; ``grad`` is ``None`` when ``want_grad`` is false.
    """
    counts = _as_counts(data)
    theta = np.asarray(theta, dtype=float)
    S = counts.S
    if theta.shape != (n_theta(S),):
        raise ValueError(f"theta must have length {n_theta(S)} for S={S}")
    log_psi, eta = _split_theta(theta, S)
    ll, state_post, score = kernels.loglik_grad(log_psi, eta, counts.det, counts.nocc, want_grad)
    if not want_grad:
        return -ll, None
    n_sites = counts.nocc.shape[0]
    psi = np.exp(log_psi)
    grad = np.concatenate((-(state_post[1:] - n_sites * psi[1:]), -score))
    return -ll, grad


def nll_gradient(theta, h: DetectionHistory | SiteCounts) -> np.ndarray:
    return nll_theta(theta, h, True)[1]


# -- derived occupancy quantities ----------------------------------------------


def _bit(S: int, species: int) -> np.ndarray:
    return (np.arange(2**S) >> species) & 1


def _check_index(index: int, S: int, what: str = "species") -> None:
    if not 0 <= index < S:
        raise IndexError(f"{what} index {index} out of range for S={S}")


def _event_mask(S: int, given, given_state) -> np.ndarray:
    """Boolean mask over states for the event ``Z_given == given_state``."""
    if np.ndim(given) == 0:
        given, given_state = [given], [given_state]
    elif np.ndim(given_state) == 0:
        given_state = [given_state] * len(given)
    if len(given) != len(given_state):
        raise ValueError("given and given_state differ in length")
    mask = np.ones(2**S, dtype=bool)
    for g, state in zip(given, given_state):
        _check_index(int(g), S, "given")
        mask &= _bit(S, int(g)) == _state_value(state)
    return mask


def _state_value(state) -> int:
    if isinstance(state, str):
        state = state.lower()
        if state in ("present", "1", "true"):
            return 1
        if state in ("absent", "0", "false"):
            return 0
        raise ValueError(f"unknown state {state!r}")
    return int(bool(state))


def marginal_occupancy(params: OccupancyParams, species: int) -> float:
    """Pr(Z_species = 1): sum of psi over states in which the species is present."""
    _check_index(species, params.S)
    return float(params.psi[_bit(params.S, species) == 1].sum())


def conditional_occupancy(params: OccupancyParams, target: int, given, given_state=True) -> float:
    """Pr(Z_target = 1 | Z_given = given_state).

    ``given`` may be one species index or a sequence of them (with a matching
    sequence of states, or one state applied to all).
    """
    S = params.S
    _check_index(target, S, "target")
    event = _event_mask(S, given, given_state)
    if np.ndim(given) == 0:
        if target == given:
            raise ValueError("target and given species must differ")
    elif target in given:
        raise ValueError("target and given species must differ")
    denom = params.psi[event].sum()
    if denom <= 0:
        raise ZeroDivisionError("conditioning on null event")
    num = params.psi[event & (_bit(S, target) == 1)].sum()
    return float(num / denom)


def _linear_grad(psi: np.ndarray, weights: np.ndarray, S: int) -> np.ndarray:
    # d/dtheta of sum_z w_z psi_z through the softmax (reference state fixed)
    value = float(weights @ psi)
    g = np.zeros(n_theta(S))
    g[: 2**S - 1] = psi[1:] * (weights[1:] - value)
    return g


def marginal_grad(theta, S: int, species: int) -> np.ndarray:
    """Gradient of ``marginal_occupancy`` w.r.t. theta."""
    _check_index(species, S)
    params = theta_to_params(theta, S)
    return _linear_grad(params.psi, _bit(S, species).astype(float), S)


def conditional_grad(theta, S: int, target: int, given, given_state=True) -> np.ndarray:
    """Gradient of ``conditional_occupancy`` w.r.t. theta."""
    params = theta_to_params(theta, S)
    event = _event_mask(S, given, given_state).astype(float)
    joint = event * _bit(S, target)
    denom = float(event @ params.psi)
    if denom <= 0:
        raise ZeroDivisionError("conditioning on null event")
    value = float(joint @ params.psi) / denom
    return (_linear_grad(params.psi, joint, S) - value * _linear_grad(params.psi, event, S)) / denom
