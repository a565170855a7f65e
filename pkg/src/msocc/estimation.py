"""Maximum-likelihood fitting and interval estimates."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit
from scipy.stats import norm

from . import model
from .model import OccupancyParams, SiteCounts
from .rng import DEFAULT_SEED, Stream, generator
from .survey import DetectionHistory

__all__ = [
    "FitOptions",
    "FitResult",
    "IntervalEstimate",
    "ConvergenceError",
    "Marginal",
    "Conditional",
    "fit",
    "fd_hessian",
    "wald_interval",
    "derived_interval",
    "parse_quantity",
]

BOUNDARY_EPS = 1e-4


class ConvergenceError(RuntimeError):
    """No optimizer start reached the gradient tolerance.

    ``best`` holds the lowest-NLL unconverged result for diagnostics.
    """

    def __init__(self, message: str, best: FitResult | None = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class FitOptions:
    n_starts: int = 5
    seed: int = DEFAULT_SEED
    grad_tol: float = 1e-6
    max_iter: int = 500
    fd_hessian_step: float = 1e-4
    threads: int = 1

    def __post_init__(self):
        if self.n_starts < 1 or self.max_iter < 1 or self.threads < 1:
            raise ValueError("n_starts, max_iter and threads must be >= 1")
        if self.grad_tol <= 0 or self.fd_hessian_step <= 0:
            raise ValueError("grad_tol and fd_hessian_step must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class FitResult:
    species: tuple[str, ...]
    theta_hat: np.ndarray = field(repr=False)
    params_hat: OccupancyParams = field(repr=False)
    nll: float
    vcov: np.ndarray | None = field(repr=False)
    converged: bool
    n_starts_converged: int
    boundary_warning: bool
    grad_norm: float
    start_nlls: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def S(self) -> int:
        return len(self.species)

    @property
    def vcov_available(self) -> bool:
        return self.vcov is not None

    def species_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            return int(name_or_index)
        try:
            return self.species.index(name_or_index)
        except ValueError:
            raise KeyError(f"unknown species {name_or_index!r}") from None


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    level: float = 0.95
    se: float = float("nan")

    def __post_init__(self):
        if not self.lower <= self.point <= self.upper:
            raise ValueError(f"interval ({self.lower}, {self.upper}) excludes point {self.point}")


# -- optimisation ---------------------------------------------------------------


@dataclass
class _Run:
    theta: np.ndarray
    nll: float
    grad_norm: float
    converged: bool


def fd_hessian(theta, counts: SiteCounts, step: float = 1e-4) -> np.ndarray:
    """Symmetrised central-difference Jacobian of the analytic NLL gradient."""
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    H = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        H[:, j] = (model.nll_gradient(theta + e, counts) - model.nll_gradient(theta - e, counts)) / (
            2 * step
        )
    return 0.5 * (H + H.T)


def _newton_polish(theta, counts, opts: FitOptions, max_steps: int = 20):
    # BFGS often stalls a little above tight gradient tolerances; a few
    # damped Newton steps on the FD Hessian finish the job.
    nll, g = model.nll_theta(theta, counts)
    for _ in range(max_steps):
        if np.abs(g).max() < opts.grad_tol:
            break
        H = fd_hessian(theta, counts, opts.fd_hessian_step)
        try:
            c = linalg.cho_factor(H)
            step = linalg.cho_solve(c, g)
        except linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-8:
            cand = theta - t * step
            cand_nll, cand_g = model.nll_theta(cand, counts)
            # allow round-off sized increases; near the optimum NLL is flat
            if np.isfinite(cand_nll) and cand_nll <= nll + 1e-10 * max(1.0, abs(nll)):
                break
            t *= 0.5
        else:
            break
        theta, nll, g = cand, cand_nll, cand_g
    return theta, nll, g


def _single_start(theta0, counts, opts: FitOptions) -> _Run:
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        res = optimize.minimize(
            model.nll_theta,
            theta0,
            args=(counts,),
            jac=True,
            method="BFGS",
            options={"gtol": opts.grad_tol, "maxiter": opts.max_iter},
        )
        theta, nll, g = _newton_polish(
            np.asarray(res.x, dtype=float), counts, opts, min(20, opts.max_iter)
        )
    gnorm = float(np.abs(g).max())
    ok = bool(np.isfinite(nll) and gnorm < opts.grad_tol)
    return _Run(theta, float(nll), gnorm, ok)


def _start_points(n_params: int, opts: FitOptions) -> list[np.ndarray]:
    rng = generator(opts.seed, Stream.FIT_STARTS)
    starts = [np.zeros(n_params)]
    starts += [rng.uniform(-1.0, 1.0, n_params) for _ in range(opts.n_starts)]
    return starts


def _vcov(theta, counts, opts: FitOptions) -> tuple[np.ndarray | None, str | None]:
    H = fd_hessian(theta, counts, opts.fd_hessian_step)
    if not np.isfinite(H).all():
        return None, "non-finite Hessian; variance unavailable"
    evals = np.linalg.eigvalsh(H)
    if evals[0] <= 1e-10 * max(evals[-1], 1e-300):
        return None, "singular Hessian; variance unavailable"
    V = linalg.cho_solve(linalg.cho_factor(H), np.eye(H.shape[0]))
    return 0.5 * (V + V.T), None


def fit(h: DetectionHistory | SiteCounts, opts: FitOptions | None = None, species=None) -> FitResult:
    """Maximum-likelihood fit from ``opts.n_starts`` random starts plus theta = 0.

    Start 0 is theta = 0; starts 1..n draw each coordinate from U(-1, 1)
    using the ``FIT_STARTS`` stream of ``opts.seed``. The lowest-NLL converged
    start wins, ties going to the lower start index.
    """
    opts = opts or FitOptions()
    if isinstance(h, DetectionHistory):
        species = h.species
        counts = model.site_counts(h)
    else:
        counts = h
        species = tuple(species) if species is not None else tuple(
            f"sp{k}" for k in range(counts.S)
        )
    if counts.nocc.size == 0:
        raise ValueError("detection history has no surveyed site-occasions")
    S = counts.S
    starts = _start_points(model.n_theta(S), opts)

    if opts.threads > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            runs = list(pool.map(lambda t0: _single_start(t0, counts, opts), starts))
    else:
        runs = [_single_start(t0, counts, opts) for t0 in starts]

    n_conv = sum(r.converged for r in runs)
    pool_ = [r for r in runs if r.converged] or runs
    best = min(pool_, key=lambda r: r.nll)  # min() keeps the first on ties
    params = model.theta_to_params(best.theta, S)

    notes: list[str] = []
    probs = np.concatenate((params.psi, params.p))
    boundary = bool(((probs < BOUNDARY_EPS) | (probs > 1 - BOUNDARY_EPS)).any())
    if boundary:
        notes.append("fitted probabilities on the boundary; some parameters may not be identifiable")

    vcov = None
    if n_conv:
        vcov, msg = _vcov(best.theta, counts, opts)
        if msg:
            notes.append(msg)

    result = FitResult(
        species=tuple(species),
        theta_hat=best.theta,
        params_hat=params,
        nll=best.nll,
        vcov=vcov,
        converged=n_conv > 0,
        n_starts_converged=n_conv,
        boundary_warning=boundary,
        grad_norm=best.grad_norm,
        start_nlls=tuple(r.nll for r in runs),
        warnings=tuple(notes),
    )
    if not n_conv:
        raise ConvergenceError(
            f"no start converged (best nll {best.nll:.6g}, gradient norm {best.grad_norm:.3g})",
            result,
        )
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    return result


# -- intervals -------------------------------------------------------------------


def _z(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def _require_vcov(result: FitResult) -> np.ndarray:
    if result.vcov is None:
        raise ValueError("variance-covariance matrix unavailable for this fit")
    return result.vcov


def wald_interval(result: FitResult, coordinate: int, level: float = 0.95) -> IntervalEstimate:
    """Wald interval for one theta coordinate.

    Detection coordinates are mapped back through the logistic function, so
    the interval is on the probability scale; psi-logit coordinates stay on
    the unconstrained scale.
    """
    V = _require_vcov(result)
    n = result.theta_hat.shape[0]
    if not 0 <= coordinate < n:
        raise IndexError(f"coordinate {coordinate} out of range")
    se = float(np.sqrt(max(V[coordinate, coordinate], 0.0)))
    z = _z(level)
    t = float(result.theta_hat[coordinate])
    lo, hi = t - z * se, t + z * se
    if coordinate >= 2**result.S - 1:
        return IntervalEstimate(float(expit(t)), float(expit(lo)), float(expit(hi)), level, se)
    return IntervalEstimate(t, lo, hi, level, se)


@dataclass(frozen=True)
class Marginal:
    species: int

    def value(self, params: OccupancyParams) -> float:
        return model.marginal_occupancy(params, self.species)

    def grad(self, theta, S: int) -> np.ndarray:
        return model.marginal_grad(theta, S, self.species)

    def label(self, names) -> str:
        return f"marginal({names[self.species]})"


@dataclass(frozen=True)
class Conditional:
    target: int
    given: tuple[int, ...]
    states: tuple[bool, ...]

    def __post_init__(self):
        given = (self.given,) if np.ndim(self.given) == 0 else tuple(self.given)
        states = self.states
        states = (states,) * len(given) if np.ndim(states) == 0 else tuple(states)
        object.__setattr__(self, "given", tuple(int(g) for g in given))
        object.__setattr__(self, "states", tuple(model._state_value(s) == 1 for s in states))

    def value(self, params: OccupancyParams) -> float:
        return model.conditional_occupancy(params, self.target, self.given, self.states)

    def grad(self, theta, S: int) -> np.ndarray:
        return model.conditional_grad(theta, S, self.target, self.given, self.states)

    def label(self, names) -> str:
        cond = ",".join(f"{names[g]}={int(s)}" for g, s in zip(self.given, self.states))
        return f"conditional({names[self.target]}|{cond})"


def parse_quantity(text: str, names) -> Marginal | Conditional:
    """Parse ``marginal(lynx)`` or ``conditional(lynx|roe_deer=1,chamois=0)``."""
    names = list(names)

    def idx(token: str) -> int:
        token = token.strip()
        if token in names:
            return names.index(token)
        raise KeyError(f"unknown species {token!r}")

    s = text.strip()
    try:
        head, body = s.split("(", 1)
        if not body.endswith(")"):
            raise ValueError
        body = body[:-1]
        head = head.strip().lower()
        if head == "marginal":
            return Marginal(idx(body))
        if head == "conditional":
            target, cond = body.split("|", 1)
            given, states = [], []
            for part in cond.split(","):
                name, state = part.split("=", 1)
                given.append(idx(name))
                states.append(model._state_value(state.strip()) == 1)
            return Conditional(idx(target), tuple(given), tuple(states))
    except ValueError:
        pass
    raise ValueError(f"cannot parse quantity {text!r}")


def derived_interval(
    result: FitResult, quantity: Marginal | Conditional, level: float = 0.95
) -> IntervalEstimate:
    """Delta-method interval for a marginal or conditional occupancy probability.

    Variance is ``g' V g`` with ``g`` the analytic gradient w.r.t. theta; the
    symmetric interval is clipped to [0, 1].
    """
    V = _require_vcov(result)
    point = quantity.value(result.params_hat)
    g = quantity.grad(result.theta_hat, result.S)
    se = float(np.sqrt(max(g @ V @ g, 0.0)))
    z = _z(level)
    lo = min(max(point - z * se, 0.0), point)
    hi = max(min(point + z * se, 1.0), point)
    return IntervalEstimate(point, lo, hi, level, se)
