"""Diffusion value function alpha(x, phi) = min over theta of the
risk-adjusted objective -mu(x,theta) + (phi/2) sigma(theta)^2, together with
its minimizer path, slope bounds and the two-asset closed form.

For the simplex the minimization is a strictly convex QP solved with a primal
active-set method (exact KKT solves on the working set); finite menus reduce
to a minimum over affine functions of phi. All operations are pure.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import (
    DRIFT_LOG_WEALTH,
    PortfolioModel,
)

__all__ = [
    "AlphaEngineError",
    "AlphaResult",
    "LipschitzBounds",
    "ClosedFormN2",
    "solve_alpha",
    "alpha_discrete",
    "closed_form_n2",
    "lipschitz_bounds",
    "envelope_gradient_x",
    "weights_path",
    "alpha_field",
    "kkt_residual",
    "exhaustive_alpha",
    "near_breakpoint",
]

_ACTIVE_TOL = 1e-12      # weights below this count as zero
_KKT_TOL = 1e-10


class AlphaEngineError(RuntimeError):
    """Internal failure of the active-set iteration (must not occur for
    positive-definite covariance)."""


@dataclass(frozen=True)
class AlphaResult:
    """Value, minimizer and envelope slope of the parametric problem at one
    (x, phi) query point."""

    value: float
    theta_hat: np.ndarray
    dvalue_dphi: float
    active_set: tuple

    def __post_init__(self):
        th = np.asarray(self.theta_hat, dtype=float)
        th.flags.writeable = False
        object.__setattr__(self, "theta_hat", th)


@dataclass(frozen=True)
class LipschitzBounds:
    """Slope bounds of alpha in phi: omega = min of sigma(theta)^2/2 over the
    decision set, big_l = max; l0 bounds |d sigma^2/dx| (zero here since the
    covariance does not depend on x)."""

    omega: float
    big_l: float
    l0: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.omega <= self.big_l):
            raise AlphaEngineError(
                f"need 0 < omega <= L, got ({self.omega}, {self.big_l})"
            )


def _phi_eff(model: PortfolioModel, phi: float) -> float:
    # log-wealth drift contributes an extra sigma^2/2, shifting the effective
    # risk-aversion weight of the quadratic term by one
    return phi + 1.0 if model.drift_mode == DRIFT_LOG_WEALTH else phi


def _constant_term(model: PortfolioModel, x) -> float:
    if model.inflow is None:
        return 0.0
    return -float(model.inflow.term(x))


def _solve_working_set(rho: float, sigma: np.ndarray, mu: np.ndarray, free):
    """Equality-constrained minimizer on the working set: weights off `free`
    pinned at zero, sum of free weights equal to one. Returns (theta, lam)."""
    f = list(free)
    k = len(f)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = rho * sigma[np.ix_(f, f)]
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([mu[f], [1.0]])
    sol = np.linalg.solve(kkt, rhs)
    theta = np.zeros(len(mu))
    theta[f] = sol[:k]
    return theta, float(sol[k])


def _vertex_minimum(model: PortfolioModel, phi_eff: float):
    vals = -model.mu + 0.5 * phi_eff * np.diag(model.sigma)
    i = int(np.argmin(vals))
    theta = np.zeros(model.n)
    theta[i] = 1.0
    return float(vals[i]), theta


def _active_set_qp(sigma: np.ndarray, mu: np.ndarray, rho: float):
    """Minimize -mu'theta + (rho/2) theta'Sigma theta on the simplex, rho > 0.

    Primal active-set iteration starting from the uniform weight vector.
    Returns (theta, lam) satisfying the KKT conditions.
    """
    n = len(mu)
    theta = np.full(n, 1.0 / n)
    free = set(range(n))
    for _ in range(50 * n + 50):
        cand, lam = _solve_working_set(rho, sigma, mu, sorted(free))
        if min(cand[sorted(free)]) >= -_ACTIVE_TOL:
            theta = np.maximum(cand, 0.0)
            theta /= theta.sum()
            grad = rho * (sigma @ theta) - mu
            bound = [i for i in range(n) if i not in free]
            if not bound:
                return theta, lam
            mult = grad[bound] + lam
            j = int(np.argmin(mult))
            if mult[j] >= -_KKT_TOL:
                return theta, lam
            free.add(bound[j])
        else:
            # step toward the candidate until a free weight hits zero
            d = cand - theta
            mask = [i for i in sorted(free) if d[i] < -_ACTIVE_TOL]
            steps = [-theta[i] / d[i] for i in mask]
            t = min(1.0, min(steps))
            blocking = mask[int(np.argmin(steps))]
            theta = theta + t * d
            theta[blocking] = 0.0
            free.discard(blocking)
            if not free:  # cannot happen: the step keeps at least one weight
                raise AlphaEngineError("active set emptied out")
    raise AlphaEngineError("active-set iteration did not converge")


def exhaustive_alpha(model: PortfolioModel, x: float, phi: float) -> AlphaResult:
    """Certify the QP by enumerating every support set (exponential in n)."""
    rho = _phi_eff(model, phi)
    if rho <= 0:
        val, theta = _vertex_minimum(model, rho)
        return _result(model, x, theta, val + _constant_term(model, x))
    best_val, best_theta = np.inf, None
    n = model.n
    for k in range(1, n + 1):
        for f in itertools.combinations(range(n), k):
            try:
                theta, _ = _solve_working_set(rho, model.sigma, model.mu, f)
            except np.linalg.LinAlgError:
                continue
            if min(theta[list(f)]) < -_ACTIVE_TOL:
                continue
            val = float(-model.mu @ theta + 0.5 * rho * model.variance(theta))
            if val < best_val - 1e-15:
                best_val, best_theta = val, np.maximum(theta, 0.0)
    return _result(model, x, best_theta, best_val + _constant_term(model, x))


def _result(model: PortfolioModel, x, theta: np.ndarray, value: float) -> AlphaResult:
    active = tuple(int(i) for i in np.flatnonzero(theta > _ACTIVE_TOL))
    return AlphaResult(
        value=value,
        theta_hat=theta,
        dvalue_dphi=0.5 * model.variance(theta),
        active_set=active,
    )


def solve_alpha(model: PortfolioModel, x: float, phi: float) -> AlphaResult:
    """Global minimizer of the risk-adjusted objective at (x, phi).

    Simplex sets run the active-set QP (with exhaustive enumeration as a
    fallback certifier for n <= 3); discrete sets take the exact minimum over
    the menu. For non-convex effective weights (phi at or below the convexity
    threshold) the minimum is attained at a vertex and computed directly.
    """
    if model.decision_set.kind == "discrete":
        return alpha_discrete(model, x, phi)
    rho = _phi_eff(model, phi)
    shift = _constant_term(model, x)
    if rho <= 0:
        val, theta = _vertex_minimum(model, rho)
        return _result(model, x, theta, val + shift)
    if model.n == 1:
        theta = np.ones(1)
        val = float(-model.mu[0] + 0.5 * rho * model.sigma[0, 0])
        return _result(model, x, theta, val + shift)
    try:
        theta, _ = _active_set_qp(model.sigma, model.mu, rho)
    except AlphaEngineError:
        if model.n <= 3:
            return exhaustive_alpha(model, x, phi)
        raise
    val = float(-model.mu @ theta + 0.5 * rho * model.variance(theta))
    return _result(model, x, theta, val + shift)


def alpha_discrete(model: PortfolioModel, x: float, phi: float) -> AlphaResult:
    """Minimum over a finite menu: each fund contributes the affine function
    E_i phi + D_i with slope E_i = theta_i'Sigma theta_i / 2. Ties break to
    the lowest index."""
    if model.decision_set.kind != "discrete":
        raise AlphaEngineError("alpha_discrete needs a discrete decision set")
    pts = model.decision_set.points
    slopes = 0.5 * model.variance(pts)
    intercepts = -(pts @ model.mu)
    if model.drift_mode == DRIFT_LOG_WEALTH:
        intercepts = intercepts + slopes  # the -sigma^2/2 drift term
    vals = intercepts + phi * slopes + _constant_term(model, x)
    i = int(np.argmin(vals))
    return _result(model, x, pts[i].copy(), float(vals[i]))


def kkt_residual(model: PortfolioModel, x: float, phi: float,
                 result: AlphaResult) -> float:
    """Independent optimality certificate: max violation over stationarity on
    the support, multiplier nonnegativity off it, and simplex feasibility."""
    theta = np.asarray(result.theta_hat)
    rho = _phi_eff(model, phi)
    viol = abs(theta.sum() - 1.0)
    viol = max(viol, float(-theta.min()) if theta.min() < 0 else 0.0)
    if model.decision_set.kind == "discrete":
        # menu optimality: no fund strictly better
        best = alpha_discrete(model, x, phi).value
        return max(viol, result.value - best)
    if rho <= 0:
        best, _ = _vertex_minimum(model, rho)
        return max(viol, result.value - (best + _constant_term(model, x)))
    grad = rho * (model.sigma @ theta) - model.mu
    support = theta > _ACTIVE_TOL
    lam = -float(np.mean(grad[support]))
    viol = max(viol, float(np.max(np.abs(grad[support] + lam))))
    if not support.all():
        viol = max(viol, float(-np.min(grad[~support] + lam)))
    return viol


# --- slope bounds and x-derivatives ----------------------------------------

def lipschitz_bounds(model: PortfolioModel) -> LipschitzBounds:
    """omega/L = min/max of sigma(theta)^2 / 2 over the decision set.

    The minimum over the simplex is itself a convex QP; the maximum of a
    convex function over a polytope sits at a vertex.
    """
    if model.decision_set.kind == "discrete":
        v = 0.5 * model.variance(model.decision_set.points)
        return LipschitzBounds(float(v.min()), float(v.max()))
    theta, _ = _active_set_qp(model.sigma, np.zeros(model.n), 1.0)
    omega = 0.5 * model.variance(theta)
    big_l = 0.5 * float(np.max(np.diag(model.sigma)))
    return LipschitzBounds(float(omega), big_l)


def envelope_gradient_x(model: PortfolioModel, x: float, phi: float):
    """(p(x), alpha_x): the bound p(x) = max over theta of |d mu/dx| and the
    envelope-theorem derivative of alpha in x. Both vanish without inflow."""
    if model.inflow is None:
        return 0.0, 0.0
    dmu = float(model.inflow.term_dx(x))  # theta-independent
    return abs(dmu), -dmu


# --- two-asset closed form ---------------------------------------------------

@dataclass(frozen=True)
class ClosedFormN2:
    """Piecewise form of alpha(phi) for two assets on the simplex.

    alpha = E_minus phi + D_minus up to phi_lo, A - B/phi + C phi on
    (phi_lo, phi_hi), E_plus phi + D_plus beyond. phi_lo = 0 marks an
    interior solution down to phi = 0 (no lower piece); phi_hi = inf an
    interior solution for all large phi (no upper piece). When the interior
    interval is empty (the minimizer pinned at one vertex for every phi),
    phi_lo = phi_hi = inf and the vertex line occupies the minus piece.
    Absent pieces carry nan coefficients.
    """

    a_const: float
    b_const: float
    c_const: float
    phi_lo: float
    phi_hi: float
    e_minus: float
    d_minus: float
    e_plus: float
    d_plus: float

    def interior(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.a_const - self.b_const / phi + self.c_const * phi

    def evaluate(self, phi):
        phi = np.asarray(phi, dtype=float)
        out = self.interior(phi)
        if self.phi_lo > 0 and not np.isnan(self.e_minus):
            out = np.where(phi <= self.phi_lo,
                           self.e_minus * phi + self.d_minus, out)
        if np.isfinite(self.phi_hi):
            out = np.where(phi >= self.phi_hi,
                           self.e_plus * phi + self.d_plus, out)
        return out if out.ndim else float(out)


def closed_form_n2(model: PortfolioModel) -> ClosedFormN2:
    """Derive the two-asset piecewise coefficients from the interior KKT
    solution theta1(phi) = ((mu1-mu2)/phi + S22 - S12) / (S11 - 2 S12 + S22).

    Requires the plain drift convention (no inflow) so alpha depends on x
    through nothing and on phi alone.
    """
    if model.n != 2 or model.decision_set.kind != "simplex":
        raise AlphaEngineError("closed form needs a 2-asset simplex model")
    if model.drift_mode == DRIFT_LOG_WEALTH or model.inflow is not None:
        raise AlphaEngineError("closed form needs the simple drift convention")
    s = model.sigma
    q = float(s[0, 0] - 2.0 * s[0, 1] + s[1, 1])
    if q <= 0:
        raise AlphaEngineError("degenerate covariance: S11 - 2 S12 + S22 <= 0")
    m = float(model.mu[0] - model.mu[1])
    a = float((s[1, 1] - s[0, 1]) / q)   # asymptotic (minimum-variance) weight
    b = m / q
    a_const = float(-model.mu[1] - m * a)
    b_const = 0.5 * m * m / q
    c_const = 0.5 * float(np.linalg.det(s)) / q

    # interior interval: phi > 0 with 0 < a + b/phi < 1
    if b > 0:
        phi_lo = b / (1.0 - a) if a < 1.0 else np.inf
        phi_hi = -b / a if a < 0.0 else np.inf
    elif b < 0:
        phi_lo = -b / a if a > 0.0 else np.inf
        phi_hi = b / (1.0 - a) if a > 1.0 else np.inf
    else:
        phi_lo = 0.0 if 0.0 < a < 1.0 else np.inf
        phi_hi = np.inf

    def vertex_line(phi_probe):
        v0 = (-model.mu[0] + 0.5 * phi_probe * s[0, 0], 0.5 * s[0, 0], -model.mu[0])
        v1 = (-model.mu[1] + 0.5 * phi_probe * s[1, 1], 0.5 * s[1, 1], -model.mu[1])
        _, e, d = min(v0, v1)
        return float(e), float(d)

    e_minus = d_minus = e_plus = d_plus = np.nan
    if phi_lo == np.inf:
        # empty interior: one vertex is optimal for every phi, and its line
        # (the lower of the two at any probe) fills the whole axis
        e_minus, d_minus = vertex_line(1.0)
    else:
        if phi_lo > 0:
            e_minus, d_minus = vertex_line(0.5 * phi_lo)
        if np.isfinite(phi_hi):
            e_plus, d_plus = vertex_line(2.0 * phi_hi)
    return ClosedFormN2(a_const, b_const, c_const, float(phi_lo), float(phi_hi),
                        e_minus, d_minus, e_plus, d_plus)


def near_breakpoint(model: PortfolioModel, x: float, phi: float,
                    window: float = 1e-3) -> bool:
    """True when the QP active set changes within [phi - window, phi + window].
    The second derivative of alpha is discontinuous exactly there."""
    lo = solve_alpha(model, x, max(phi - window, 1e-12)).active_set
    hi = solve_alpha(model, x, phi + window).active_set
    return lo != hi


# --- vectorized evaluation and weight paths ---------------------------------

def weights_path(model: PortfolioModel, phi_grid, x: float = 0.0):
    """Tabulate (phi, theta_hat, alpha, dalpha_dphi) along an increasing phi
    grid. Within one active set the weights are affine in 1/phi."""
    phi_grid = np.asarray(phi_grid, dtype=float)
    if phi_grid.ndim != 1 or np.any(np.diff(phi_grid) <= 0) or phi_grid[0] <= 0:
        raise AlphaEngineError("phi grid must be strictly increasing and positive")
    theta = np.empty((phi_grid.size, model.n))
    alpha = np.empty(phi_grid.size)
    dalpha = np.empty(phi_grid.size)
    for i, phi in enumerate(phi_grid):
        r = solve_alpha(model, x, float(phi))
        theta[i] = r.theta_hat
        alpha[i] = r.value
        dalpha[i] = r.dvalue_dphi
    return {"phi": phi_grid, "theta": theta, "alpha": alpha, "dalpha_dphi": dalpha}


def alpha_field(model: PortfolioModel, x, phi):
    """Vectorized alpha and its phi-slope over broadcastable (x, phi) arrays.

    Discrete menus and one- or two-asset simplex models evaluate in closed
    form; larger simplex models fall back to the per-point QP. Used by the
    PDE stepper, where the two-asset path is certified against the QP by the
    closed-form equivalence check.
    """
    xb, pb = np.broadcast_arrays(np.asarray(x, dtype=float),
                                 np.asarray(phi, dtype=float))
    shape = xb.shape
    xf, pf = xb.ravel(), pb.ravel()
    ds = model.decision_set

    if ds.kind == "discrete":
        slopes = 0.5 * model.variance(ds.points)
        intercepts = -(ds.points @ model.mu)
        if model.drift_mode == DRIFT_LOG_WEALTH:
            intercepts = intercepts + slopes  # the -sigma^2/2 drift term
        vals = intercepts[None, :] + pf[:, None] * slopes[None, :]
        i = np.argmin(vals, axis=1)
        alpha = vals[np.arange(len(pf)), i]
        slope = slopes[i]
        if model.inflow is not None:
            alpha = alpha - model.inflow.term(xf)
        return alpha.reshape(shape), slope.reshape(shape)

    rho = pf + 1.0 if model.drift_mode == DRIFT_LOG_WEALTH else pf.copy()
    if ds.n == 1:
        var = np.full_like(pf, model.sigma[0, 0])
        alpha = -model.mu[0] + 0.5 * rho * var
        slope = 0.5 * var
    elif ds.n == 2:
        s = model.sigma
        q = float(s[0, 0] - 2.0 * s[0, 1] + s[1, 1])
        a = (s[1, 1] - s[0, 1]) / q
        b = float(model.mu[0] - model.mu[1]) / q
        with np.errstate(divide="ignore", invalid="ignore"):
            th1 = np.clip(a + b / rho, 0.0, 1.0)
        # non-convex weights (rho <= 0): the minimum sits at a vertex
        v0 = -model.mu[0] + 0.5 * rho * s[0, 0]
        v1 = -model.mu[1] + 0.5 * rho * s[1, 1]
        th1 = np.where(rho > 0, th1, np.where(v0 <= v1, 1.0, 0.0))
        th2 = 1.0 - th1
        var = th1 * th1 * s[0, 0] + 2.0 * th1 * th2 * s[0, 1] + th2 * th2 * s[1, 1]
        alpha = -(model.mu[0] * th1 + model.mu[1] * th2) + 0.5 * rho * var
        slope = 0.5 * var
    else:
        alpha = np.empty_like(pf)
        slope = np.empty_like(pf)
        for k in range(len(pf)):
            r = solve_alpha(model, float(xf[k]), float(pf[k]))
            alpha[k] = r.value
            slope[k] = r.dvalue_dphi
        return alpha.reshape(shape), slope.reshape(shape)

    if model.inflow is not None:
        alpha = alpha - model.inflow.term(xf)
    return alpha.reshape(shape), slope.reshape(shape)
