"""Gaussian field sampling and conditioning on a large quadratic form.

Samples are represented by their coordinates in the kept covariance mode basis
(the K eigenvectors of the weighted covariance above the numerical cutoff).  A
coordinate vector z drawn N(0, I) yields the field with weighted coordinates
U diag(sqrt(mu)) z, which reproduces the covariance exactly on the kept modes.
The quadratic form acts through the signed spectrum: with t the coefficients
along the nonzero form modes, the observable is sum_n lambda_n |t_n|^2, and
the remaining directions only feed the residual away from the fundamental
profile.

Conditioning on a large observable uses either plain rejection or exponential
tilting in the form eigenbasis: mode variances are inflated to put the
proposal mean at the threshold and samples carry self-normalizing importance
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import COMPLEX, Field, REAL

THETA_CAP = 1.0 - 1e-6
REJECTION_MIN_ACCEPT = 1e-6


class SamplingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# deterministic random streams


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, stream) fixes the draw sequence."""

    seed: int
    stream: int = 0

    def generator(self):
        return np.random.Generator(np.random.Philox(key=(self.seed << 64) + self.stream))

    def substream(self, k):
        return RngStream(self.seed, self.stream + k)


def polar_normals(gen, n):
    """Standard normal draws by the polar (Marsaglia) rejection method."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        m = (need // 2 + 1) * 2 + 32
        uv = 2.0 * gen.random((m, 2)) - 1.0
        s = uv[:, 0] ** 2 + uv[:, 1] ** 2
        ok = (s > 0.0) & (s < 1.0)
        factor = np.sqrt(-2.0 * np.log(s[ok]) / s[ok])
        vals = np.concatenate([uv[ok, 0] * factor, uv[ok, 1] * factor])
        take = min(len(vals), need)
        out[filled:filled + take] = vals[:take]
        filled += take
    return out


def standard_coefficients(gen, shape, kind):
    """i.i.d. standard coefficients: N(0,1) real, or complex with
    independent N(0, 1/2) real and imaginary parts."""
    n = int(np.prod(shape))
    if kind == COMPLEX:
        xy = polar_normals(gen, 2 * n)
        z = (xy[:n] + 1j * xy[n:]) / np.sqrt(2.0)
        return z.reshape(shape)
    return polar_normals(gen, n).reshape(shape)


def sample_coefficients(rng, n_modes, count, kind=REAL):
    """Draw ``count`` coefficient vectors of length ``n_modes``."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return standard_coefficients(gen, (count, n_modes), kind)


# ---------------------------------------------------------------------------
# reconstruction and statistics


def reconstruct_field(z, spec_or_cov, cov=None):
    """Field realization from kept-mode coordinates z."""
    cov = cov if cov is not None else getattr(spec_or_cov, "cov", spec_or_cov)
    if len(z) != cov.kept_rank:
        raise SamplingError("coordinate length does not match kept covariance rank")
    weighted = cov.modes @ (np.sqrt(cov.mu) * z)
    grid = cov.grid
    func = weighted / np.sqrt(grid.dof_weights())
    if grid.field_kind == REAL:
        func = func.real
    return Field(grid, func.reshape(grid.node_count, grid.n_components))


def coefficients_of(z, spec):
    """Nonzero form mode coefficients of a kept-mode coordinate vector."""
    return spec.vectors.conj().T @ z


def quadratic_value(t, spec):
    """Observable value sum_n lambda_n |t_n|^2 from nonzero mode coefficients."""
    return float(np.sum(spec.values * np.abs(t) ** 2))


def fundamental_coefficients(z, basis):
    """Coefficients of a sample along the fundamental basis columns."""
    return basis.mode_coeffs.conj().T @ z


def fundamental_projection(z, basis):
    """Kept-mode coordinates of the fundamental part of a sample."""
    return basis.mode_coeffs @ fundamental_coefficients(z, basis)


def residual(z, zbar):
    return z - zbar


def weighted_norm(z, cov):
    """L2 norm of the field with kept-mode coordinates z."""
    return float(np.linalg.norm(np.sqrt(cov.mu) * z))


def distance_statistic(z, zbar, cov):
    """L2 distance between the normalized field and its normalized fundamental
    part; lies in [0, 2]."""
    s = np.sqrt(cov.mu) * z
    sbar = np.sqrt(cov.mu) * zbar
    ns, nbar = np.linalg.norm(s), np.linalg.norm(sbar)
    if ns == 0.0 or nbar == 0.0:
        raise SamplingError("undefined distance: zero-norm field or projection")
    return float(np.linalg.norm(s / ns - sbar / nbar))


def distance_bound(z, zbar, cov):
    """The chordal bound 2 ||residual|| / ||fundamental part||."""
    s = np.sqrt(cov.mu) * (z - zbar)
    sbar = np.sqrt(cov.mu) * zbar
    nbar = np.linalg.norm(sbar)
    if nbar == 0.0:
        raise SamplingError("undefined distance bound: zero fundamental part")
    return float(2.0 * np.linalg.norm(s) / nbar)


# ---------------------------------------------------------------------------
# exponential tilting


def _variance_factor(kind):
    # E[lambda t^2] per unit variance: coefficient of theta*lambda in the
    # tilted variance denominator
    return 1.0 if kind == COMPLEX else 2.0


def tilted_mean(theta, lam, kind):
    c = _variance_factor(kind)
    denom = 1.0 - c * theta * lam
    if np.any(denom <= 0.0):
        return np.inf
    return float(np.sum(lam / denom))


def tilt_parameter(spec, u, sign=1):
    """Tilt strength putting the proposal mean of the signed observable at u.

    Returns 0 when u is below the unconditional mean (rejection regime)."""
    kind = spec.cov.grid.field_kind
    lam = sign * spec.values
    lam_max = np.max(lam)
    if lam_max <= 0:
        raise SamplingError("requested sign branch is empty")
    c = _variance_factor(kind)
    if u <= tilted_mean(0.0, lam, kind):
        return 0.0
    theta_cap = THETA_CAP / (c * lam_max)
    if tilted_mean(theta_cap, lam, kind) <= u:
        return theta_cap
    lo, hi = 0.0, theta_cap
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if tilted_mean(mid, lam, kind) < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# conditional ensembles


@dataclass
class ConditionalEnsemble:
    """Weighted samples of the field conditioned on sign * Q > u.

    ``coords`` holds kept-mode coordinate vectors (rows), ``coeffs`` the
    nonzero form mode coefficients, ``q`` the observable values and
    ``weights`` the importance weights (all ones for rejection)."""

    sign: int
    threshold: float
    method: str
    coords: np.ndarray
    coeffs: np.ndarray
    q: np.ndarray
    weights: np.ndarray
    theta: float
    acceptance: float
    spectrum: object

    def __post_init__(self):
        if np.any(self.sign * self.q <= self.threshold):
            raise SamplingError("ensemble contains a sample violating its condition")
        if np.any(self.weights <= 0):
            raise SamplingError("importance weights must be positive")

    def __len__(self):
        return len(self.q)

    @property
    def ess(self):
        w = self.weights
        return float(np.sum(w) ** 2 / np.sum(w ** 2))

    def weighted_mean(self, values):
        w = self.weights
        return float(np.sum(w * values) / np.sum(w))

    def weighted_probability(self, indicator):
        """Self-normalized estimate of a conditional probability with its
        delta-method standard error."""
        w = self.weights
        h = np.asarray(indicator, dtype=float)
        sw = np.sum(w)
        p = float(np.sum(w * h) / sw)
        var = float(np.sum((w / sw) ** 2 * (h - p) ** 2))
        return p, np.sqrt(var)


def _draw_batch(gen, spec, count, theta, sign):
    """One batch of proposal draws; returns (coords, coeffs, q)."""
    cov = spec.cov
    kind = cov.grid.field_kind
    K = cov.kept_rank
    V = spec.vectors
    m = V.shape[1]
    c = _variance_factor(kind)
    lam_signed = sign * spec.values

    w_iso = standard_coefficients(gen, (count, K), kind)
    if theta == 0.0:
        Z = w_iso
        T = Z @ np.conj(V)
    else:
        scale = 1.0 / np.sqrt(1.0 - c * theta * lam_signed)
        T_base = standard_coefficients(gen, (count, m), kind)
        T = T_base * scale[None, :]
        perp = w_iso - (w_iso @ np.conj(V)) @ V.T
        Z = T @ V.T + perp
    Q = (np.abs(T) ** 2) @ spec.values
    return Z, T, Q


def conditional_ensemble(spec, sign, u, method, count, rng, max_batches=10_000):
    """Generate ``count`` samples of the field conditioned on sign * Q > u.

    ``method`` is "rejection" (exact, unit weights) or "tilted" (importance
    sampling with mean-matched exponential tilt)."""
    sign = 1 if sign > 0 else -1
    lam_signed = sign * spec.values
    if np.max(lam_signed) <= 0:
        raise SamplingError("requested sign branch is empty")
    gen = rng.generator() if isinstance(rng, RngStream) else rng

    if method == "rejection":
        theta = 0.0
    elif method == "tilted":
        theta = tilt_parameter(spec, u, sign=sign)
    else:
        raise SamplingError(f"unknown method {method!r}")

    coords, coeffs, qs = [], [], []
    drawn = accepted = 0
    batch = max(1024, count)
    for _ in range(max_batches):
        Z, T, Q = _draw_batch(gen, spec, batch, theta, sign)
        keep = sign * Q > u
        drawn += batch
        accepted += int(np.sum(keep))
        if np.any(keep):
            coords.append(Z[keep])
            coeffs.append(T[keep])
            qs.append(Q[keep])
        if accepted >= count:
            break
        if method == "rejection" and accepted < 10 \
                and drawn >= 10.0 / REJECTION_MIN_ACCEPT:
            raise SamplingError(
                "rejection acceptance below 1e-6; use the tilted method")
    if accepted < count:
        raise SamplingError("could not reach requested sample count")

    Z = np.concatenate(coords)[:count]
    T = np.concatenate(coeffs)[:count]
    Q = np.concatenate(qs)[:count]
    if theta == 0.0:
        W = np.ones(count)
    else:
        # importance weight exp(-theta * sign * Q), stabilized at the threshold
        W = np.exp(-theta * (sign * Q - u))
    return ConditionalEnsemble(sign, float(u), method, Z, T, Q, W, float(theta),
                               accepted / drawn, spec)
