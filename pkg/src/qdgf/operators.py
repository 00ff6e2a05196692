"""Discretized covariance operators and quadratic forms.

All spectral algebra is carried out in weighted coordinates: a field f in
function coordinates maps to v = W^(1/2) f, where W is the diagonal matrix of
quadrature weights per degree of freedom.  In these coordinates the L2 inner
product is the plain Euclidean one, so a single symmetric eigensolver serves
every operator in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import COMPLEX, REAL, Field, Grid, GridError

# modes below MU_CUTOFF_REL * mu_1 are numerical zeros of the covariance and
# are dropped from the square root and from sampling
MU_CUTOFF_REL = 1e-12
# eigenvalues below -PSD_TOL_REL * mu_1 mean the kernel is not a covariance
PSD_TOL_REL = 1e-8


class OperatorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernels


def gaussian_kernel(sigma=1.0):
    """Stationary scalar kernel C(x) = exp(-|x|^2 / 2 sigma^2)."""
    s2 = float(sigma) ** 2

    def kernel(diff):
        r2 = np.sum(np.square(diff), axis=-1)
        return np.exp(-r2 / (2.0 * s2))

    return kernel


def exponential_kernel(corr_length=1.0):
    """Stationary scalar kernel C(x) = exp(-|x| / corr_length); continuous only."""
    ell = float(corr_length)

    def kernel(diff):
        r = np.sqrt(np.sum(np.square(diff), axis=-1))
        return np.exp(-r / ell)

    return kernel


@dataclass(frozen=True)
class IsotropicFlowKernel:
    """Two-point velocity covariance of an isotropic incompressible flow.

    ``energy`` is the kinetic energy per unit mass (so the one-point variance
    trace is 2*energy) and ``taylor_scale`` the length scale of the
    longitudinal profile.  The default profile is gaussian,
    f(x) = exp(-x^2 / 2 ell^2); a custom profile must supply matching first
    and second derivatives and be twice differentiable.
    """

    energy: float
    taylor_scale: float
    f: callable = None
    df: callable = None
    d2f: callable = None

    def __post_init__(self):
        if self.energy <= 0 or self.taylor_scale <= 0:
            raise OperatorError("energy and taylor_scale must be positive")
        if self.f is None:
            ell = self.taylor_scale
            object.__setattr__(self, "f", lambda x: np.exp(-np.square(x) / (2 * ell**2)))
            object.__setattr__(self, "df", lambda x: -x / ell**2 * np.exp(-np.square(x) / (2 * ell**2)))
            object.__setattr__(
                self, "d2f",
                lambda x: (np.square(x) / ell**2 - 1.0) / ell**2 * np.exp(-np.square(x) / (2 * ell**2)))
        elif self.df is None or self.d2f is None:
            raise OperatorError("custom profile requires df and d2f")
        self._validate_profile()

    def _validate_profile(self):
        ell = self.taylor_scale
        if abs(float(self.f(0.0)) - 1.0) > 1e-10:
            raise OperatorError("profile must satisfy f(0) = 1")
        if abs(float(self.df(0.0))) > 1e-10:
            raise OperatorError("profile must satisfy f'(0) = 0")
        x = np.linspace(1e-4 * ell, 0.01 * ell, 7)
        resid = np.abs(self.f(x) - 1.0 + np.square(x) / (2 * ell**2))
        if np.any(resid > 1e-6 * (x / ell) ** 4):
            raise OperatorError("profile must behave as 1 - x^2/2 ell^2 near 0")

    def block(self, diff):
        """Covariance blocks C_{mu nu}(x) for displacements ``diff`` (..., 3)."""
        diff = np.asarray(diff, dtype=float)
        r = np.sqrt(np.sum(np.square(diff), axis=-1))
        E = self.energy
        fr = self.f(r)
        dfr = self.df(r)
        out = np.zeros(diff.shape[:-1] + (3, 3))
        eye = np.eye(3)
        out += (2.0 * E / 3.0) * fr[..., None, None] * eye
        # transverse correction (E/3) x f'(x) (delta - xhat xhat); vanishes at x=0
        nz = r > 0
        if np.any(nz):
            rn = r[nz]
            xhat = diff[nz] / rn[..., None]
            proj = eye - xhat[..., :, None] * xhat[..., None, :]
            out[nz] += (E / 3.0) * (rn * self.df(rn))[..., None, None] * proj
        del dfr
        return out

    def curl_block(self, diff):
        """Rows of curl_x C(x): entries (mu, a) = (curl c_mu(x))_a.

        c_mu is the vector field with components (c_mu)_nu = C_{mu nu};
        its curl is (E/3)(4 f' + x f'') eps_{a b mu} xhat_b.
        """
        diff = np.asarray(diff, dtype=float)
        r = np.sqrt(np.sum(np.square(diff), axis=-1))
        out = np.zeros(diff.shape[:-1] + (3, 3))
        nz = r > 0
        if np.any(nz):
            rn = r[nz]
            xhat = diff[nz] / rn[..., None]
            coeff = (self.energy / 3.0) * (4.0 * self.df(rn) + rn * self.d2f(rn))
            eps = _levi_civita()
            # (mu, a) entry: coeff * eps_{a b mu} xhat_b
            out[nz] = coeff[..., None, None] * np.einsum("abm,...b->...ma", eps, xhat)
        return out


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


# ---------------------------------------------------------------------------
# covariance operator


@dataclass(frozen=True)
class CovarianceOperator:
    """Weighted covariance matrix with its truncated eigendecomposition.

    ``weighted`` is C~ = W^(1/2) K W^(1/2); ``mu`` holds the kept eigenvalues
    in descending order and ``modes`` the matching orthonormal eigenvectors
    (columns, weighted coordinates).
    """

    grid: Grid
    weighted: np.ndarray
    mu: np.ndarray
    modes: np.ndarray
    trace: float = dc_field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "trace", float(np.trace(self.weighted).real))

    @property
    def kept_rank(self):
        return len(self.mu)

    @classmethod
    def from_weighted(cls, grid, weighted):
        """Eigendecompose a weighted covariance matrix, validating positivity."""
        weighted = np.asarray(weighted)
        n = grid.dof_count
        if weighted.shape != (n, n):
            raise OperatorError(f"weighted matrix shape {weighted.shape}, expected {(n, n)}")
        herm_gap = np.max(np.abs(weighted - weighted.conj().T))
        scale = max(np.max(np.abs(weighted)), 1e-300)
        if herm_gap > 1e-10 * scale:
            raise OperatorError("weighted covariance is not Hermitian")
        weighted = 0.5 * (weighted + weighted.conj().T)
        mu, vecs = np.linalg.eigh(weighted)
        mu = mu[::-1]
        vecs = vecs[:, ::-1]
        mu1 = mu[0]
        if mu1 <= 0:
            raise OperatorError("invalid covariance kernel: no positive eigenvalue")
        if mu[-1] < -PSD_TOL_REL * mu1:
            raise OperatorError(
                "invalid covariance kernel: eigenvalue %.3e below -%.0e * mu_1"
                % (mu[-1], PSD_TOL_REL))
        cutoff = MU_CUTOFF_REL * mu1
        keep = mu > cutoff
        return cls(grid, weighted, np.ascontiguousarray(mu[keep]),
                   np.ascontiguousarray(vecs[:, keep]))

    def sqrt_apply(self, v):
        """Apply C~^(1/2) in weighted coordinates."""
        return self.modes @ (np.sqrt(self.mu) * (self.modes.conj().T @ v))

    def apply(self, v):
        return self.weighted @ v

    def mode_to_weighted(self, y):
        """Map coefficients in the kept-mode basis to weighted coordinates."""
        return self.modes @ y


def assemble_covariance_scalar(grid, kernel):
    """Discretize a stationary scalar kernel C(x - y) on the grid."""
    if grid.n_components != 1:
        raise OperatorError("scalar covariance requires a 1-component grid")
    x = grid.coordinates()
    diff = x[:, None, :] - x[None, :, :]
    K = kernel(diff)
    K = 0.5 * (K + K.T)
    sw = np.sqrt(grid.weights)
    weighted = sw[:, None] * K * sw[None, :]
    return CovarianceOperator.from_weighted(grid, weighted)


def assemble_covariance_flow(grid, flow_kernel):
    """Discretize the isotropic flow covariance on a 3-component 3D grid."""
    if grid.dim != 3 or grid.n_components != 3 or grid.field_kind != REAL:
        raise OperatorError("flow covariance requires a real 3D grid with 3 components")
    x = grid.coordinates()
    diff = x[:, None, :] - x[None, :, :]
    blocks = flow_kernel.block(diff)  # (n, n, 3, 3)
    n = grid.node_count
    K = blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
    K = 0.5 * (K + K.T)
    sw = np.sqrt(grid.dof_weights())
    weighted = sw[:, None] * K * sw[None, :]
    return CovarianceOperator.from_weighted(grid, weighted)


def sqrt_covariance(cov):
    """Return an applier for C~^(1/2) in weighted coordinates."""
    return cov.sqrt_apply


# ---------------------------------------------------------------------------
# quadratic forms


@dataclass(frozen=True)
class QuadraticForm:
    """Hermitian quadratic form in weighted coordinates.

    Either ``dense`` (full matrix) or a factored pair ``(functionals, coupling)``
    with O~ = F S F^dagger, F holding one weighted functional vector per column
    and S Hermitian.
    """

    grid: Grid
    dense: np.ndarray = None
    functionals: np.ndarray = None
    coupling: np.ndarray = None

    def __post_init__(self):
        n = self.grid.dof_count
        if self.dense is not None:
            if self.dense.shape != (n, n):
                raise OperatorError("dense form has wrong dimension")
        elif self.functionals is None or self.coupling is None:
            raise OperatorError("need either dense or factored representation")
        else:
            r = self.functionals.shape[1]
            if self.functionals.shape[0] != n or self.coupling.shape != (r, r):
                raise OperatorError("factored form has inconsistent shapes")
            if np.max(np.abs(self.coupling - self.coupling.conj().T)) > 1e-12:
                raise OperatorError("coupling matrix must be Hermitian")

    @property
    def is_factored(self):
        return self.dense is None

    @property
    def rank(self):
        return None if self.dense is not None else self.functionals.shape[1]

    def apply(self, v):
        if self.dense is not None:
            return self.dense @ v
        return self.functionals @ (self.coupling @ (self.functionals.conj().T @ v))

    def value(self, v):
        """Quadratic value <v|O|v> for a weighted coordinate vector."""
        q = np.vdot(v, self.apply(v))
        return float(q.real)

    def value_field(self, f):
        sw = np.sqrt(f.grid.dof_weights())
        return self.value(sw * f.flat())

    def to_dense(self):
        if self.dense is not None:
            return self.dense
        return self.functionals @ self.coupling @ self.functionals.conj().T


def symmetrize(grid, matrix):
    """Dense quadratic form from the Hermitian part of ``matrix``."""
    matrix = np.asarray(matrix)
    n = grid.dof_count
    if matrix.shape != (n, n):
        raise OperatorError(f"matrix shape {matrix.shape} does not match grid dof {n}")
    return QuadraticForm(grid, dense=0.5 * (matrix + matrix.conj().T))


def point_intensity_form(grid):
    """Rank-1 form <v|O|v> = |v(0)|^2 for scalar fields."""
    if grid.n_components != 1:
        raise OperatorError("point intensity requires a scalar grid")
    n = grid.dof_count
    i0 = grid.origin_index
    w0 = grid.weights[i0]
    # function-coordinate functional: 1/w0 at the origin; weighted: 1/sqrt(w0)
    f = np.zeros((n, 1))
    f[i0, 0] = 1.0 / np.sqrt(w0)
    S = np.ones((1, 1))
    return QuadraticForm(grid, functionals=f, coupling=S)


def helicity_form(grid):
    """Rank-6 form <v|O^S|v> = v(0) . curl_h v(0) with a central-difference curl."""
    if grid.dim != 3 or grid.n_components != 3 or grid.field_kind != REAL:
        raise OperatorError("helicity requires a real 3D grid with 3 components")
    for axis, n in enumerate(grid.points_per_axis):
        if n < 3:
            raise OperatorError("curl stencil out of domain")
    mid = [n // 2 for n in grid.points_per_axis]
    for axis in range(3):
        if mid[axis] == 0 or mid[axis] == grid.points_per_axis[axis] - 1:
            raise OperatorError("curl stencil out of domain")

    n = grid.dof_count
    sw = np.sqrt(grid.dof_weights())
    F = np.zeros((n, 6))
    i0 = grid.origin_index

    def dof(node, comp):
        return 3 * node + comp

    # a_mu: point evaluation of component mu at the origin
    for mu in range(3):
        F[dof(i0, mu), mu] = 1.0 / sw[dof(i0, mu)]

    # b_mu: central-difference curl component mu at the origin
    # (curl v)_mu = d_a v_b - d_b v_a  with (mu, a, b) cyclic
    cyclic = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    for mu, a, b in cyclic:
        col = 3 + mu
        ha = grid.spacing[a]
        hb = grid.spacing[b]
        for node, comp, coeff in [
            (grid.neighbor_index(a, +1), b, +1.0 / (2 * ha)),
            (grid.neighbor_index(a, -1), b, -1.0 / (2 * ha)),
            (grid.neighbor_index(b, +1), a, -1.0 / (2 * hb)),
            (grid.neighbor_index(b, -1), a, +1.0 / (2 * hb)),
        ]:
            d = dof(node, comp)
            F[d, col] += coeff / sw[d]

    S = np.zeros((6, 6))
    S[:3, 3:] = 0.5 * np.eye(3)
    S[3:, :3] = 0.5 * np.eye(3)
    return QuadraticForm(grid, functionals=F, coupling=S)


def discrete_curl_at_origin(field):
    """Second-order central-difference curl of a 3-vector field at the origin."""
    g = field.grid
    v = field.values
    out = np.zeros(3)
    cyclic = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    for mu, a, b in cyclic:
        ha, hb = g.spacing[a], g.spacing[b]
        dvb_da = (v[g.neighbor_index(a, +1), b] - v[g.neighbor_index(a, -1), b]) / (2 * ha)
        dva_db = (v[g.neighbor_index(b, +1), a] - v[g.neighbor_index(b, -1), a]) / (2 * hb)
        out[mu] = dvb_da - dva_db
    return out
