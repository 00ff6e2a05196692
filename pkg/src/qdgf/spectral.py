"""Signed spectrum of the covariance-observable product operator.

The central object is the compact Hermitian operator obtained by sandwiching a
quadratic form between covariance square roots.  Its eigenpairs are computed in
the coordinates of the kept covariance modes, which restricts the operator to
the range of the covariance square root; the nonzero spectrum is unchanged and
every sampled field lives in that range anyway.

The spectrum of the (non-symmetric) covariance-times-form product restricted to
the same range coincides with this spectrum, eigenvectors mapped through the
covariance square root; the package verifies the identity numerically and uses
it for the low-rank fast path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import COMPLEX

# relative threshold below which an eigenvalue of the product operator counts
# as a numerical zero
LAMBDA_ZERO_REL = 1e-12
DEFAULT_CLUSTER_TOL = 1e-6
# Jacobi is quadratically convergent but each rotation is a Python-level step;
# larger problems go to LAPACK
JACOBI_MAX_DIM = 100


class SpectralError(ValueError):
    pass


# ---------------------------------------------------------------------------
# dense symmetric eigensolver


def eigendecompose_symmetric(matrix, tol=1e-12, max_sweeps=30):
    """Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvectors as columns).  Complex
    Hermitian input is handled through the real embedding [[A, -B], [B, A]],
    whose doubled spectrum is de-duplicated by pairing each eigenvector with
    its i-rotated partner.
    """
    A = np.asarray(matrix)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SpectralError("matrix must be square")
    scale = max(np.max(np.abs(A)), 1e-300)
    if np.max(np.abs(A - A.conj().T)) > 1e-10 * scale:
        raise SpectralError("matrix is not Hermitian")

    if np.iscomplexobj(A):
        return _eig_complex_embedding(A, tol, max_sweeps)

    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    B = A.astype(float).copy()
    off0 = np.sqrt(np.sum(np.square(B)) - np.sum(np.square(np.diag(B))))
    if off0 == 0.0:
        order = np.argsort(np.diag(B))[::-1]
        return np.diag(B)[order], V[:, order]
    target = max(tol * off0, 1e-300)
    for _ in range(max_sweeps):
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = B[p, q]
                if abs(apq) == 0.0:
                    continue
                theta = 0.5 * (B[q, q] - B[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rp, rq = B[p, :].copy(), B[q, :].copy()
                B[p, :] = c * rp - s * rq
                B[q, :] = s * rp + c * rq
                cp, cq = B[:, p].copy(), B[:, q].copy()
                B[:, p] = c * cp - s * cq
                B[:, q] = s * cp + c * cq
                B[p, q] = B[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        off = np.sqrt(max(np.sum(np.square(B)) - np.sum(np.square(np.diag(B))), 0.0))
        if off <= target:
            break
    else:
        raise SpectralError(
            f"Jacobi sweeps did not converge: off-diagonal residual {off:.3e}")
    vals = np.diag(B).copy()
    order = np.argsort(vals)[::-1]
    return vals[order], _fix_phases(V[:, order])


def _eig_complex_embedding(A, tol, max_sweeps):
    n = A.shape[0]
    Ar, Ai = A.real, A.imag
    M = np.block([[Ar, -Ai], [Ai, Ar]])
    vals, vecs = eigendecompose_symmetric(M, tol=tol, max_sweeps=max_sweeps)
    # spectrum is doubled; each eigenvalue carries a pair (v, i*v).  Walk the
    # sorted list and keep one complex vector per pair, dropping the partner
    # found by eigenvalue proximity + the i-rotation map.
    kept_vals, kept_vecs, used = [], [], np.zeros(2 * n, bool)
    for k in range(2 * n):
        if used[k]:
            continue
        used[k] = True
        v = vecs[:n, k] + 1j * vecs[n:, k]
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            v = -vecs[n:, k] + 1j * vecs[:n, k]
            nv = np.linalg.norm(v)
        v = v / nv
        # locate and retire the i-rotated partner
        partner = np.concatenate([-v.imag, v.real])
        best, best_ov = None, 0.0
        for j in range(k + 1, 2 * n):
            if used[j] or abs(vals[j] - vals[k]) > 1e-8 * max(abs(vals[k]), 1.0) + 1e-12:
                continue
            ov = abs(np.dot(partner, vecs[:, j]))
            if ov > best_ov:
                best, best_ov = j, ov
        if best is not None:
            used[best] = True
        kept_vals.append(vals[k])
        kept_vecs.append(v)
    kept_vals = np.array(kept_vals)
    W = np.stack(kept_vecs, axis=1)
    # re-orthonormalize within closely spaced clusters
    W, _ = np.linalg.qr(W)
    order = np.argsort(kept_vals)[::-1]
    return kept_vals[order], _fix_phases(W[:, order])


def _fix_phases(V):
    """Make the largest-magnitude component of each column real-positive."""
    V = np.array(V, copy=True)
    idx = np.argmax(np.abs(V), axis=0)
    lead = V[idx, np.arange(V.shape[1])]
    phase = np.where(np.abs(lead) > 0, lead / np.maximum(np.abs(lead), 1e-300), 1.0)
    return V / phase


def _eigh_backend(A):
    """Jacobi for small problems, LAPACK beyond; descending eigenvalues."""
    if A.shape[0] <= JACOBI_MAX_DIM:
        return eigendecompose_symmetric(A)
    vals, vecs = np.linalg.eigh(A)
    return vals[::-1], _fix_phases(vecs[:, ::-1])


# ---------------------------------------------------------------------------
# signed spectrum


@dataclass(frozen=True)
class SignedSpectrum:
    """Eigenstructure of the sandwiched form operator in kept-mode coordinates.

    ``values`` holds the nonzero eigenvalues and ``vectors`` the matching
    orthonormal eigenvectors (columns) expressed in the kept covariance mode
    basis of ``cov``; the remaining ``zero_dim`` directions form the kernel.
    """

    cov: object
    values: np.ndarray
    vectors: np.ndarray
    zero_dim: int
    g_pos: int
    g_neg: int
    cluster_tol: float

    @property
    def positive(self):
        """Positive eigenvalues, descending."""
        v = self.values[self.values > 0]
        return np.sort(v)[::-1]

    @property
    def negative(self):
        """Negative eigenvalues, ascending (most negative first)."""
        v = self.values[self.values < 0]
        return np.sort(v)

    @property
    def trace_abs(self):
        return float(np.sum(np.abs(self.values)))

    @property
    def trace_signed(self):
        return float(np.sum(self.values))

    def branch(self, sign):
        """(eigenvalues, vectors) of one branch ordered from the extreme end."""
        if sign > 0:
            mask = self.values > 0
            order = np.argsort(self.values[mask])[::-1]
        else:
            mask = self.values < 0
            order = np.argsort(self.values[mask])
        vals = self.values[mask][order]
        vecs = self.vectors[:, mask][:, order]
        return vals, vecs

    def degeneracy(self, sign):
        return self.g_pos if sign > 0 else self.g_neg

    @property
    def mode_count(self):
        """Dimension of the kept covariance mode space."""
        return self.cov.kept_rank


def _cluster_count(vals, tol):
    """Multiplicity of the leading entry under relative gap clustering."""
    if len(vals) == 0:
        return 0
    lead = abs(vals[0])
    return int(np.sum(np.abs(np.abs(vals) - lead) <= tol * lead))


def _restricted_matrix(cov, form):
    """The form operator sandwiched between covariance square roots, in
    kept-mode coordinates."""
    sqrt_mu = np.sqrt(cov.mu)
    if form.is_factored:
        B = (form.functionals.conj().T @ cov.modes) * sqrt_mu[None, :]
        return B.conj().T @ form.coupling @ B
    T = cov.modes * sqrt_mu[None, :]
    return T.conj().T @ form.dense @ T


def build_m_spectrum(cov, form, cluster_tol=DEFAULT_CLUSTER_TOL, method="auto"):
    """Signed spectrum of the covariance-sandwiched quadratic form.

    ``method`` is "dense", "lowrank", or "auto" (factored path whenever the
    form carries a factored representation).
    """
    if method not in ("auto", "dense", "lowrank"):
        raise SpectralError(f"unknown method {method!r}")
    use_lowrank = form.is_factored and method != "dense"
    if method == "lowrank" and not form.is_factored:
        raise SpectralError("lowrank method requires a factored form")

    if use_lowrank:
        spec = _spectrum_lowrank(cov, form, cluster_tol)
    else:
        M = _restricted_matrix(cov, form)
        vals, vecs = _eigh_backend(M)
        lead = np.max(np.abs(vals)) if len(vals) else 0.0
        if lead == 0.0:
            raise SpectralError("degenerate observable: sandwiched operator vanishes")
        nz = np.abs(vals) > LAMBDA_ZERO_REL * lead
        spec = SignedSpectrum(
            cov, np.ascontiguousarray(vals[nz]), np.ascontiguousarray(vecs[:, nz]),
            int(np.sum(~nz)),
            _cluster_count(np.sort(vals[vals > 0])[::-1], cluster_tol),
            _cluster_count(np.sort(vals[vals < 0]), cluster_tol),
            cluster_tol)
    if len(spec.values) == 0:
        raise SpectralError("degenerate observable: no nonzero eigenvalue")
    return spec


def _spectrum_lowrank(cov, form, cluster_tol):
    """Nonzero spectrum via the small functional-subspace eigenproblem.

    All nonzero eigenvectors of the sandwiched operator lie in the span of
    the sqrt-scaled functional vectors, so it suffices to diagonalize the
    operator projected onto that (at most rank-r) subspace.
    """
    F, S = form.functionals, form.coupling
    r = F.shape[1]
    if r > cov.kept_rank:
        M = _restricted_matrix(cov, form)
        vals, vecs = _eigh_backend(M)
    else:
        sqrt_mu = np.sqrt(cov.mu)
        B = (F.conj().T @ cov.modes) * sqrt_mu[None, :]  # (r, K)
        P, _ = np.linalg.qr(B.conj().T)  # orthonormal basis of the active span
        Msmall = (B @ P).conj().T @ (S @ (B @ P))
        w, Z = _eigh_backend(0.5 * (Msmall + Msmall.conj().T))
        vals = w
        vecs = _fix_phases(P @ Z)
    lead = np.max(np.abs(vals)) if len(vals) else 0.0
    if lead == 0.0:
        raise SpectralError("degenerate observable: sandwiched operator vanishes")
    nz = np.abs(vals) > LAMBDA_ZERO_REL * lead
    zero_dim = cov.kept_rank - int(np.sum(nz))
    vals, vecs = vals[nz], vecs[:, nz]
    return SignedSpectrum(
        cov, np.ascontiguousarray(vals), np.ascontiguousarray(vecs),
        zero_dim,
        _cluster_count(np.sort(vals[vals > 0])[::-1], cluster_tol),
        _cluster_count(np.sort(vals[vals < 0]), cluster_tol),
        cluster_tol)


def low_rank_spectrum(cov, form, cluster_tol=DEFAULT_CLUSTER_TOL):
    """Low-rank fast path; falls back to the dense path when rank >= dimension."""
    if not form.is_factored:
        raise SpectralError("low_rank_spectrum requires a factored form")
    return build_m_spectrum(cov, form, cluster_tol=cluster_tol, method="lowrank")


def restricted_co_spectrum(cov, form, residual_tol=1e-8):
    """Nonzero eigenpairs of the covariance-times-form product on the range of
    the covariance square root.

    Eigenvalues are shared with the sandwiched operator; eigenvectors are the
    covariance square root images.  Each pair is verified against the product
    operator directly; a failed residual signals an assembly bug.
    """
    spec = build_m_spectrum(cov, form)
    return co_eigenpairs(spec, form, residual_tol=residual_tol), spec


def co_eigenpairs(spec, form, residual_tol=1e-8):
    """Map a signed spectrum to product-operator eigenpairs and verify them."""
    cov = spec.cov
    sqrt_mu = np.sqrt(cov.mu)
    lam_max = np.max(np.abs(spec.values))
    pairs = []
    betas = cov.modes @ (sqrt_mu[:, None] * spec.vectors)
    resid_bound_failed = []
    for k, lam in enumerate(spec.values):
        beta = betas[:, k]
        resid = np.linalg.norm(cov.weighted @ form.apply(beta) - lam * beta)
        if resid > residual_tol * lam_max * np.linalg.norm(beta):
            resid_bound_failed.append((lam, resid))
        pairs.append((float(lam), beta))
    if resid_bound_failed:
        lam, resid = resid_bound_failed[0]
        raise SpectralError(
            "product-operator eigenpair verification failed "
            f"(lambda={lam:.6e}, residual={resid:.3e}): assembly bug")
    return pairs


# ---------------------------------------------------------------------------
# fundamental basis


@dataclass(frozen=True)
class FundamentalBasis:
    """Covariance square root images of the leading eigenvectors of one branch.

    ``mode_coeffs`` holds the leading eigenvectors in kept covariance mode
    coordinates (columns); ``weighted`` the same vectors mapped through the
    covariance square root into weighted coordinates, spanning the profile the
    conditioned field collapses onto.
    """

    sign: int
    mode_coeffs: np.ndarray
    weighted: np.ndarray
    gram: np.ndarray

    @property
    def degeneracy(self):
        return self.mode_coeffs.shape[1]


def fundamental_basis(spec, sign):
    """Build the fundamental profile basis for the requested sign branch."""
    sign = 1 if sign > 0 else -1
    vals, vecs = spec.branch(sign)
    g = spec.degeneracy(sign)
    if len(vals) == 0 or g == 0:
        raise SpectralError("no fundamental eigenspace for this sign")
    lead = vecs[:, :g]
    cov = spec.cov
    weighted = cov.modes @ (np.sqrt(cov.mu)[:, None] * lead)
    gram = weighted.conj().T @ weighted
    if np.min(np.linalg.eigvalsh(0.5 * (gram + gram.conj().T))) <= 0:
        raise SpectralError("fundamental basis Gram matrix is not positive definite")
    return FundamentalBasis(sign, np.ascontiguousarray(lead),
                            np.ascontiguousarray(weighted), gram)
