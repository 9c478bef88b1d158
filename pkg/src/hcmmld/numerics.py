"""Small numerical kernels shared by the sampler and the density code.

All routines are vectorised over a leading batch axis so the Gibbs updates
can process every record (or every mixture component) in one call.
"""

import numpy as np

from .errors import DegenerateWeightsError, SamplerError

LOG_FLOOR = np.log(1e-300)
_LOG_2PI = np.log(2.0 * np.pi)


def normalize_log(logw):
    """Turn unnormalised log weights (last axis) into probabilities.

    Uses max-subtraction, so rows whose weights underflow in natural scale
    are still handled. Raises :class:`DegenerateWeightsError` when a row has
    no finite entry.
    """
    logw = np.asarray(logw, dtype=float)
    m = logw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise DegenerateWeightsError("all categorical weights are zero")
    p = np.exp(logw - m)
    p /= p.sum(axis=-1, keepdims=True)
    return p


def sample_categorical(logw, rng):
    """Draw one 0-based index per row of unnormalised log weights."""
    logw = np.asarray(logw, dtype=float)
    m = logw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise DegenerateWeightsError("all categorical weights are zero")
    c = np.cumsum(np.exp(logw - m), axis=-1)
    u = rng.random(logw.shape[:-1] + (1,)) * c[..., -1:]
    idx = (u >= c).sum(axis=-1)
    # guards the u == total rounding corner
    return np.minimum(idx, logw.shape[-1] - 1)


def logsumexp_matmul(loga, b):
    """``log(exp(loga) @ b)`` for nonnegative ``b`` without overflow."""
    m = loga.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(loga - m) @ b)
    return out + (m if np.ndim(b) == 2 else m[..., 0])


def safe_log(x):
    """Elementwise log with the engine's floor for zero / underflowed mass."""
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(x), LOG_FLOOR)


def safe_cholesky(a, what="matrix", component=None):
    """Lower Cholesky factor with escalating diagonal jitter.

    Jitter runs from 1e-10 to 1e-6 of ``trace(a)/q``; failure after that is a
    :class:`SamplerError`.
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    q = a.shape[-1]
    scale = max(np.trace(a) / q, np.finfo(float).tiny)
    for rel in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            return np.linalg.cholesky(a + rel * scale * np.eye(q))
        except np.linalg.LinAlgError:
            continue
    raise SamplerError(f"{what} is not symmetric positive definite", component)


def batched_cholesky(a, what="matrix"):
    """Cholesky over a stack of matrices, falling back to jitter per slice."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return np.stack([safe_cholesky(a[k], what, k) for k in range(a.shape[0])])


def mvn_logpdf_prec(resid, prec, logdet):
    """Gaussian log density from residuals, precision matrices and log|cov|.

    ``resid`` has shape (..., q); ``prec`` and ``logdet`` broadcast against
    its leading axes.
    """
    q = resid.shape[-1]
    if q > 8:
        quad = np.einsum("...i,...ij,...j->...", resid, prec, resid)
    else:
        # explicit upper-triangle sum: far faster than einsum for tiny q
        quad = 0.0
        for a in range(q):
            ra = resid[..., a]
            quad = quad + prec[..., a, a] * ra * ra
            for b in range(a + 1, q):
                quad = quad + 2.0 * prec[..., a, b] * ra * resid[..., b]
    return -0.5 * (q * _LOG_2PI + logdet + quad)


def component_means(D, B):
    """``D_i B_h`` for every record and component, shape (n, K, q)."""
    K, ps, q = B.shape
    flat = D @ np.transpose(B, (1, 0, 2)).reshape(ps, K * q)
    return flat.reshape(D.shape[0], K, q)


def fitted_means(D, B, labels):
    """``D_i B_{labels_i}`` for each record, shape (n, q)."""
    return np.einsum("ip,ipq->iq", D, B[labels])


def precision_and_logdet(cov):
    """Inverse and log-determinant of a stack of SPD matrices."""
    L = batched_cholesky(cov, "covariance")
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    eye = np.broadcast_to(np.eye(cov.shape[-1]), cov.shape)
    Linv = np.linalg.solve(L, eye)
    prec = np.swapaxes(Linv, -1, -2) @ Linv
    return prec, logdet


def sample_wishart(df, scale, rng):
    """Bartlett-decomposition Wishart draws.

    Parameters
    ----------
    df : float or array of shape (k,)
        Degrees of freedom, each greater than q - 1.
    scale : array of shape (k, q, q)
        SPD scale matrices (density ``exp(-tr(scale^-1 W)/2)`` convention).
    """
    scale = np.asarray(scale, dtype=float)
    k, q, _ = scale.shape
    df = np.broadcast_to(np.asarray(df, dtype=float), (k,))
    L = batched_cholesky(scale, "Wishart scale")
    A = np.zeros((k, q, q))
    diag = np.arange(q)
    A[:, diag, diag] = np.sqrt(rng.chisquare(df[:, None] - diag[None, :]))
    lo = np.tril_indices(q, -1)
    A[:, lo[0], lo[1]] = rng.standard_normal((k, len(lo[0])))
    LA = L @ A
    return LA @ np.swapaxes(LA, -1, -2)


def sample_invwishart(df, scale, rng):
    """Inverse-Wishart draws, ``IW(df, scale)`` with mean ``scale/(df-q-1)``."""
    scale = np.asarray(scale, dtype=float)
    prec_scale, _ = precision_and_logdet(scale)
    W = sample_wishart(df, prec_scale, rng)
    out = np.linalg.inv(W)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def sample_dirichlet_rows(alpha, rng):
    """Independent Dirichlet draws for each row of ``alpha``.

    Small shape parameters are handled on the log scale
    (``G(a) = G(a+1) U^(1/a)``) so rows never collapse to all-zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    logg = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.shape)) / alpha
    logg -= logg.max(axis=-1, keepdims=True)
    g = np.exp(logg)
    return g / g.sum(axis=-1, keepdims=True)
