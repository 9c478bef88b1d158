"""Joint, marginal and conditional densities of a fixed model state.

Public functions take categorical codes 1-based (as in datasets) and
continuous values on the model's standardized scale. They accept a single
record (1-D ``x`` / ``y``) or a stack of records (2-D).
"""

import numpy as np

from .data import design_matrix
from .errors import DegenerateWeightsError
from .numerics import (batched_cholesky, component_means, logsumexp_matmul,
                       mvn_logpdf_prec, precision_and_logdet)


def _as_rows(a, width, dtype):
    a = np.asarray(a, dtype=dtype)
    single = a.ndim == 1
    a = a.reshape(-1, width)
    return a, single


def _check_codes(x1, state):
    d = np.array(state.design.levels)
    if np.any(x1 < 1) or np.any(x1 > d[None, :]):
        raise ValueError("categorical code out of range")
    return x1 - 1


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def log_class_probs(X0, state):
    """``log prod_j psi[s][j, x_j]`` for every record and class s, (n, Kx)."""
    out = np.zeros((X0.shape[0], state.trunc.Kx))
    for j, ps in enumerate(state.psi):
        out += _log(ps.T)[X0[:, j]]
    return out


def log_normal_components(D, Y, state, prec=None, logdet=None):
    """``log N(y_i; D_i B_h, Sigma_h)`` for every record and component, (n, Ky)."""
    if prec is None:
        prec, logdet = precision_and_logdet(state.Sigma)
    means = component_means(D, state.B)
    resid = Y[:, None, :] - means
    return mvn_logpdf_prec(resid, prec[None], logdet[None])


def _parts(X0, Y, state):
    logpx = log_class_probs(X0, state)
    D = design_matrix(X0, state.design)
    logny = log_normal_components(D, Y, state)
    # per top-level component z: log sum_h phi_y N  and  log sum_s phi_x P
    a_y = logsumexp_matmul(logny, state.phi_y.T)
    a_x = logsumexp_matmul(logpx, state.phi_x.T)
    return logpx, logny, a_y, a_x


def log_joint_rows(X0, Y, state):
    """Row-wise log f(x_i, y_i) for 0-based codes."""
    _, _, a_y, a_x = _parts(X0, Y, state)
    return logsumexp_matmul(a_y + a_x, state.lam)


def log_marginal_px_rows(X0, state):
    logpx = log_class_probs(X0, state)
    return logsumexp_matmul(logpx, state.lam @ state.phi_x)


def log_conditional_rows(X0, Y, state):
    logpx = log_class_probs(X0, state)
    D = design_matrix(X0, state.design)
    logny = log_normal_components(D, Y, state)
    a_x = logsumexp_matmul(logpx, state.phi_x.T)
    logw = logsumexp_matmul(a_x + state.log_lam[None, :], state.phi_y)
    m = logw.max(axis=1)
    if not np.all(np.isfinite(m)):
        raise DegenerateWeightsError("all Y-component weights are zero")
    num = logsumexp_matmul(logw + logny, np.ones(state.trunc.Ky))
    den = logsumexp_matmul(logw, np.ones(state.trunc.Ky))
    return num - den


def mixture_weights(x, state):
    """Normalised Y-component weights ``w_h(x) / sum_l w_l(x)``."""
    X1, single = _as_rows(x, state.p, np.int64)
    X0 = _check_codes(X1, state)
    a_x = logsumexp_matmul(log_class_probs(X0, state), state.phi_x.T)
    logw = logsumexp_matmul(a_x + state.log_lam[None, :], state.phi_y)
    m = logw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise DegenerateWeightsError("all Y-component weights are zero")
    w = np.exp(logw - m)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def marginal_px(x, state, log=False):
    """Pr(X = x) under the latent class form of the categorical margin."""
    X1, single = _as_rows(x, state.p, np.int64)
    out = log_marginal_px_rows(_check_codes(X1, state), state)
    out = out if log else np.exp(out)
    return out[0] if single else out


def conditional_y_given_x(y, x, state, log=False):
    """f(y | x): a weighted mixture of the component regressions."""
    X1, single = _as_rows(x, state.p, np.int64)
    Y, _ = _as_rows(y, state.q, float)
    out = log_conditional_rows(_check_codes(X1, state), Y, state)
    out = out if log else np.exp(out)
    return out[0] if single else out


def joint_density(x, y, state, log=False):
    """f(x, y) summed over top-level and both lower-level components."""
    X1, single = _as_rows(x, state.p, np.int64)
    Y, _ = _as_rows(y, state.q, float)
    out = log_joint_rows(_check_codes(X1, state), Y, state)
    out = out if log else np.exp(out)
    return out[0] if single else out


def conditional_mean_y(x, state):
    """E(Y | X = x) = sum_h weight_h(x) D(x) B_h."""
    X1, single = _as_rows(x, state.p, np.int64)
    w = mixture_weights(X1, state)
    D = design_matrix(X1 - 1, state.design)
    means = component_means(D, state.B)
    out = np.einsum("ih,ihq->iq", w, means)
    return out[0] if single else out


def _draw(probs, rng):
    c = np.cumsum(probs, axis=-1)
    u = rng.random((probs.shape[0], 1)) * c[:, -1:]
    return np.minimum((u >= c).sum(axis=-1), probs.shape[-1] - 1)


def sample_predictive(state, rng, size=None):
    """Draw ``(x, y)`` from the generative model (x 1-based).

    Returns single vectors when ``size`` is None, otherwise stacks of
    ``size`` records.
    """
    m = 1 if size is None else int(size)
    z = _draw(np.broadcast_to(state.lam, (m, state.trunc.Kz)), rng)
    hx = _draw(state.phi_x[z], rng)
    hy = _draw(state.phi_y[z], rng)
    X0 = np.empty((m, state.p), dtype=np.int64)
    for j, ps in enumerate(state.psi):
        X0[:, j] = _draw(ps[hx], rng)
    D = design_matrix(X0, state.design)
    mean = np.einsum("ik,ikq->iq", D, state.B[hy])
    L = batched_cholesky(state.Sigma, "component covariance")
    eps = rng.standard_normal((m, state.q))
    Y = mean + np.einsum("iab,ib->ia", L[hy], eps)
    X1 = X0 + 1
    if size is None:
        return X1[0], Y[0]
    return X1, Y
