"""Blocked Gibbs sampler for the truncated hierarchically coupled mixture.

Every ``update_*`` function mutates ``state`` in place and returns it. All
per-record work is vectorised; randomness comes from the single generator
passed in, so a chain is reproducible from its seed.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .density import log_joint_rows
from .errors import SamplerError
from .numerics import (LOG_FLOOR, batched_cholesky, component_means, fitted_means,
                       mvn_logpdf_prec, precision_and_logdet, sample_categorical,
                       sample_dirichlet_rows, sample_invwishart, sample_wishart)
from .state import draw_log_sticks


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _group_sum(values, labels, K):
    """Sum rows of ``values`` by integer label into a (K, ...) array."""
    out = np.zeros((K,) + values.shape[1:])
    if values.shape[0] == 0:
        return out
    order = np.argsort(labels, kind="stable")
    sl = labels[order]
    starts = np.flatnonzero(np.r_[True, sl[1:] != sl[:-1]])
    out[sl[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def _group_gram(D, labels, K):
    """Per-label Gram matrices ``D_h' D_h`` without forming n outer products."""
    ps = D.shape[1]
    out = np.zeros((K, ps, ps))
    order = np.argsort(labels, kind="stable")
    Ds = D[order]
    bounds = np.searchsorted(labels[order], np.arange(K + 1))
    for h in np.flatnonzero(np.diff(bounds)):
        blk = Ds[bounds[h]:bounds[h + 1]]
        out[h] = blk.T @ blk
    return out


def stick_counts(state):
    """Tallies behind the stick updates.

    Returns ``m`` (Kz,) records per top-level component and ``t_x`` (Kz, Kx),
    ``t_y`` (Kz, Ky) joint counts of ``(Z, Hx)`` and ``(Z, Hy)``.
    """
    Kz, Kx, Ky = state.trunc.Kz, state.trunc.Kx, state.trunc.Ky
    m = np.bincount(state.Z, minlength=Kz)
    t_x = np.bincount(state.Z * Kx + state.Hx, minlength=Kz * Kx).reshape(Kz, Kx)
    t_y = np.bincount(state.Z * Ky + state.Hy, minlength=Kz * Ky).reshape(Kz, Ky)
    return m, t_x, t_y


def update_Z(state, rng):
    """Top-level index: Pr(Z_i = z) proportional to lam_z phi_x[z, Hx_i] phi_y[z, Hy_i]."""
    logw = (state.log_lam[None, :]
            + state.log_phi_x.T[state.Hx]
            + state.log_phi_y.T[state.Hy])
    state.Z = sample_categorical(logw, rng)
    return state


def update_X_missing(state, dataset, rng):
    """Redraw each missing categorical cell given everything else.

    Cells are visited one variable at a time; each candidate level is
    weighted by ``psi`` and by the Gaussian density of the record's full
    continuous vector at the candidate design row.
    """
    miss = dataset.Rx
    if not miss.any():
        return state
    prec, logdet = precision_and_logdet(state.Sigma)
    design = state.design
    for j in range(state.p):
        rows = np.flatnonzero(miss[:, j])
        if rows.size == 0:
            continue
        dj = design.levels[j]
        off = design.offsets[j]
        hy = state.Hy[rows]
        Bh = state.B[hy]
        Dbase = state.D[rows].copy()
        Dbase[:, off:off + dj - 1] = 0.0
        base = np.einsum("ik,ikq->iq", Dbase, Bh)
        y = state.Y[rows]
        P, ld = prec[hy], logdet[hy]
        logw = _log(state.psi[j])[state.Hx[rows]]
        for c in range(dj):
            mean = base if c == 0 else base + Bh[:, off + c - 1, :]
            logw[:, c] += mvn_logpdf_prec(y - mean, P, ld)
        new = sample_categorical(logw, rng)
        state.X[rows, j] = new
        Dbase[np.flatnonzero(new > 0), off + new[new > 0] - 1] = 1.0
        state.D[rows] = Dbase
    return state


def update_Hx(state, dataset, rng):
    """Categorical-side index given Z and the completed codes."""
    logw = state.log_phi_x[state.Z]
    for j, ps in enumerate(state.psi):
        logw += _log(ps.T)[state.X[:, j]]
    state.Hx = sample_categorical(logw, rng)
    return state


def conditional_gaussian(mean, cov, obs, y_obs):
    """Mean and covariance of the missing block given the observed block.

    ``mean`` (q,), ``cov`` (q, q), boolean ``obs`` (q,), ``y_obs`` (o,).
    """
    mis = ~obs
    S_oo = cov[np.ix_(obs, obs)]
    S_mo = cov[np.ix_(mis, obs)]
    A = np.linalg.solve(S_oo, S_mo.T).T
    cmean = mean[mis] + A @ (y_obs - mean[obs])
    ccov = cov[np.ix_(mis, mis)] - A @ S_mo.T
    return cmean, ccov


def update_Hy_and_Y_missing(state, dataset, rng):
    """Joint move on the continuous-side index and missing continuous values.

    ``Hy`` is drawn with the missing coordinates integrated out (observed-
    coordinate marginal), then the missing coordinates from the exact
    conditional Gaussian of the chosen component.
    """
    Ky = state.trunc.Ky
    q = state.q
    logphi = state.log_phi_y[state.Z]
    means = component_means(state.D, state.B)
    patterns, inv = np.unique(dataset.Ry, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    for k, pat in enumerate(patterns):
        rows = np.flatnonzero(inv == k)
        obs = ~pat
        mu = means[rows]
        if obs.all():
            prec, logdet = precision_and_logdet(state.Sigma)
            resid = state.Y[rows][:, None, :] - mu
            logw = logphi[rows] + mvn_logpdf_prec(resid, prec[None], logdet[None])
            state.Hy[rows] = sample_categorical(logw, rng)
            continue
        if not obs.any():
            h = sample_categorical(logphi[rows], rng)
            state.Hy[rows] = h
            L = batched_cholesky(state.Sigma, "component covariance")
            eps = rng.standard_normal((rows.size, q))
            state.Y[rows] = mu[np.arange(rows.size), h] + np.einsum("iab,ib->ia", L[h], eps)
            continue
        mis = pat
        S_oo = state.Sigma[:, obs][:, :, obs]
        S_mo = state.Sigma[:, mis][:, :, obs]
        S_mm = state.Sigma[:, mis][:, :, mis]
        prec_o, logdet_o = precision_and_logdet(S_oo)
        y_obs = state.Y[rows][:, obs]
        resid_o = y_obs[:, None, :] - mu[:, :, obs]
        logw = logphi[rows] + mvn_logpdf_prec(resid_o, prec_o[None], logdet_o[None])
        h = sample_categorical(logw, rng)
        state.Hy[rows] = h
        A = S_mo @ prec_o
        C = S_mm - A @ np.swapaxes(S_mo, -1, -2)
        C = 0.5 * (C + np.swapaxes(C, -1, -2))
        Lc = batched_cholesky(C, "conditional covariance")
        sel = np.arange(rows.size)
        cmean = mu[sel, h][:, mis] + np.einsum("iab,ib->ia", A[h], resid_o[sel, h])
        eps = rng.standard_normal((rows.size, int(mis.sum())))
        ymis = cmean + np.einsum("iab,ib->ia", Lc[h], eps)
        block = state.Y[rows]
        block[:, mis] = ymis
        state.Y[rows] = block
    return state


def psi_params(state, j):
    """Dirichlet parameters ``gamma_j + level counts`` for every class, (Kx, d_j)."""
    Kx = state.trunc.Kx
    dj = state.design.levels[j]
    counts = np.bincount(state.Hx * dj + state.X[:, j], minlength=Kx * dj).reshape(Kx, dj)
    return state.prior.gamma[j][None, :] + counts


def update_psi(state, dataset, rng):
    """Conjugate Dirichlet draws of the within-class level probabilities."""
    for j in range(state.p):
        state.psi[j] = sample_dirichlet_rows(psi_params(state, j), rng)
    return state


def update_B(state, dataset, rng):
    """Column-by-column draws of each component's regression matrix.

    Column v of B_h is conditioned on the other columns through the
    conditional law of Y_v given Y_{-v} under Sigma_h. Components with no
    records draw from the prior N(B0[:, v], I / tau_v).
    """
    Ky, q = state.trunc.Ky, state.q
    ps = state.design.p_star
    D, Y, Hy = state.D, state.Y, state.Hy
    prec, _ = precision_and_logdet(state.Sigma)
    DtD = _group_gram(D, Hy, Ky)
    eye = np.eye(ps)
    for v in range(q):
        others = np.arange(q) != v
        P_vv = prec[:, v, v]
        s2 = 1.0 / P_vv
        if q > 1:
            fitted = fitted_means(D, state.B[:, :, others], Hy)
            resid_other = Y[:, others] - fitted
            coef = -prec[Hy][:, others, v] / P_vv[Hy][:, None]
            mu_tilde = (resid_other * coef).sum(axis=1)
        else:
            mu_tilde = np.zeros(Y.shape[0])
        ytil = Y[:, v] - mu_tilde
        Dty = np.stack([np.bincount(Hy, D[:, k] * ytil, minlength=Ky) for k in range(ps)], axis=1)
        tau_v = state.tau[v]
        Q = tau_v * eye[None] + DtD / s2[:, None, None]
        b = tau_v * state.B0[None, :, v] + Dty / s2[:, None]
        try:
            L = np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise SamplerError("singular posterior precision for regression column") from None
        z = rng.standard_normal((Ky, ps))
        Lt = np.swapaxes(L, -1, -2)
        mean = np.linalg.solve(Q, b[..., None])[..., 0]
        state.B[:, :, v] = mean + np.linalg.solve(Lt, z[..., None])[..., 0]
    return state


def residual_crossproducts(state):
    """``S_h = sum_{i: Hy_i = h} r_i r_i'`` with ``r_i = y_i - D_i B_h``."""
    r = state.Y - fitted_means(state.D, state.B, state.Hy)
    return _group_sum(r[:, :, None] * r[:, None, :], state.Hy, state.trunc.Ky)


def sigma_params(state):
    """Inverse-Wishart df ``v + n_h`` and scale ``SigmaH + S_h`` per component."""
    n_h = np.bincount(state.Hy, minlength=state.trunc.Ky)
    return state.prior.v + n_h, state.SigmaH[None] + residual_crossproducts(state)


def update_Sigma_components(state, dataset, rng):
    """Inverse-Wishart draws IW(v + n_h, SigmaH + S_h)."""
    df, scale = sigma_params(state)
    state.Sigma = sample_invwishart(df, scale, rng)
    return state


def b0_conditional(B, tau, sigma2_0beta):
    """Normal mean and variance of every ``B0[j, v]`` given the ``B_h``, each (p*, q)."""
    Ky = B.shape[0]
    prec0 = Ky * tau + 1.0 / sigma2_0beta
    mean = tau * B.sum(axis=0) / prec0
    return mean, np.broadcast_to(1.0 / prec0, mean.shape)


def tau_conditional(B, B0, prior):
    """Gamma shape and rate of each ``tau_v``: ``a + Ky p*/2`` and ``b + SS_v/2``."""
    Ky, ps, _ = B.shape
    ss = ((B - B0[None]) ** 2).sum(axis=(0, 1))
    return prior.tau_a + 0.5 * Ky * ps, prior.tau_b + 0.5 * ss


def sigmaH_conditional(Sigma, prior):
    """Wishart df ``w + Ky v`` and scale ``(Sigma0^-1 + sum_h Sigma_h^-1)^-1``."""
    prec_h, _ = precision_and_logdet(Sigma)
    scale = np.linalg.inv(np.linalg.inv(prior.Sigma0) + prec_h.sum(axis=0))
    return prior.w + Sigma.shape[0] * prior.v, 0.5 * (scale + scale.T)


def update_hyper_B0_tau_Sigma(state, rng):
    """Hyperparameters of the component regressions and covariances.

    ``B0`` entrywise normal, ``tau_v`` gamma (shape/rate conjugate to the
    ``G(tau_a, tau_b)`` prior), ``SigmaH`` Wishart.
    """
    pr = state.prior
    ps, q = state.design.p_star, state.q
    mean, var = b0_conditional(state.B, state.tau, pr.sigma2_0beta)
    state.B0 = mean + rng.standard_normal((ps, q)) * np.sqrt(var)

    shape, rate = tau_conditional(state.B, state.B0, pr)
    if np.any(rate <= 0):
        raise SamplerError("non-positive gamma rate in tau update")
    state.tau = rng.gamma(shape, 1.0 / rate)

    df, scale = sigmaH_conditional(state.Sigma, pr)
    state.SigmaH = sample_wishart(df, scale[None], rng)[0]
    return state


def stick_params(counts, concentration):
    """Beta parameters of the free sticks from per-component counts.

    ``counts`` has components on its last axis; returns ``(a, b)`` with
    ``a = 1 + m_k`` and ``b = concentration + sum_{l>k} m_l`` for all but
    the last (pinned) stick.
    """
    counts = np.asarray(counts, dtype=float)
    tail = counts.sum(axis=-1, keepdims=True) - np.cumsum(counts, axis=-1)
    a, b = 1.0 + counts[..., :-1], concentration + tail[..., :-1]
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise SamplerError("non-positive Beta parameter in stick update (count bookkeeping)")
    return a, b


def update_sticks(state, rng):
    """Conjugate Beta updates of the top- and lower-level stick proportions."""
    m, t_x, t_y = stick_counts(state)
    for level, counts, conc in (("z", m, state.alpha), ("x", t_x, state.beta_x),
                                ("y", t_y, state.beta_y)):
        lv = np.full(counts.shape, -np.inf)
        if counts.shape[-1] > 1:
            a, b = stick_params(counts, conc)
            lv[..., :-1] = draw_log_sticks(a, b, rng)
        state.set_sticks(level, lv)
    return state


def _last_log_weight(lv):
    """log of the final stick-broken weight, ``sum_{l<K} log(1 - xi_l)``, floored."""
    if lv.shape[-1] == 1:
        return np.zeros(lv.shape[:-1])
    return np.maximum(lv[..., :-1].sum(axis=-1), LOG_FLOOR)


def concentration_conditional(lv, a, b):
    """Gamma shape and rate for a concentration given its sticks.

    ``lv`` holds ``log(1 - xi)``; a 2-D array contributes one row per
    (occupied) top-level component.
    """
    lv = np.atleast_2d(lv)
    rows, K = lv.shape
    rate = b - _last_log_weight(lv).sum()
    if not rate > 0:
        raise SamplerError("non-positive gamma rate in concentration update")
    return a + rows * (K - 1), rate


def update_concentrations(state, rng):
    """Gamma draws of alpha, beta_x, beta_y.

    The lower-level concentrations use only occupied top-level components;
    the sticks of unoccupied components are then refreshed from their prior
    under the new value, which keeps the move an exact blocked update.
    """
    pr = state.prior
    Kz, Kx, Ky = state.trunc.Kz, state.trunc.Kx, state.trunc.Ky
    shape, rate = concentration_conditional(state.lv_z, pr.alpha_a, pr.alpha_b)
    state.alpha = rng.gamma(shape, 1.0 / rate)

    occ = np.bincount(state.Z, minlength=Kz) > 0
    shape, rate = concentration_conditional(state.lv_x[occ], pr.beta_x_a, pr.beta_x_b)
    state.beta_x = rng.gamma(shape, 1.0 / rate)
    shape, rate = concentration_conditional(state.lv_y[occ], pr.beta_y_a, pr.beta_y_b)
    state.beta_y = rng.gamma(shape, 1.0 / rate)

    empty = np.flatnonzero(~occ)
    if empty.size:
        for level, K, beta in (("x", Kx, state.beta_x), ("y", Ky, state.beta_y)):
            if K > 1:
                lv = getattr(state, "lv_" + level).copy()
                lv[empty, :-1] = draw_log_sticks(1.0, np.full((empty.size, K - 1), beta), rng)
                state.set_sticks(level, lv)
    return state


@dataclass
class SweepStats:
    """Per-sweep bookkeeping: wall time per update, moved indices, log density."""

    times: dict = field(default_factory=dict)
    moves: dict = field(default_factory=dict)
    log_joint: float = float("nan")


def completed_log_joint(state):
    """Sum over records of log f(x_i, y_i) at the current completed data."""
    return float(log_joint_rows(state.X, state.Y, state).sum())


def gibbs_sweep(state, dataset, rng, compute_log_joint=True):
    """One fixed-scan pass over every full conditional."""
    stats = SweepStats()
    old = (state.Z.copy(), state.Hx.copy(), state.Hy.copy())
    steps = (
        ("Z", lambda: update_Z(state, rng)),
        ("X_missing", lambda: update_X_missing(state, dataset, rng)),
        ("Hx", lambda: update_Hx(state, dataset, rng)),
        ("Hy_Y_missing", lambda: update_Hy_and_Y_missing(state, dataset, rng)),
        ("psi", lambda: update_psi(state, dataset, rng)),
        ("B", lambda: update_B(state, dataset, rng)),
        ("Sigma", lambda: update_Sigma_components(state, dataset, rng)),
        ("hyper", lambda: update_hyper_B0_tau_Sigma(state, rng)),
        ("sticks", lambda: update_sticks(state, rng)),
        ("concentrations", lambda: update_concentrations(state, rng)),
    )
    for name, step in steps:
        t0 = time.perf_counter()
        step()
        stats.times[name] = time.perf_counter() - t0
    stats.moves = {
        "Z": int((state.Z != old[0]).sum()),
        "Hx": int((state.Hx != old[1]).sum()),
        "Hy": int((state.Hy != old[2]).sum()),
        "X_imputed": int(dataset.Rx.sum()),
        "Y_imputed": int(dataset.Ry.sum()),
    }
    state.sweep += 1
    if compute_log_joint:
        stats.log_joint = completed_log_joint(state)
        if not np.isfinite(stats.log_joint):
            raise SamplerError("log joint density is not finite")
    return state, stats
