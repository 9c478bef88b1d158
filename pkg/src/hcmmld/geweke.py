"""Joint-distribution ("getting it right") checks for the Gibbs sampler.

Two simulators of the joint law of parameters, latent indices and data are
compared: independent prior-then-data draws (marginal-conditional) and a
chain alternating a full Gibbs sweep with regeneration of the data given the
current parameters (successive-conditional). If every full conditional is
correct, both target the same distribution.
"""

from dataclasses import dataclass

import numpy as np

from .data import DesignSpec, design_matrix
from .gibbs import gibbs_sweep
from .numerics import batched_cholesky, sample_dirichlet_rows, sample_invwishart, sample_wishart
from .state import ModelState, draw_log_sticks, sticks_from_log1m


@dataclass
class MaskOnly:
    """Stand-in dataset: the sampler reads only the masks from it."""

    Rx: np.ndarray
    Ry: np.ndarray


def _draw(probs, rng):
    c = np.cumsum(probs, axis=-1)
    u = rng.random((probs.shape[0], 1)) * c[:, -1:]
    return np.minimum((u >= c).sum(axis=-1), probs.shape[-1] - 1)


def regenerate_data(state, rng):
    """Replace every completed cell with a draw from p(X, Y | indices, parameters)."""
    for j, ps in enumerate(state.psi):
        state.X[:, j] = _draw(ps[state.Hx], rng)
    state.refresh_design()
    mean = np.einsum("ik,ikq->iq", state.D, state.B[state.Hy])
    L = batched_cholesky(state.Sigma, "component covariance")
    eps = rng.standard_normal(state.Y.shape)
    state.Y = mean + np.einsum("iab,ib->ia", L[state.Hy], eps)
    return state


def sample_prior_state(levels, q, n, trunc, prior, rng):
    """Draw parameters, indices and completed data from the full prior."""
    prior = prior.resolved(levels, q)
    design = DesignSpec.from_levels(levels)
    Kz, Kx, Ky = trunc.Kz, trunc.Kx, trunc.Ky
    ps = design.p_star
    alpha = rng.gamma(prior.alpha_a, 1.0 / prior.alpha_b)
    beta_x = rng.gamma(prior.beta_x_a, 1.0 / prior.beta_x_b)
    beta_y = rng.gamma(prior.beta_y_a, 1.0 / prior.beta_y_b)
    lv_z = draw_log_sticks(np.ones(Kz), alpha, rng)
    lv_x = draw_log_sticks(np.ones((Kz, Kx)), beta_x, rng)
    lv_y = draw_log_sticks(np.ones((Kz, Ky)), beta_y, rng)
    xi_z, _, lam = sticks_from_log1m(lv_z)
    xi_x, _, phi_x = sticks_from_log1m(lv_x)
    xi_y, _, phi_y = sticks_from_log1m(lv_y)
    psi = [sample_dirichlet_rows(np.broadcast_to(g, (Kx, len(g))), rng) for g in prior.gamma]
    SigmaH = sample_wishart(prior.w, prior.Sigma0[None], rng)[0]
    Sigma = sample_invwishart(np.full(Ky, prior.v), np.broadcast_to(SigmaH, (Ky, q, q)), rng)
    tau = rng.gamma(prior.tau_a, 1.0 / prior.tau_b, size=q)
    B0 = rng.standard_normal((ps, q)) * np.sqrt(prior.sigma2_0beta)
    B = B0[None] + rng.standard_normal((Ky, ps, q)) / np.sqrt(tau)[None, None, :]
    Z = _draw(np.broadcast_to(lam, (n, Kz)), rng)
    Hx = _draw(phi_x[Z], rng)
    Hy = _draw(phi_y[Z], rng)
    state = ModelState(
        Z=Z, Hx=Hx, Hy=Hy, xi_z=xi_z, lam=lam, xi_x=xi_x, phi_x=phi_x, xi_y=xi_y,
        phi_y=phi_y, psi=psi, B=B, Sigma=Sigma, B0=B0, SigmaH=SigmaH, tau=tau,
        alpha=alpha, beta_x=beta_x, beta_y=beta_y,
        X=np.zeros((n, len(levels)), dtype=np.int64), Y=np.zeros((n, q)),
        trunc=trunc, prior=prior, design=design,
        D=np.zeros((n, ps)), lv_z=lv_z, lv_x=lv_x, lv_y=lv_y,
    )
    state.set_sticks("z", lv_z)
    state.set_sticks("x", lv_x)
    state.set_sticks("y", lv_y)
    return regenerate_data(state, rng)


def default_functionals(state, masks):
    """Fifty scalar summaries of (parameters, indices, completed data).

    Scale parameters enter on the log scale so every summary has a finite
    variance under the default heavy-tailed priors.
    """
    X, Y = state.X, state.Y
    y = Y[:, 0]
    f = [
        np.log(state.alpha), np.log(state.beta_x), np.log(state.beta_y),
        np.log(state.tau[0]), np.log(state.SigmaH[0, 0]),
        state.lam[0], state.lam[1],
        state.phi_x[0, 0], state.phi_x[0, 1], state.phi_y[0, 0], state.phi_y[0, 1],
        state.phi_x[1, 0], state.phi_y[1, 0],
        state.psi[0][0, 0], state.psi[1][0, 0], state.psi[1][0, 1],
        state.psi[0][1, 0], state.psi[1][1, 0],
    ]
    f += list(np.tanh(state.B0[:, 0] / 3.0))
    f += list(np.tanh(state.B[0, :, 0] / 3.0))
    f += list(np.tanh(state.B[1, :, 0] / 3.0))
    f += [np.log(state.Sigma[h, 0, 0]) for h in range(3)]
    ys = np.tanh(y / 3.0)
    f += [
        ys.mean(), (ys ** 2).mean(), np.abs(ys).mean(),
        (X[:, 0] == 0).mean(), (X[:, 1] == 0).mean(), (X[:, 1] == 1).mean(),
        ((X[:, 0] == 0) & (X[:, 1] == 0)).mean(),
        (ys * (X[:, 0] == 1)).mean(),
        (state.Z == 0).mean(), (state.Hx == 0).mean(), (state.Hy == 0).mean(),
        len(np.unique(state.Z)), len(np.unique(state.Hx)), len(np.unique(state.Hy)),
        ys[masks.Ry[:, 0]].mean() if masks.Ry.any() else 0.0,
        (X[masks.Rx[:, 1], 1] == 0).mean() if masks.Rx[:, 1].any() else 0.0,
        ((state.Hx == state.Hy)).mean(),
    ]
    return np.asarray(f, dtype=float)


def batch_means_se(draws, n_batches=50):
    """Monte Carlo standard error of a chain mean via non-overlapping batches."""
    draws = np.asarray(draws, dtype=float)
    N = draws.shape[0]
    size = N // n_batches
    b = draws[: size * n_batches].reshape(n_batches, size, *draws.shape[1:]).mean(axis=1)
    return b.std(axis=0, ddof=1) / np.sqrt(n_batches)


@dataclass
class GewekeResult:
    z: np.ndarray
    mc_mean: np.ndarray
    sc_mean: np.ndarray

    def n_exceeding(self, threshold=4.0):
        return int((np.abs(self.z) > threshold).sum())


def geweke_test(levels, q, n, trunc, prior, rng, n_sweeps=10_000, n_marginal=None,
                missing_rate=0.2, functionals=default_functionals, burn=100):
    """Run both simulators and return per-functional z-scores."""
    n_marginal = n_sweeps if n_marginal is None else n_marginal
    p = len(levels)
    masks = MaskOnly(Rx=rng.random((n, p)) < missing_rate, Ry=rng.random((n, q)) < missing_rate)

    mc = np.array([functionals(sample_prior_state(levels, q, n, trunc, prior, rng), masks)
                   for _ in range(n_marginal)])

    state = sample_prior_state(levels, q, n, trunc, prior, rng)
    sc = []
    for it in range(burn + n_sweeps):
        state, _ = gibbs_sweep(state, masks, rng, compute_log_joint=False)
        state = regenerate_data(state, rng)
        if it >= burn:
            sc.append(functionals(state, masks))
    sc = np.array(sc)

    se_mc = mc.std(axis=0, ddof=1) / np.sqrt(len(mc))
    se_sc = batch_means_se(sc)
    denom = np.sqrt(se_mc ** 2 + se_sc ** 2)
    diff = sc.mean(axis=0) - mc.mean(axis=0)
    z = np.where(denom > 0, diff / np.where(denom > 0, denom, 1.0), 0.0)
    return GewekeResult(z=z, mc_mean=mc.mean(axis=0), sc_mean=sc.mean(axis=0))
