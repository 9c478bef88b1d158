"""Parameter / latent-variable state of the model and its configuration.

Component indices (``Z``, ``Hx``, ``Hy``) and completed categorical codes are
stored 0-based inside :class:`ModelState`; datasets keep the 1-based codes of
the input files.
"""

import copy
import pickle
from dataclasses import dataclass, field, fields

import numpy as np

from .data import DesignSpec, design_matrix
from .errors import ConfigError
from .numerics import sample_dirichlet_rows

CHECKPOINT_VERSION = 1
SIMPLEX_TOL = 1e-10


@dataclass(frozen=True)
class TruncationConfig:
    Kz: int = 15
    Kx: int = 90
    Ky: int = 60

    def __post_init__(self):
        for name in ("Kz", "Kx", "Ky"):
            k = getattr(self, name)
            if int(k) != k or k < 1:
                raise ConfigError(f"truncation level {name} must be a positive integer, got {k}")

    @property
    def glom(self):
        """True for the general-location restriction Kz = Ky = 1."""
        return self.Kz == 1 and self.Ky == 1


@dataclass
class PriorConfig:
    """Hyperprior constants. ``None`` fields take data-dependent defaults.

    Gamma priors are shape/rate. Defaults: Dirichlet ``1/d_j``, ``v = q+1``,
    ``w = q+2``, ``Sigma0 = I/(q+1)``, ``sigma2_0beta = 10``, every gamma
    prior ``G(0.5, 0.5)``.
    """

    gamma: list = None
    v: float = None
    w: float = None
    Sigma0: np.ndarray = None
    sigma2_0beta: float = 10.0
    alpha_a: float = 0.5
    alpha_b: float = 0.5
    beta_x_a: float = 0.5
    beta_x_b: float = 0.5
    beta_y_a: float = 0.5
    beta_y_b: float = 0.5
    tau_a: float = 0.5
    tau_b: float = 0.5

    def resolved(self, levels, q):
        """Copy with every default filled in for ``levels`` and ``q``."""
        levels = [int(d) for d in levels]
        out = copy.deepcopy(self)
        if out.gamma is None:
            out.gamma = [np.full(d, 1.0 / d) for d in levels]
        else:
            out.gamma = [np.asarray(g, dtype=float) for g in out.gamma]
        if out.v is None:
            out.v = q + 1.0
        if out.w is None:
            out.w = q + 2.0
        if out.Sigma0 is None:
            out.Sigma0 = np.eye(q) / (q + 1.0)
        out.Sigma0 = np.asarray(out.Sigma0, dtype=float).reshape(q, q)
        out.validate(levels, q)
        return out

    def validate(self, levels, q):
        if len(self.gamma) != len(levels):
            raise ConfigError("one Dirichlet vector per categorical variable is required")
        for j, (g, d) in enumerate(zip(self.gamma, levels)):
            if g.shape != (d,) or np.any(g <= 0):
                raise ConfigError(f"Dirichlet prior for variable {j} must be {d} positive values")
        if not self.v > q - 1:
            raise ConfigError(f"inverse-Wishart df v={self.v} must exceed q-1={q - 1}")
        if not self.w > q - 1:
            raise ConfigError(f"Wishart df w={self.w} must exceed q-1={q - 1}")
        try:
            np.linalg.cholesky(self.Sigma0)
        except np.linalg.LinAlgError:
            raise ConfigError("Sigma0 must be symmetric positive definite") from None
        for name in ("sigma2_0beta", "alpha_a", "alpha_b", "beta_x_a", "beta_x_b",
                     "beta_y_a", "beta_y_b", "tau_a", "tau_b"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"prior constant {name} must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown prior fields: {sorted(extra)}")
        return cls(**d)


def stick_break(xi):
    """Truncated stick-breaking weights ``xi_k * prod_{l<k} (1 - xi_l)``.

    Works along the last axis, so a (Kz, K) array of sticks gives Kz simplexes.
    The last stick must equal 1.
    """
    xi = np.asarray(xi, dtype=float)
    if np.any(~(xi > 0)) or np.any(xi > 1):
        raise ValueError("stick proportions must lie in (0, 1]")
    if np.any(xi[..., -1] != 1.0):
        raise ValueError("the last stick proportion must equal 1")
    return _stick_break(xi)


def _stick_break(xi):
    rest = np.cumprod(1.0 - xi[..., :-1], axis=-1)
    phi = xi.copy()
    phi[..., 1:] *= rest
    s = phi.sum(axis=-1, keepdims=True)
    # exact in exact arithmetic; renormalise away rounding drift
    return phi / s


def log_gamma_variates(shape, rng):
    """log of Gamma(shape, 1) draws, accurate even for shape << 1."""
    shape = np.asarray(shape, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(rng.standard_gamma(shape + 1.0)) + np.log(rng.random(shape.shape)) / shape


def draw_log_sticks(a, b, rng):
    """``log(1 - xi)`` for xi ~ Beta(a, b), computed without forming xi.

    Stick proportions are often within 1e-16 of 1 under small
    concentrations; carrying ``log(1 - xi)`` keeps their information.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    la = log_gamma_variates(a, rng)
    lb = log_gamma_variates(b, rng)
    return lb - np.logaddexp(la, lb)


def sticks_from_log1m(lv):
    """Sticks and weights from ``log(1 - xi)`` (last entry forced to -inf).

    Returns ``(xi, log_phi, phi)`` along the last axis.
    """
    lv = np.array(lv, dtype=float)
    lv[..., -1] = -np.inf
    with np.errstate(divide="ignore"):
        log_xi = np.log(-np.expm1(lv))
    xi = np.exp(log_xi)
    tail = np.zeros_like(lv)
    tail[..., 1:] = np.cumsum(lv[..., :-1], axis=-1)
    log_phi = log_xi + tail
    log_phi -= np.logaddexp.reduce(log_phi, axis=-1, keepdims=True)
    return xi, log_phi, np.exp(log_phi)


@dataclass
class ModelState:
    """Complete state of one sampler chain.

    Shapes: ``lam (Kz,)``, ``phi_x (Kz, Kx)``, ``phi_y (Kz, Ky)``,
    ``psi[j] (Kx, d_j)``, ``B (Ky, p*, q)``, ``Sigma (Ky, q, q)``,
    ``B0 (p*, q)``, ``SigmaH (q, q)``, ``tau (q,)``; ``X`` and ``Y`` are the
    current completed data (0-based codes, standardized scale) and ``D`` the
    matching design matrix.
    """

    Z: np.ndarray
    Hx: np.ndarray
    Hy: np.ndarray
    xi_z: np.ndarray
    lam: np.ndarray
    xi_x: np.ndarray
    phi_x: np.ndarray
    xi_y: np.ndarray
    phi_y: np.ndarray
    psi: list
    B: np.ndarray
    Sigma: np.ndarray
    B0: np.ndarray
    SigmaH: np.ndarray
    tau: np.ndarray
    alpha: float
    beta_x: float
    beta_y: float
    X: np.ndarray
    Y: np.ndarray
    trunc: TruncationConfig
    prior: PriorConfig
    design: DesignSpec
    D: np.ndarray = None
    sweep: int = 0
    lv_z: np.ndarray = None
    lv_x: np.ndarray = None
    lv_y: np.ndarray = None
    log_lam: np.ndarray = None
    log_phi_x: np.ndarray = None
    log_phi_y: np.ndarray = None

    def __post_init__(self):
        if self.D is None:
            self.refresh_design()
        for level, xi in (("z", self.xi_z), ("x", self.xi_x), ("y", self.xi_y)):
            if getattr(self, "lv_" + level) is None:
                with np.errstate(divide="ignore"):
                    self.set_sticks(level, np.log1p(-xi))

    def set_sticks(self, level, lv):
        """Install sticks for level ``"z"``, ``"x"`` or ``"y"`` from ``log(1 - xi)``."""
        xi, log_phi, phi = sticks_from_log1m(lv)
        lv = np.array(lv, dtype=float)
        lv[..., -1] = -np.inf
        if level == "z":
            self.xi_z, self.lv_z, self.log_lam, self.lam = xi, lv, log_phi, phi
        elif level == "x":
            self.xi_x, self.lv_x, self.log_phi_x, self.phi_x = xi, lv, log_phi, phi
        elif level == "y":
            self.xi_y, self.lv_y, self.log_phi_y, self.phi_y = xi, lv, log_phi, phi
        else:
            raise ValueError(f"unknown stick level {level!r}")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Y.shape[1]

    def refresh_design(self):
        self.D = design_matrix(self.X, self.design)

    def _with_sticks(self, lv_z, lv_x, lv_y):
        self.set_sticks("z", lv_z)
        self.set_sticks("x", lv_x)
        self.set_sticks("y", lv_y)
        return self

    def copy(self):
        return copy.deepcopy(self)

    def validate(self, dataset=None):
        """Assert every structural invariant; raises ``AssertionError``."""
        tr = self.trunc
        n = self.n
        for name, arr, k in (("Z", self.Z, tr.Kz), ("Hx", self.Hx, tr.Kx), ("Hy", self.Hy, tr.Ky)):
            assert arr.shape == (n,), f"{name} has wrong shape"
            assert arr.min(initial=0) >= 0 and arr.max(initial=0) < k, f"{name} out of range"
        for name, xi, phi in (("lambda", self.xi_z, self.lam), ("phi_x", self.xi_x, self.phi_x),
                              ("phi_y", self.xi_y, self.phi_y)):
            assert np.all(xi[..., -1] == 1.0), f"{name}: last stick is not 1"
            assert np.all((xi > 0) & (xi <= 1)), f"{name}: stick outside (0, 1]"
            assert np.all(np.abs(phi.sum(axis=-1) - 1.0) < SIMPLEX_TOL), f"{name} not a simplex"
            assert np.all(phi >= 0), f"{name} has negative mass"
        for j, ps in enumerate(self.psi):
            assert np.all(np.abs(ps.sum(axis=-1) - 1.0) < SIMPLEX_TOL), f"psi[{j}] not a simplex"
        for h in range(tr.Ky):
            np.linalg.cholesky(self.Sigma[h])
        np.linalg.cholesky(self.SigmaH)
        assert np.all(self.tau > 0) and self.alpha > 0 and self.beta_x > 0 and self.beta_y > 0
        assert np.array_equal(self.D, design_matrix(self.X, self.design)), "stale design matrix"
        if dataset is not None:
            obs = ~dataset.Rx
            assert np.array_equal(self.X[obs], dataset.X[obs] - 1), "observed X altered"
            oy = ~dataset.Ry
            assert np.array_equal(self.Y[oy], dataset.Y[oy]), "observed Y altered"


def init_state(dataset, trunc, prior, rng):
    """Draw a dispersed starting state.

    Sticks, indices and ``psi`` come from their priors with every
    concentration fixed at 1; ``B_h = B0 = 0``, ``Sigma_h`` at the prior
    expectation, missing codes uniform and missing continuous values
    standard normal.
    """
    d = dataset.d
    q = dataset.q
    prior = prior.resolved(d, q)
    design = DesignSpec.from_levels(d)
    n, p, ps = dataset.n, dataset.p, design.p_star
    Kz, Kx, Ky = trunc.Kz, trunc.Kx, trunc.Ky

    lv_z = draw_log_sticks(np.ones(Kz), 1.0, rng)
    lv_x = draw_log_sticks(np.ones((Kz, Kx)), 1.0, rng)
    lv_y = draw_log_sticks(np.ones((Kz, Ky)), 1.0, rng)
    xi_z, _, lam = sticks_from_log1m(lv_z)
    xi_x, _, phi_x = sticks_from_log1m(lv_x)
    xi_y, _, phi_y = sticks_from_log1m(lv_y)

    Z = _draw_rows(np.broadcast_to(lam, (n, Kz)), rng)
    Hx = _draw_rows(phi_x[Z], rng)
    Hy = _draw_rows(phi_y[Z], rng)

    psi = [sample_dirichlet_rows(np.broadcast_to(prior.gamma[j], (Kx, d[j])), rng)
           for j in range(p)]

    if prior.w - q - 1 > 0:
        sig0 = prior.v / (prior.w - q - 1) * prior.Sigma0
    else:
        sig0 = np.eye(q)
    Sigma = np.broadcast_to(sig0, (Ky, q, q)).copy()
    SigmaH = prior.w * prior.Sigma0

    X = dataset.X - 1
    miss = dataset.Rx
    if miss.any():
        u = rng.random(X.shape)
        X = np.where(miss, np.floor(u * d[None, :]).astype(np.int64), X)
    Y = dataset.Y.copy()
    if dataset.Ry.any():
        Y[dataset.Ry] = rng.standard_normal(int(dataset.Ry.sum()))

    return ModelState(
        Z=Z, Hx=Hx, Hy=Hy,
        xi_z=xi_z, lam=lam, xi_x=xi_x, phi_x=phi_x, xi_y=xi_y, phi_y=phi_y,
        psi=psi, B=np.zeros((Ky, ps, q)), Sigma=Sigma, B0=np.zeros((ps, q)),
        SigmaH=SigmaH, tau=np.ones(q), alpha=1.0, beta_x=1.0, beta_y=1.0,
        X=np.asarray(X, dtype=np.int64), Y=Y, trunc=trunc, prior=prior, design=design,
        lv_z=None, lv_x=None, lv_y=None,
    )._with_sticks(lv_z, lv_x, lv_y)


def _draw_rows(probs, rng):
    c = np.cumsum(probs, axis=-1)
    u = rng.random((probs.shape[0], 1)) * c[:, -1:]
    return np.minimum((u >= c).sum(axis=-1), probs.shape[-1] - 1)


@dataclass(frozen=True)
class Occupancy:
    z: int
    x: int
    y: int
    saturated: tuple = field(default=())

    @property
    def flag(self):
        return bool(self.saturated)


def occupancy_report(state):
    """Count occupied components and flag any that reach the truncation."""
    tr = state.trunc
    counts = (len(np.unique(state.Z)), len(np.unique(state.Hx)), len(np.unique(state.Hy)))
    sat = tuple(name for name, c, k in zip(("Z", "Hx", "Hy"), counts, (tr.Kz, tr.Kx, tr.Ky))
                if c >= k and k > 1)
    return Occupancy(*counts, saturated=sat)


def save_checkpoint(path, state, rng, extra=None):
    """Pickle the state, the generator state and caller bookkeeping."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "state": state,
        "rng": rng.bit_generator.state,
        "rng_class": type(rng.bit_generator).__name__,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(state, rng, extra)``."""
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    bitgen = getattr(np.random, payload["rng_class"])()
    bitgen.state = payload["rng"]
    return payload["state"], np.random.Generator(bitgen), payload["extra"]
