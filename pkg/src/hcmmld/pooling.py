"""Rubin's combining rules and simple-random-sample estimators.

Estimators work on completed datasets held as pandas DataFrames and return
point estimates with SRS variances that include the finite population
correction ``1 - n/N``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml
from scipy import stats

from .errors import ConfigError

ESTIMAND_KINDS = ("mean", "proportion", "ols", "median")


@dataclass
class EstimandResult:
    """Per-dataset point estimates ``q`` and variances ``U`` of one scalar."""

    q: np.ndarray
    U: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.U = np.asarray(self.U, dtype=float).reshape(-1)
        if self.q.shape != self.U.shape:
            raise ValueError("q and U must have the same length")
        if self.q.size < 2:
            raise ValueError("pooling needs at least two completed datasets")
        if np.any(self.U < 0):
            raise ValueError("variances must be non-negative")

    @property
    def M(self):
        return self.q.size


@dataclass(frozen=True)
class PooledEstimate:
    qbar: float
    W: float
    Bvar: float
    T: float
    df: float
    lo: float
    hi: float
    level: float = 0.95
    M: int = 0
    normal_reference: bool = False
    name: str = ""

    @property
    def se(self):
        return math.sqrt(self.T)

    def covers(self, value):
        return self.lo <= value <= self.hi


def rubin_pool(result, level=0.95):
    """Combine ``M`` completed-data estimates by Rubin's rules.

    ``qbar = mean(q)``, ``W = mean(U)``, ``B = var(q)``,
    ``T = W + (1 + 1/M) B`` and ``df = (M-1) (1 + W / ((1 + 1/M) B))^2``.
    When ``B = 0`` the reference distribution is the normal (``df = inf``)
    and the estimate is flagged. Sums are exactly rounded, so the result
    does not depend on the order of the datasets.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    M = result.M
    q, U = result.q, result.U
    qbar = math.fsum(q) / M
    W = math.fsum(U) / M
    Bvar = math.fsum((q - qbar) ** 2) / (M - 1)
    inflate = (1.0 + 1.0 / M) * Bvar
    T = W + inflate
    if inflate > 0:
        df = (M - 1) * (1.0 + W / inflate) ** 2
        crit = stats.t.ppf(0.5 + level / 2, df)
        normal = False
    else:
        df = math.inf
        crit = stats.norm.ppf(0.5 + level / 2)
        normal = True
    half = float(crit) * math.sqrt(T)
    return PooledEstimate(qbar=qbar, W=W, Bvar=Bvar, T=T, df=df, lo=qbar - half,
                          hi=qbar + half, level=level, M=M, normal_reference=normal,
                          name=result.name)


@dataclass
class EstimandSpec:
    """One registered estimand.

    ``where`` restricts to a subgroup: ``{column: label or [labels]}``.
    ``proportion`` needs ``level`` (the label counted); ``ols`` needs
    ``response`` and ``predictors``.
    """

    kind: str
    variable: str = None
    where: dict = field(default_factory=dict)
    level: object = None
    response: str = None
    predictors: list = None
    name: str = None

    def __post_init__(self):
        if self.kind not in ESTIMAND_KINDS:
            raise ConfigError(f"unknown estimand kind {self.kind!r}")
        if self.kind == "ols":
            if not self.response or not self.predictors:
                raise ConfigError("ols estimands need a response and predictors")
        elif not self.variable:
            raise ConfigError(f"{self.kind} estimands need a variable")
        if self.kind == "proportion" and self.level is None:
            raise ConfigError("proportion estimands need a level")
        self.where = dict(self.where or {})
        if self.name is None:
            self.name = self.default_name()

    def default_name(self):
        def lab(v):
            return "|".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)

        sub = ",".join(f"{k}={lab(v)}" for k, v in self.where.items())
        sub = f"[{sub}]" if sub else ""
        if self.kind == "ols":
            return f"ols({self.response}~{'+'.join(self.predictors)}){sub}"
        if self.kind == "proportion":
            return f"proportion({self.variable}={lab(self.level)}){sub}"
        return f"{self.kind}({self.variable}){sub}"

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad estimand spec {d}: {e}") from None


def load_estimands(path):
    """Read an estimand file; returns ``(specs, population_size)``."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse estimand file {path}: {e}") from None
    if isinstance(doc, list):
        doc = {"estimands": doc}
    if not isinstance(doc, dict) or not doc.get("estimands"):
        raise ConfigError(f"estimand file {path} lists no estimands")
    N = doc.get("population_size")
    N = math.inf if N is None else float(N)
    return [EstimandSpec.from_dict(e) for e in doc["estimands"]], N


def fpc(n, N):
    """Finite population correction ``1 - n/N`` (1 for an infinite population)."""
    return 1.0 if math.isinf(N) else 1.0 - n / N


def _same(series, value):
    if isinstance(value, (list, tuple, set)):
        vals = [str(v) for v in value]
    else:
        vals = [str(value)]
    return series.astype(str).isin(vals).to_numpy()


def subgroup(frame, where):
    mask = np.ones(len(frame), dtype=bool)
    for col, val in where.items():
        if col not in frame.columns:
            raise ConfigError(f"subgroup column {col!r} not in data")
        mask &= _same(frame[col], val)
    return frame[mask]


def _numeric(frame, col):
    if col not in frame.columns:
        raise ConfigError(f"column {col!r} not in data")
    return pd.to_numeric(frame[col], errors="raise").to_numpy(dtype=float)


class EmptySubgroup(Exception):
    pass


def kde_density_at(x, point):
    """Gaussian kernel density estimate (Silverman bandwidth) at ``point``."""
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return math.inf
    return float(stats.gaussian_kde(x, bw_method="silverman")(point)[0])


def estimate(frame, spec, N=math.inf):
    """SRS point estimate(s) and variance(s) for one estimand.

    Returns a list of ``(name, point, variance)``: one entry for scalar
    estimands and one per coefficient for OLS. Raises
    :class:`EmptySubgroup` when the subgroup has too few records.
    """
    n = len(frame)
    f = fpc(n, N)
    sub = subgroup(frame, spec.where)
    nd = len(sub)
    if spec.kind == "mean":
        if nd < 2:
            raise EmptySubgroup(spec.name)
        y = _numeric(sub, spec.variable)
        return [(spec.name, y.mean(), y.var(ddof=1) / nd * f)]
    if spec.kind == "proportion":
        if nd < 1:
            raise EmptySubgroup(spec.name)
        p = _same(sub[spec.variable], spec.level).mean()
        return [(spec.name, p, p * (1 - p) / nd * f)]
    if spec.kind == "median":
        if nd < 2:
            raise EmptySubgroup(spec.name)
        y = _numeric(sub, spec.variable)
        m = float(np.median(y))
        dens = kde_density_at(y, m)
        return [(spec.name, m, f / (4.0 * nd * dens ** 2))]
    # ols
    cols = {}
    for c in spec.predictors:
        if c not in sub.columns:
            raise ConfigError(f"column {c!r} not in data")
        s = sub[c]
        num = pd.to_numeric(s, errors="coerce") if not isinstance(s.dtype, pd.CategoricalDtype) else None
        if num is not None and num.notna().all():
            cols[c] = num.to_numpy(dtype=float)
        else:
            dummies = pd.get_dummies(s.astype("category") if num is None else s.astype(str),
                                     prefix=c, prefix_sep="=", drop_first=True, dtype=float)
            for dc in dummies.columns:
                cols[dc] = dummies[dc].to_numpy()
    names = ["(intercept)"] + list(cols)
    Xd = np.column_stack([np.ones(nd)] + list(cols.values())) if cols else np.ones((nd, 1))
    k = Xd.shape[1]
    if nd <= k:
        raise EmptySubgroup(spec.name)
    y = _numeric(sub, spec.response)
    beta, *_ = np.linalg.lstsq(Xd, y, rcond=None)
    resid = y - Xd @ beta
    s2 = resid @ resid / (nd - k)
    cov = s2 * np.linalg.pinv(Xd.T @ Xd) * f
    return [(f"{spec.name}:{nm}", beta[i], cov[i, i]) for i, nm in enumerate(names)]


def pool_frames(frames, specs, N=math.inf, level=0.95):
    """Estimate every spec in each completed frame and pool across frames.

    Returns ``(pooled, skipped)``: a list of :class:`PooledEstimate` and the
    names of estimands excluded because a subgroup was empty in some frame.
    """
    pooled, skipped = [], []
    for spec in specs:
        per = []
        try:
            for fr in frames:
                per.append(estimate(fr, spec, N))
        except EmptySubgroup:
            warnings.warn(f"empty subgroup for estimand {spec.name}; excluded from pooling")
            skipped.append(spec.name)
            continue
        for k in range(len(per[0])):
            name = per[0][k][0]
            res = EstimandResult(q=[p[k][1] for p in per], U=[p[k][2] for p in per], name=name)
            pooled.append(rubin_pool(res, level))
    return pooled, skipped


def pooled_table(pooled):
    """Delimited-output table: estimand, qbar, T, df, lo, hi (plus W, B)."""
    return pd.DataFrame([{"estimand": p.name, "qbar": p.qbar, "T": p.T, "df": p.df,
                          "lo": p.lo, "hi": p.hi, "W": p.W, "B": p.Bvar,
                          "normal_reference": p.normal_reference} for p in pooled])
