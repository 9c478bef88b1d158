"""Repeated-sampling evaluation: populations, nonresponse, scoreboards.

A population is a fully observed pandas DataFrame (categorical columns as
``pd.Categorical`` with fixed level order, continuous columns as floats).
Each replicate draws a simple random sample, masks cells with a
missingness mechanism, multiply imputes, pools, and is scored against the
population values of every registered estimand.
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from .data import dataset_from_arrays
from .errors import ConfigError, HCMMError
from .pooling import EmptySubgroup, EstimandSpec, estimate, pool_frames

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- population

@dataclass
class Population:
    frame: pd.DataFrame
    continuous: list
    categorical: list
    truths: dict = field(default_factory=dict)

    @property
    def N(self):
        return len(self.frame)

    @property
    def levels(self):
        return {c: list(self.frame[c].cat.categories) for c in self.categorical}

    def register(self, specs):
        """Record the population value of every (scalar) estimand."""
        for spec in specs:
            for name, point, _ in estimate(self.frame, spec):
                self.truths[name] = float(point)
        return self.truths


def _cat(codes, labels):
    return pd.Categorical.from_codes(np.asarray(codes, dtype=np.int64), list(labels))


def _choose(logits, rng):
    """One Gumbel-max categorical draw per row of ``logits``."""
    g = -np.log(-np.log(rng.random(logits.shape)))
    return np.argmax(logits + g, axis=1)


def _ordinal(latent, cuts):
    return np.searchsorted(np.asarray(cuts), latent)


SIPP_LEVELS = {
    "sex": ["female", "male"],
    "race": ["white", "black", "hispanic", "asian", "other"],
    "marital": ["married", "widowed", "divorced", "separated", "never", "partner"],
    "born_us": ["yes", "no"],
    "children": ["0", "1", "2", "3+"],
    "educ": ["lt_hs", "hs", "some_college", "associate", "bachelor", "graduate"],
    "occupation": ["management", "professional", "service", "sales", "office",
                   "construction", "production", "transport"],
    "worker_class": ["private", "nonprofit", "government"],
    "union": ["no", "yes"],
    "hourly": ["no", "yes"],
    "hours": ["lt20", "20-34", "35-44", "45-54", "55+"],
}


def sipp_like_population(N, rng):
    """Synthetic survey-style population: 2 continuous, 11 categorical columns.

    The log-earnings distribution has a skewness and spread that vary with
    sex, education and hours, and the categorical variables carry two- and
    three-way interactions (hours depends jointly on sex, children and
    education; occupation on education and sex).
    """
    male = rng.random(N) < 0.49
    race = _choose(np.log(np.tile([0.62, 0.13, 0.16, 0.06, 0.03], (N, 1))), rng)
    born_no = rng.random(N) < np.array([0.07, 0.10, 0.40, 0.65, 0.20])[race]

    # age: beta-shaped with race-specific skewness
    a = np.array([2.2, 1.7, 1.5, 1.8, 1.6])[race]
    b = np.array([2.4, 2.6, 3.0, 2.7, 2.9])[race]
    age = 18.0 + 62.0 * rng.beta(a, b)
    t = (age - 45.0) / 15.0

    # marital status: married, widowed, divorced, separated, never, partner
    lm = np.column_stack([
        1.0 + 0.8 * t - 0.3 * t ** 2 + 0.2 * male,
        -4.0 + 1.8 * t + 0.6 * t ** 2 - 1.0 * male,
        -1.0 + 0.5 * t - 0.4 * t ** 2,
        -2.6 + 0.0 * t - 0.3 * t ** 2,
        0.2 - 1.6 * t + 0.3 * male,
        -1.2 - 0.9 * t - 0.4 * t ** 2,
    ])
    marital = _choose(lm, rng)
    couple = (marital == 0) | (marital == 5)

    # own children in the home
    rate = np.exp(-0.2 + 0.9 * couple - 0.6 * male * (~couple) - 1.1 * ((age - 37.0) / 12.0) ** 2)
    children = np.minimum(rng.poisson(rate), 3)
    has_kids = children > 0

    # education: ordinal latent with race / nativity / cohort effects
    lat = (0.35 * (race == 0) - 0.55 * (race == 2) + 0.7 * (race == 3) - 0.3 * born_no
           - 0.25 * t - 0.1 * t ** 2 + 0.15 * (~male) + rng.standard_normal(N))
    educ = _ordinal(lat, [-1.4, -0.2, 0.45, 0.75, 1.55])
    hi_ed = educ >= 4

    # hours: sex x children x education interaction
    part = (-1.6 + 1.3 * (~male) * has_kids - 0.7 * (~male) * has_kids * hi_ed
            + 0.5 * (~male) + 0.4 * (age > 64) + 0.25 * (educ <= 1))
    long_ = -1.3 + 0.6 * male + 0.6 * hi_ed + 0.4 * male * hi_ed - 0.3 * has_kids * (~male)
    lh = np.column_stack([part - 0.4, part, np.zeros(N), long_, long_ - 1.0 + 0.3 * (educ == 5)])
    hours = _choose(lh, rng)

    # occupation given education and sex
    e = educ / 5.0
    lo = np.column_stack([
        -1.0 + 2.0 * e + 0.3 * male,
        -2.2 + 4.2 * e + 0.2 * (~male),
        0.8 - 1.6 * e + 0.3 * (~male),
        0.0 + 0.0 * e,
        0.2 - 0.3 * e + 0.9 * (~male) - 0.6 * male,
        -0.4 - 1.6 * e + 1.8 * male - 1.5 * (~male),
        0.0 - 1.4 * e + 0.7 * male - 0.6 * (~male),
        -0.3 - 1.3 * e + 1.2 * male - 1.0 * (~male),
    ])
    occ = _choose(lo, rng)

    gov_occ = np.isin(occ, [1, 2])
    lw = np.column_stack([np.zeros(N), -2.6 + 0.9 * gov_occ + 0.6 * hi_ed,
                          -1.9 + 0.7 * gov_occ + 0.3 * hi_ed + 0.2 * (age > 45)])
    wclass = _choose(lw, rng)

    union = rng.random(N) < 1 / (1 + np.exp(-(-2.4 + 1.6 * (wclass == 2)
                                               + 0.7 * np.isin(occ, [5, 6, 7]) - 0.2 * hi_ed)))
    hourly = rng.random(N) < 1 / (1 + np.exp(-(0.9 - 0.7 * educ + 0.9 * np.isin(occ, [2, 3, 5, 6, 7])
                                               + 0.5 * (hours <= 1))))

    # log monthly earnings: skewness and spread vary by subgroup
    occ_eff = np.array([0.45, 0.35, -0.35, -0.05, -0.1, 0.1, 0.0, -0.05])[occ]
    mu = (7.6 + 0.18 * educ + 0.06 * educ * male + np.array([-1.3, -0.55, 0.0, 0.15, 0.25])[hours]
          + 0.15 * male + 0.35 * t - 0.22 * t ** 2 + occ_eff + 0.12 * union - 0.1 * born_no)
    shape = np.where(male, -2.5, 1.5) + 0.5 * (educ - 2.5)
    scale = np.array([0.75, 0.6, 0.45, 0.5, 0.55])[hours] * np.where(hi_ed, 1.15, 1.0)
    delta = shape / np.sqrt(1 + shape ** 2)
    u0, u1 = rng.standard_normal(N), rng.standard_normal(N)
    skew = delta * np.abs(u0) + np.sqrt(1 - delta ** 2) * u1
    skew = (skew - delta * np.sqrt(2 / np.pi)) / np.sqrt(1 - 2 * delta ** 2 / np.pi)
    earn = mu + scale * skew

    L = SIPP_LEVELS
    frame = pd.DataFrame({
        "age": np.round(age, 1),
        "earn": earn,
        "sex": _cat(male.astype(int), L["sex"]),
        "race": _cat(race, L["race"]),
        "marital": _cat(marital, L["marital"]),
        "born_us": _cat(born_no.astype(int), L["born_us"]),
        "children": _cat(children, L["children"]),
        "educ": _cat(educ, L["educ"]),
        "occupation": _cat(occ, L["occupation"]),
        "worker_class": _cat(wclass, L["worker_class"]),
        "union": _cat(union.astype(int), L["union"]),
        "hourly": _cat(hourly.astype(int), L["hourly"]),
        "hours": _cat(hours, L["hours"]),
    })
    return Population(frame=frame, continuous=["age", "earn"],
                      categorical=[c for c in frame.columns if c not in ("age", "earn")])


def state_population(state, N, rng, x_names=None, y_names=None):
    """Population drawn from a fixed model state via the predictive law."""
    from .density import sample_predictive

    X, Y = sample_predictive(state, rng, size=N)
    x_names = x_names or [f"x{j + 1}" for j in range(state.p)]
    y_names = y_names or [f"y{v + 1}" for v in range(state.q)]
    cols = {}
    for v, nm in enumerate(y_names):
        cols[nm] = Y[:, v]
    for j, nm in enumerate(x_names):
        d = state.design.levels[j]
        cols[nm] = _cat(X[:, j] - 1, [str(k) for k in range(1, d + 1)])
    return Population(frame=pd.DataFrame(cols), continuous=list(y_names), categorical=list(x_names))


def build_population(spec, N, rng):
    """Dispatch on a generator spec: ``"sipp_like"`` or a :class:`ModelState`."""
    if isinstance(spec, str):
        if spec in ("sipp_like", "sipp-like"):
            return sipp_like_population(N, rng)
        raise ConfigError(f"unknown population generator {spec!r}")
    return state_population(spec, N, rng)


def sipp_estimands():
    """Registered estimands for the survey-style population.

    The first fourteen are subgroup means and proportions; an OLS fit and a
    median are included for reporting.
    """
    E = EstimandSpec
    return [
        E("mean", "earn", where={"sex": "female"}),
        E("mean", "earn", where={"sex": "male"}),
        E("mean", "earn", where={"educ": ["lt_hs", "hs"]}),
        E("mean", "earn", where={"educ": ["bachelor", "graduate"]}),
        E("mean", "earn", where={"hours": "35-44"}),
        E("mean", "age", where={"marital": "married"}),
        E("mean", "age", where={"marital": "never"}),
        E("proportion", "hours", level="35-44", where={"sex": "female"}),
        E("proportion", "hours", level="35-44", where={"sex": "male"}),
        E("proportion", "children", level="0"),
        E("proportion", "educ", level=["bachelor", "graduate"]),
        E("proportion", "union", level="yes", where={"worker_class": "government"}),
        E("proportion", "born_us", level="no"),
        E("proportion", "marital", level="married", where={"sex": "male"}),
        E("ols", response="earn", predictors=["age", "sex"]),
        E("median", "earn", where={"sex": "female"}),
    ]


# ---------------------------------------------------------------- mechanisms

def equicorrelated_normal(n, k, rho, rng):
    """``n`` draws of a ``k``-vector, unit variances, all correlations ``rho``.

    Built from one shared and one idiosyncratic standard normal, which is
    exact for ``rho >= 0``.
    """
    if not 0 <= rho < 1:
        raise ConfigError("shock correlation must lie in [0, 1)")
    shared = rng.standard_normal((n, 1))
    return math.sqrt(rho) * shared + math.sqrt(1 - rho) * rng.standard_normal((n, k))


@dataclass
class QuadraticTerm:
    """``coef * ((x - c0 - c1 m) / (s0 + s1 m))^2`` with modifier ``m``."""

    variable: str
    center: tuple = (0.0, 0.0)
    scale: tuple = (1.0, 0.0)
    modifier: str = None
    coef: float = -1.0


@dataclass
class TargetLogit:
    target: str
    intercept: float = 0.0
    linear: dict = field(default_factory=dict)
    response: dict = field(default_factory=dict)
    quadratic: list = field(default_factory=list)


@dataclass
class BlockLogit:
    variables: list
    intercept: float = -1.0
    response: dict = field(default_factory=dict)
    loading: float = 1.25
    correlation: float = 0.3


@dataclass
class MarSpec:
    """Logistic nonresponse model.

    ``indicators`` maps names to ``(column, level)`` pairs usable as linear
    terms or quadratic modifiers; ``targets`` are evaluated in order and
    their response indicators may feed later targets and the blocks.
    """

    targets: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    indicators: dict = field(default_factory=dict)
    fully_observed: list = field(default_factory=list)
    complete_fraction: float = 0.0

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        targets = []
        for t in d.pop("targets", []):
            t = dict(t)
            t["quadratic"] = [QuadraticTerm(**{k: (tuple(v) if isinstance(v, list) else v)
                                               for k, v in q.items()}) for q in t.get("quadratic", [])]
            targets.append(TargetLogit(**t))
        blocks = [BlockLogit(**b) for b in d.pop("blocks", [])]
        ind = {k: tuple(v) for k, v in d.pop("indicators", {}).items()}
        try:
            return cls(targets=targets, blocks=blocks, indicators=ind, **d)
        except TypeError as e:
            raise ConfigError(f"bad MAR specification: {e}") from None

    def validate(self, frame):
        cols = set(frame.columns)
        for name, (col, _) in self.indicators.items():
            if col not in cols:
                raise ConfigError(f"indicator {name!r} references unknown column {col!r}")
        for t in self.targets:
            if t.target not in cols:
                raise ConfigError(f"unknown target {t.target!r}")
            for k in t.linear:
                if k not in self.indicators and k not in cols:
                    raise ConfigError(f"logit covariate {k!r} is not available")
            for q in t.quadratic:
                if q.variable not in cols:
                    raise ConfigError(f"logit covariate {q.variable!r} is not available")
        for b in self.blocks:
            for v in b.variables:
                if v not in cols:
                    raise ConfigError(f"unknown block variable {v!r}")
            if not -1 < b.correlation < 1:
                raise ConfigError("block correlation must lie in (-1, 1)")
        if not 0 <= self.complete_fraction <= 1:
            raise ConfigError("complete_fraction must lie in [0, 1]")


def survey_mar_preset():
    """Survey-study MAR design: earnings and children driven by sex and age,
    demographic and employment blocks with correlated shocks."""
    return MarSpec(
        indicators={"U": ("sex", "male")},
        targets=[
            TargetLogit("earn", intercept=-0.25, linear={"U": 0.5},
                        quadratic=[QuadraticTerm("age", (25.0, 25.0), (25.0, 0.0), "U", -1.0)]),
            TargetLogit("children", intercept=0.0, linear={"U": -1.5},
                        quadratic=[QuadraticTerm("age", (40.0, -10.0), (30.0, 10.0), "U", -1.0)]),
        ],
        blocks=[
            BlockLogit(["race", "marital", "born_us"], -1.0, {"children": 0.7}, 1.25, 0.3),
            BlockLogit(["educ", "occupation", "worker_class", "union", "hourly", "hours"],
                       -1.0, {"earn": 0.7}, 1.25, 0.3),
        ],
        fully_observed=["age", "sex"],
        complete_fraction=0.03,
    )


@dataclass
class McarSpec:
    rate: float = 0.35
    complete_fraction: float = 500 / 6000
    complete_cases: int = None


MECHANISM_PRESETS = {
    "survey-mar": survey_mar_preset,
    "mcar": lambda: McarSpec(),
}


def load_mechanism(path_or_name):
    """A preset name or a YAML file with ``type: mar | mcar``."""
    if path_or_name in MECHANISM_PRESETS:
        return MECHANISM_PRESETS[path_or_name]()
    with open(path_or_name, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    kind = doc.pop("type", None)
    if "preset" in doc:
        base = MECHANISM_PRESETS.get(doc.pop("preset"))
        if base is None:
            raise ConfigError("unknown mechanism preset")
        mech = base()
        for k, v in doc.items():
            setattr(mech, k, v)
        return mech
    if kind == "mcar":
        return McarSpec(**doc)
    if kind == "mar":
        return MarSpec.from_dict(doc)
    raise ConfigError("mechanism file needs type: mar or type: mcar")


def _indicator(frame, col, level):
    return (frame[col].astype(str) == str(level)).to_numpy().astype(float)


def _complete_rows(n, frac, count, rng):
    k = count if count is not None else int(round(frac * n))
    if k > n:
        raise ConfigError("more complete cases requested than records")
    keep = np.zeros(n, dtype=bool)
    keep[rng.choice(n, size=k, replace=False)] = True
    return keep


def impose_mar(frame, spec, rng):
    """Boolean missingness mask (DataFrame, True = missing) under ``spec``."""
    spec.validate(frame)
    n = len(frame)
    mask = pd.DataFrame(False, index=frame.index, columns=frame.columns)
    exempt = _complete_rows(n, spec.complete_fraction, None, rng)
    ind = {k: _indicator(frame, c, lv) for k, (c, lv) in spec.indicators.items()}
    R = {}

    def value(name):
        if name in ind:
            return ind[name]
        return pd.to_numeric(frame[name]).to_numpy(dtype=float)

    for t in spec.targets:
        eta = np.full(n, float(t.intercept))
        for k, c in t.linear.items():
            eta += c * value(k)
        for k, c in t.response.items():
            if k not in R:
                raise ConfigError(f"response indicator for {k!r} is not defined yet")
            eta += c * R[k]
        for qt in t.quadratic:
            m = value(qt.modifier) if qt.modifier else 0.0
            z = (value(qt.variable) - qt.center[0] - qt.center[1] * m) / (qt.scale[0] + qt.scale[1] * m)
            eta += qt.coef * z ** 2
        r = rng.random(n) < 1 / (1 + np.exp(-eta))
        R[t.target] = r.astype(float)
    for b in spec.blocks:
        shocks = equicorrelated_normal(n, len(b.variables), b.correlation, rng) if b.correlation >= 0 \
            else _general_equicorrelated(n, len(b.variables), b.correlation, rng)
        base = np.full(n, float(b.intercept))
        for k, c in b.response.items():
            if k not in R:
                raise ConfigError(f"response indicator for {k!r} is not defined")
            base += c * R[k]
        for j, v in enumerate(b.variables):
            eta = base + b.loading * shocks[:, j]
            R[v] = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    for v, r in R.items():
        if v in spec.fully_observed:
            continue
        mask[v] = (r > 0) & ~exempt
    return mask


def _general_equicorrelated(n, k, rho, rng):
    C = np.full((k, k), rho) + (1 - rho) * np.eye(k)
    L = np.linalg.cholesky(C)
    return rng.standard_normal((n, k)) @ L.T


def impose_mcar(frame, rate, rng, complete_cases=None, complete_fraction=0.0):
    """Mask every non-exempt cell independently with probability ``rate``."""
    if not 0 <= rate <= 1:
        raise ConfigError("MCAR rate must lie in [0, 1]")
    n, k = frame.shape
    exempt = _complete_rows(n, complete_fraction, complete_cases, rng)
    m = (rng.random((n, k)) < rate) & ~exempt[:, None]
    return pd.DataFrame(m, index=frame.index, columns=frame.columns)


def impose(frame, mechanism, rng):
    if mechanism is None:
        return pd.DataFrame(False, index=frame.index, columns=frame.columns)
    if isinstance(mechanism, McarSpec):
        return impose_mcar(frame, mechanism.rate, rng, mechanism.complete_cases,
                           mechanism.complete_fraction)
    return impose_mar(frame, mechanism, rng)


def to_dataset(frame, mask, categorical, continuous):
    """Masked sample frame to a :class:`MixedDataset` (labels kept in order)."""
    X = np.column_stack([frame[c].cat.codes.to_numpy() + 1 for c in categorical]) \
        if categorical else np.zeros((len(frame), 0), dtype=np.int64)
    Y = frame[continuous].to_numpy(dtype=float)
    levels = [list(frame[c].cat.categories) for c in categorical]
    return dataset_from_arrays(X, Y, categorical, levels, continuous,
                               Rx=mask[categorical].to_numpy(), Ry=mask[continuous].to_numpy())


# ---------------------------------------------------------------- scoring

@dataclass
class Scoreboard:
    """Per-estimand repeated-sampling summary."""

    table: pd.DataFrame
    failures: int = 0
    replicates: int = 0
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        self.table.to_csv(path, index=False)

    def row(self, name):
        return self.table.set_index("estimand").loc[name]


def score(records, truths, names=None):
    """Aggregate per-replicate pooled results into a scoreboard table.

    ``records`` is a list of dicts with keys estimand, qbar, lo, hi (and
    optionally before-deletion ``cd_qbar``/``cd_lo``/``cd_hi``).
    """
    df = pd.DataFrame(records)
    rows = []
    names = names or list(dict.fromkeys(df["estimand"]))
    for name in names:
        sub = df[df["estimand"] == name]
        if sub.empty or name not in truths:
            continue
        truth = truths[name]
        est = sub["qbar"].to_numpy()
        bias = est.mean() - truth
        sd = est.std(ddof=1) if len(est) > 1 else float("nan")
        row = {
            "estimand": name,
            "truth": truth,
            "mean_estimate": est.mean(),
            "bias": bias,
            "std_bias": bias / sd if sd > 0 else (0.0 if bias == 0 else math.inf),
            "pct_bias": 100 * bias / truth if truth != 0 else float("nan"),
            "coverage": ((sub["lo"] <= truth) & (truth <= sub["hi"])).mean(),
            "mean_width": (sub["hi"] - sub["lo"]).mean(),
            "replicates": len(sub),
        }
        if "cd_lo" in sub:
            row["cd_coverage"] = ((sub["cd_lo"] <= truth) & (truth <= sub["cd_hi"])).mean()
            row["cd_mean_width"] = (sub["cd_hi"] - sub["cd_lo"]).mean()
        rows.append(row)
    return pd.DataFrame(rows)


def _ci(point, var, level=0.95):
    from scipy import stats

    half = stats.norm.ppf(0.5 + level / 2) * math.sqrt(var)
    return point - half, point + half


def _replicate(args):
    (r, seed, population, n, mechanism, config, specs, impute, level) = args
    from .engine import run_mi

    rng = np.random.default_rng(seed)
    frame = population.frame
    idx = np.sort(rng.choice(len(frame), size=n, replace=False))
    sample = frame.iloc[idx].reset_index(drop=True)
    mask = impose(sample, mechanism, rng)
    N = population.N
    # before-deletion (complete-data) intervals
    cd = {}
    for spec in specs:
        try:
            for name, pt, var in estimate(sample, spec, N):
                cd[name] = (pt, *_ci(pt, var, level))
        except EmptySubgroup:
            pass
    recs, err = [], None
    try:
        if impute is not None:
            frames = impute(sample, mask, rng)
        else:
            ds = to_dataset(sample, mask, population.categorical, population.continuous)
            out = run_mi(ds, config, rng=rng)
            frames = [f[list(frame.columns)] for f in out.frames()]
        pooled, _ = pool_frames(frames, specs, N, level)
        for p in pooled:
            rec = {"replicate": r, "estimand": p.name, "qbar": p.qbar, "T": p.T, "df": p.df,
                   "lo": p.lo, "hi": p.hi}
            if p.name in cd:
                rec.update(cd_qbar=cd[p.name][0], cd_lo=cd[p.name][1], cd_hi=cd[p.name][2])
            recs.append(rec)
    except (HCMMError, np.linalg.LinAlgError, FloatingPointError) as e:
        err = f"{type(e).__name__}: {e}"
    rate = mask.to_numpy().mean()
    return r, recs, err, rate


def run_repeated_sampling(population, n, replicates, mechanism, config, specs,
                          seed=None, workers=1, impute=None, level=0.95, log_dir=None):
    """Repeated SRS / nonresponse / MI / pooling loop.

    Parameters
    ----------
    population : Population
    n : int
        Sample size per replicate.
    mechanism : MarSpec, McarSpec or None
    config : RunConfig
    specs : list of EstimandSpec
    seed : int, optional
        Master seed; replicate ``r`` uses the ``r``-th spawned substream, so
        results do not depend on ``workers``.
    impute : callable, optional
        ``impute(sample, mask, rng) -> list of completed frames``; replaces
        the built-in engine (for scoring other imputation methods).
    log_dir : str, optional
        Writes ``replicates.csv`` with every per-replicate pooled result.
    """
    if n > population.N:
        raise ConfigError("sample size exceeds population size")
    population.register(specs)
    seeds = np.random.SeedSequence(seed).spawn(replicates)
    jobs = [(r, seeds[r], population, n, mechanism, config, specs, impute, level)
            for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    records, failures, rates = [], 0, []
    for r, recs, err, rate in results:
        rates.append(rate)
        if err is not None:
            failures += 1
            log.warning("replicate %d failed: %s", r, err)
            continue
        records.extend(recs)
    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
        pd.DataFrame(records).to_csv(os.path.join(log_dir, "replicates.csv"), index=False)
    table = score(records, population.truths) if records else pd.DataFrame()
    meta = {"N": population.N, "n": n, "replicates": replicates, "M": config.M,
            "iterations": config.iterations, "burn": config.burn, "thin": config.thin,
            "mean_missing_rate": float(np.mean(rates)) if rates else float("nan"), "seed": seed}
    return Scoreboard(table=table, failures=failures, replicates=replicates, meta=meta)


def score_external(population, completed, specs, level=0.95):
    """Scoreboard for imputations produced elsewhere.

    ``completed`` is a list (one entry per replicate) of lists of completed
    DataFrames drawn from ``population`` with the same column layout.
    """
    population.register(specs)
    records = []
    for r, frames in enumerate(completed):
        pooled, _ = pool_frames(frames, specs, population.N, level)
        records.extend({"replicate": r, "estimand": p.name, "qbar": p.qbar,
                        "lo": p.lo, "hi": p.hi} for p in pooled)
    return Scoreboard(table=score(records, population.truths), replicates=len(completed))


def missingness_rates(mask):
    """Per-column fraction of masked cells."""
    return mask.mean(axis=0)
