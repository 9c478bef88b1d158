"""Multiple-imputation driver: burn-in, thinning, snapshots and output files.

A run standardizes the continuous columns, initializes a chain, sweeps it,
and at each retained sweep converts the completed data back to the input
scale (recomposing semicontinuous columns). Observed cells are never taken
from the sampler; they are copied from the input.
"""

import csv
import hashlib
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from . import __version__
from .data import CATEGORICAL, CONTINUOUS, completed_rows, recompose_semicontinuous, standardize, write_rows
from .errors import ConfigError, SamplerError
from .gibbs import gibbs_sweep
from .state import (PriorConfig, TruncationConfig, init_state, load_checkpoint,
                    occupancy_report, save_checkpoint)

log = logging.getLogger(__name__)

CONFIG_FORMAT_VERSION = 1


@dataclass
class RunConfig:
    """Sampler length, retention and model configuration for one MI run.

    Reference (desk-scale) defaults: 4000 sweeps, 2000 burn-in, thin 400,
    M = 5.
    """

    iterations: int = 4000
    burn: int = 2000
    thin: int = 400
    M: int = 5
    seed: int = None
    chains: int = 1
    trunc: TruncationConfig = field(default_factory=TruncationConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    glom: bool = False
    checkpoint_every: int = 10_000
    trace: bool = True
    log_joint: bool = True

    def __post_init__(self):
        if self.glom:
            self.trunc = replace(self.trunc, Kz=1, Ky=1)

    def validate(self, need_pooling=True):
        if self.iterations < 1 or self.burn < 0 or self.thin < 1 or self.M < 1:
            raise ConfigError("iterations, thin and M must be positive and burn non-negative")
        if not self.burn < self.iterations:
            raise ConfigError(f"burn-in ({self.burn}) must be below iterations ({self.iterations})")
        if self.M * self.thin > self.iterations - self.burn:
            raise ConfigError(f"M*thin = {self.M * self.thin} exceeds the "
                              f"{self.iterations - self.burn} post-burn-in sweeps")
        if need_pooling and self.M < 2:
            raise ConfigError("M must be at least 2 for pooling")
        if self.chains < 1:
            raise ConfigError("chains must be at least 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")
        return self

    @property
    def retained_sweeps(self):
        """1-based sweep numbers whose completed data are emitted (latest span)."""
        return [self.iterations - self.thin * (self.M - 1 - k) for k in range(self.M)]

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        trunc = TruncationConfig(**d.pop("truncation", d.pop("trunc", {})) or {})
        prior = PriorConfig.from_dict(d.pop("prior", {}) or {})
        known = {"iterations", "burn", "thin", "M", "seed", "chains", "glom",
                 "checkpoint_every", "trace", "log_joint"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(trunc=trunc, prior=prior, **d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                spec = yaml.safe_load(fh)
            except yaml.YAMLError as e:
                raise ConfigError(f"cannot parse config {path}: {e}") from None
        if spec is not None and not isinstance(spec, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(spec)

    def to_dict(self):
        prior = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                 for k, v in asdict(self.prior).items() if v is not None}
        if "gamma" in prior:
            prior["gamma"] = [np.asarray(g).tolist() for g in prior["gamma"]]
        return {
            "iterations": self.iterations, "burn": self.burn, "thin": self.thin,
            "M": self.M, "seed": self.seed, "chains": self.chains, "glom": self.glom,
            "checkpoint_every": self.checkpoint_every, "trace": self.trace,
            "log_joint": self.log_joint, "truncation": asdict(self.trunc), "prior": prior,
        }


@dataclass
class Completed:
    """One completed dataset: 1-based codes and original-scale values."""

    X: np.ndarray
    Y: np.ndarray
    sweep: int


@dataclass
class MIOutput:
    dataset: object
    completed: list
    manifest: dict
    trace: list
    state: object = None  # final sampler state (standardized scale)

    @property
    def M(self):
        return len(self.completed)

    def frame(self, m):
        """Completed dataset ``m`` as a DataFrame in schema column order.

        Categorical columns hold level labels; semicontinuous columns are
        recomposed. Indicator helper columns are dropped.
        """
        import pandas as pd

        ds, c = self.dataset, self.completed[m]
        cols = {}
        xi = {nm: j for j, nm in enumerate(ds.x_names)}
        yi = {nm: v for v, nm in enumerate(ds.y_names)}
        links = {lk.name: lk for lk in ds.semicontinuous}
        for col in ds.schema.columns:
            if col.kind == CATEGORICAL:
                lv = list(col.levels)
                cols[col.name] = pd.Categorical.from_codes(c.X[:, xi[col.name]] - 1, lv)
            elif col.kind == CONTINUOUS:
                cols[col.name] = c.Y[:, yi[col.name]]
            else:
                lk = links[col.name]
                cols[col.name] = recompose_semicontinuous(c.X[:, lk.x_col], c.Y[:, lk.y_col])
        return pd.DataFrame(cols)

    def frames(self):
        return [self.frame(m) for m in range(self.M)]

    def rows(self, m):
        c = self.completed[m]
        return completed_rows(self.dataset, c.X, c.Y)

    def write(self, out_dir):
        """Write ``imp_01.csv`` ... , ``manifest.yaml`` and ``trace.csv``."""
        os.makedirs(out_dir, exist_ok=True)
        width = max(2, len(str(self.M)))
        paths = []
        for m in range(self.M):
            path = os.path.join(out_dir, f"imp_{m + 1:0{width}d}.csv")
            write_rows(path, self.dataset.schema, self.rows(m))
            paths.append(path)
        manifest = dict(self.manifest)
        manifest["files"] = [os.path.basename(p) for p in paths]
        with open(os.path.join(out_dir, "manifest.yaml"), "w", encoding="utf-8") as fh:
            yaml.safe_dump(_plain(manifest), fh, sort_keys=False)
        if self.trace:
            write_trace(os.path.join(out_dir, "trace.csv"), self.trace)
        return paths


def _plain(obj):
    """Convert numpy scalars/arrays inside nested containers to builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_trace(path, trace):
    keys = list(trace[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(trace)


def back_transform(state, dataset, record):
    """Completed data of ``state`` on the input scale, observed cells exact."""
    X = np.where(dataset.Rx, state.X + 1, dataset.X)
    Y = np.where(dataset.Ry, record.inverse(state.Y), dataset.Y)
    return X, Y


def trace_diagnostics(snapshots, dataset, record=None, occupancy=None, log_joint=None, sweeps=None):
    """One row of summaries per snapshot of completed data.

    Parameters
    ----------
    snapshots : sequence of (X, Y) pairs
        Completed 1-based codes and original-scale continuous values.
    occupancy : sequence of ``Occupancy``, optional
    log_joint : sequence of float, optional
    sweeps : sequence of int, optional
    """
    if len(snapshots) == 0:
        raise ValueError("at least one snapshot is required")
    rows = []
    for k, (X, Y) in enumerate(snapshots):
        row = {"sweep": sweeps[k] if sweeps is not None else k + 1}
        for v, name in enumerate(dataset.y_names):
            y = Y[:, v]
            q25, q50, q75 = np.percentile(y, [25, 50, 75])
            row.update({f"{name}_mean": y.mean(), f"{name}_sd": y.std(ddof=1) if len(y) > 1 else 0.0,
                        f"{name}_q25": q25, f"{name}_q50": q50, f"{name}_q75": q75})
        for j, name in enumerate(dataset.x_names):
            freq = np.bincount(X[:, j] - 1, minlength=len(dataset.levels[j])) / X.shape[0]
            for lab, f in zip(dataset.levels[j], freq):
                row[f"{name}={lab}"] = f
        if occupancy is not None:
            oc = occupancy[k]
            row.update({"occupied_Z": oc.z, "occupied_Hx": oc.x, "occupied_Hy": oc.y})
        if log_joint is not None:
            row["log_joint"] = log_joint[k]
        rows.append(row)
    return rows


def observed_checksum(rows, schema, mask=None):
    """SHA-256 over the observed cells (row, column, text) of rendered rows.

    ``mask[i][k]`` true marks a missing cell; by default cells equal to the
    column's missing token are treated as missing.
    """
    h = hashlib.sha256()
    for i, row in enumerate(rows):
        for k, col in enumerate(schema.columns):
            miss = mask[i][k] if mask is not None else row[k] == col.missing
            if not miss:
                h.update(f"{i}\x1f{k}\x1f{row[k]}\x1e".encode())
    return h.hexdigest()


def _seed_sequence(seed):
    return np.random.SeedSequence(seed)


def run_mi(dataset, config, rng=None, checkpoint_path=None, resume=False, progress=None):
    """Run one chain and return an :class:`MIOutput` with ``config.M`` datasets.

    Parameters
    ----------
    dataset : MixedDataset
        Input on its original scale.
    config : RunConfig
    rng : numpy Generator, optional
        Defaults to a generator seeded from ``config.seed``.
    checkpoint_path : str, optional
        Where to write a checkpoint every ``config.checkpoint_every`` sweeps.
        On a sampler failure the latest checkpoint is kept and its path is
        attached to the raised :class:`SamplerError`.
    resume : bool
        Continue from ``checkpoint_path`` instead of starting afresh.
    progress : callable, optional
        Called as ``progress(sweep, stats)`` after each sweep.
    """
    config.validate(need_pooling=False)
    if dataset.q == 0:
        raise ConfigError("at least one continuous or semicontinuous column is required")
    std, record = standardize(dataset)
    retained = set(config.retained_sweeps)

    if resume:
        if checkpoint_path is None or not os.path.exists(checkpoint_path):
            raise ConfigError("resume requested but no checkpoint found")
        state, rng, extra = load_checkpoint(checkpoint_path)
        completed = [Completed(**c) for c in extra["completed"]]
        trace = extra["trace"]
        start = state.sweep
    else:
        if rng is None:
            rng = np.random.default_rng(_seed_sequence(config.seed))
        state = init_state(std, config.trunc, config.prior, rng)
        completed, trace, start = [], [], 0

    def checkpoint():
        if checkpoint_path is None:
            return
        extra = {"completed": [asdict(c) for c in completed], "trace": trace}
        tmp = checkpoint_path + ".tmp"
        save_checkpoint(tmp, state, rng, extra)
        os.replace(tmp, checkpoint_path)

    warned = False
    for it in range(start + 1, config.iterations + 1):
        try:
            _, stats = gibbs_sweep(state, std, rng, compute_log_joint=config.trace and config.log_joint)
        except SamplerError as e:
            e.checkpoint = checkpoint_path if checkpoint_path and os.path.exists(checkpoint_path) else None
            raise
        occ = occupancy_report(state)
        if occ.flag and not warned and it > config.burn:
            log.warning("occupied components reached the truncation level for %s; "
                        "consider raising it", ", ".join(occ.saturated))
            warned = True
        if config.trace or it in retained:
            X, Y = back_transform(state, dataset, record)
        if config.trace:
            trace.extend(trace_diagnostics([(X, Y)], dataset, occupancy=[occ],
                                           log_joint=[stats.log_joint] if config.log_joint else None,
                                           sweeps=[it]))
        if it in retained:
            completed.append(Completed(X=X, Y=Y, sweep=it))
        if progress is not None:
            progress(it, stats)
        if it % config.checkpoint_every == 0:
            checkpoint()

    manifest = {
        "software": "hcmmld",
        "version": __version__,
        "config_format": CONFIG_FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": config.seed,
        "n": dataset.n,
        "retained_sweeps": [c.sweep for c in completed],
        "standardization": {"mean": record.mean.tolist(), "sd": record.sd.tolist(),
                            "columns": list(dataset.y_names)},
        "occupancy": asdict(occupancy_report(state)),
        "observed_checksum": observed_checksum(dataset.raw, dataset.schema) if dataset.raw else None,
    }
    return MIOutput(dataset=dataset, completed=completed, manifest=manifest, trace=trace,
                    state=state)


def run_chains(dataset, config, **kwargs):
    """Independent chains, one :class:`MIOutput` each, from spawned seeds."""
    children = _seed_sequence(config.seed).spawn(config.chains)
    outs = []
    for k, ss in enumerate(children):
        out = run_mi(dataset, config, rng=np.random.default_rng(ss), **kwargs)
        out.manifest["chain"] = k + 1
        outs.append(out)
    return outs


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh)
