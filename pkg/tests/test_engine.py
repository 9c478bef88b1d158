import numpy as np
import pandas as pd
import pytest
import yaml

import criteria
from hcmmld import engine
from hcmmld.data import load_dataset
from hcmmld.engine import RunConfig, run_chains, run_mi, trace_diagnostics
from hcmmld.errors import ConfigError, SamplerError
from hcmmld.state import TruncationConfig

from conftest import toy_dataset

SMALL = dict(trunc=TruncationConfig(3, 4, 3))


def test_mi_mechanics():
    bad = [f"{label}: {detail}" for label, ok, detail in criteria.mi_mechanics() if not ok]
    assert not bad, bad


def test_retention_index_arithmetic():
    cfg = RunConfig(iterations=30, burn=10, thin=10, M=2, seed=1, **SMALL)
    assert cfg.retained_sweeps == [20, 30]
    rows, sc = criteria.tiny_table()
    out = run_mi(load_dataset(rows, sc), cfg)
    assert [c.sweep for c in out.completed] == [20, 30] == out.manifest["retained_sweeps"]


@pytest.mark.parametrize("kw", [
    dict(iterations=10, burn=10), dict(iterations=20, burn=10, thin=10, M=2),
    dict(thin=0), dict(M=0), dict(chains=0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw).validate()


def test_config_round_trip(tmp_path):
    cfg = RunConfig(iterations=50, burn=10, thin=20, M=2, seed=3, glom=True)
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    back = RunConfig.load(p)
    assert back.to_dict() == cfg.to_dict() and back.trunc.Kz == 1 and back.trunc.Ky == 1
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"iterations": 5, "sweeps": 3})


def test_semicontinuous_outputs_follow_indicator():
    rows, sc = criteria.tiny_table(n=60, miss=0.4, seed=3)
    out = run_mi(load_dataset(rows, sc), RunConfig(iterations=30, burn=10, thin=10, M=2, seed=5, **SMALL))
    ds = out.dataset
    lk = ds.semicontinuous[0]
    for m, c in enumerate(out.completed):
        fr = out.frame(m)
        zero = c.X[:, lk.x_col] == 1
        assert np.all(fr["earn"].to_numpy()[zero] == 0.0)
        assert np.all(fr["earn"].to_numpy()[~zero] != 0.0)
        assert list(fr.columns) == ["sex", "grp", "age", "earn"]


def test_frames_preserve_observed_values():
    rows, sc = criteria.tiny_table(seed=9)
    out = run_mi(load_dataset(rows, sc), RunConfig(iterations=20, burn=0, thin=10, M=2, seed=5, **SMALL))
    fr = out.frame(0)
    for i, r in enumerate(rows):
        if r[2] != "NA":
            assert fr["age"].iloc[i] == float(r[2])
        if r[0] != "NA":
            assert fr["sex"].iloc[i] == r[0]


def test_write_outputs(tmp_path):
    rows, sc = criteria.tiny_table()
    out = run_mi(load_dataset(rows, sc), RunConfig(iterations=30, burn=10, thin=10, M=2, seed=5, **SMALL))
    paths = out.write(tmp_path)
    assert [p.split("/")[-1] for p in paths] == ["imp_01.csv", "imp_02.csv"]
    man = engine.read_manifest(tmp_path / "manifest.yaml")
    assert man["seed"] == 5 and man["retained_sweeps"] == [20, 30]
    tr = pd.read_csv(tmp_path / "trace.csv")
    assert len(tr) == 30 and np.all(np.isfinite(tr["log_joint"]))
    back = pd.read_csv(paths[0], dtype=str, keep_default_na=False)
    assert back.values.tolist() == out.rows(0)


def test_trace_single_snapshot_and_constant_when_complete():
    ds = toy_dataset(miss=0.0)
    rows = trace_diagnostics([(ds.X, ds.Y)], ds)
    assert len(rows) == 1 and all(np.isfinite(v) for v in rows[0].values())
    assert rows[0]["y1_mean"] == ds.Y[:, 0].mean()
    full = [r for r in criteria.tiny_table()[0] if "NA" not in r]
    out = run_mi(load_dataset(full, criteria.tiny_table()[1]),
                 RunConfig(iterations=15, burn=5, thin=5, M=2, seed=1, **SMALL))
    means = {r["age_mean"] for r in out.trace}
    assert len(means) == 1


def test_trace_matches_retained_snapshots():
    rows, sc = criteria.tiny_table()
    out = run_mi(load_dataset(rows, sc), RunConfig(iterations=30, burn=10, thin=10, M=2, seed=7, **SMALL))
    for c in out.completed:
        tr = out.trace[c.sweep - 1]
        assert tr["sweep"] == c.sweep and np.isclose(tr["age_mean"], c.Y[:, 0].mean(), rtol=1e-14)


class _Stop(Exception):
    pass


def test_resume_is_bit_exact(tmp_path):
    rows, sc = criteria.tiny_table()
    cfg = dict(iterations=40, burn=10, thin=10, M=3, seed=21, checkpoint_every=10, **SMALL)
    full = run_mi(load_dataset(rows, sc), RunConfig(**cfg))
    ck = str(tmp_path / "ck.pkl")

    def stop(it, stats):
        if it == 25:
            raise _Stop

    with pytest.raises(_Stop):
        run_mi(load_dataset(rows, sc), RunConfig(**cfg), checkpoint_path=ck, progress=stop)
    resumed = run_mi(load_dataset(rows, sc), RunConfig(**cfg), checkpoint_path=ck, resume=True)
    assert [c.sweep for c in resumed.completed] == [20, 30, 40]
    for a, b in zip(full.completed, resumed.completed):
        assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert len(resumed.trace) == 40


def test_sampler_error_names_checkpoint(tmp_path, monkeypatch):
    rows, sc = criteria.tiny_table()
    ck = str(tmp_path / "ck.pkl")
    real = engine.gibbs_sweep

    def flaky(state, *a, **k):
        if state.sweep == 12:
            raise SamplerError("injected failure")
        return real(state, *a, **k)

    monkeypatch.setattr(engine, "gibbs_sweep", flaky)
    with pytest.raises(SamplerError) as e:
        run_mi(load_dataset(rows, sc), RunConfig(iterations=30, burn=10, thin=10, M=2, seed=1,
                                                 checkpoint_every=5, **SMALL), checkpoint_path=ck)
    assert e.value.checkpoint == ck


def test_requires_a_continuous_column():
    from hcmmld.data import Schema

    sc = Schema.from_dict({"columns": [{"name": "a", "kind": "categorical", "levels": ["x", "y"]}]})
    with pytest.raises(ConfigError):
        run_mi(load_dataset([["x"], ["y"], [""]], sc), RunConfig(iterations=2, burn=0, thin=1, M=2))


def test_chains_use_independent_streams():
    rows, sc = criteria.tiny_table()
    outs = run_chains(load_dataset(rows, sc), RunConfig(iterations=20, burn=10, thin=10, M=1, seed=3,
                                                        chains=2, **SMALL))
    assert [o.manifest["chain"] for o in outs] == [1, 2]
    assert not np.array_equal(outs[0].completed[0].Y, outs[1].completed[0].Y)
