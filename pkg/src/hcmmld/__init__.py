"""Multiple imputation of mixed categorical and continuous data with a
hierarchically coupled mixture model with local dependence.

Submodules are imported lazily so that command-line options such as
``--threads`` can take effect before the numerical libraries load.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "Schema": "data", "ColumnSpec": "data", "MixedDataset": "data", "load_dataset": "data",
    "standardize": "data", "encode_design": "data", "DesignSpec": "data",
    "TruncationConfig": "state", "PriorConfig": "state", "ModelState": "state",
    "init_state": "state", "stick_break": "state", "occupancy_report": "state",
    "gibbs_sweep": "gibbs",
    "joint_density": "density", "marginal_px": "density",
    "conditional_y_given_x": "density", "sample_predictive": "density",
    "RunConfig": "engine", "MIOutput": "engine", "run_mi": "engine",
    "EstimandResult": "pooling", "PooledEstimate": "pooling", "rubin_pool": "pooling",
    "run_repeated_sampling": "simulation", "Scoreboard": "simulation",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    mod = _EXPORTS.get(name)
    if mod is None:
        raise AttributeError(f"module 'hcmmld' has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(f".{mod}", __name__), name)
