"""Command-line front end: ``impute``, ``pool``, ``simulate``, ``validate``.

Exit codes: 0 success, 1 input or contract error (one line starting with
``hcmmld-error:``), 2 sampler failure (the line names the checkpoint).
"""

import argparse
import logging
import os
import sys

from . import __version__

SEED_ENV = "HCMMLD_SEED"
CONFIG_FORMAT_VERSION = 1

log = logging.getLogger("hcmmld")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="hcmmld", description="Multiple imputation for mixed categorical "
                                           "and continuous data.")
    p.add_argument("--version", action="version",
                   version=f"hcmmld {__version__} (config format {CONFIG_FORMAT_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"master seed (overrides {SEED_ENV} and the config file)")
    common.add_argument("--threads", type=int, default=None,
                        help="cap on numerical-library threads and worker processes")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="{impute,pool,simulate,validate}",
                           parser_class=_Parser)

    s = sub.add_parser("impute", parents=[common], help="create M completed datasets")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    s.add_argument("--no-plots", action="store_true", help="skip the trace figure")

    s = sub.add_parser("pool", parents=[common], help="Rubin-pool estimands over imputations")
    s.add_argument("--imputations", required=True, help="directory of imp_*.csv files")
    s.add_argument("--estimands", required=True)
    s.add_argument("--out", required=True, help="output table (csv)")
    s.add_argument("--level", type=float, default=0.95)

    s = sub.add_parser("simulate", parents=[common], help="repeated-sampling study")
    s.add_argument("--population", required=True,
                   help="generator name (sipp_like) or a YAML population spec")
    s.add_argument("--mechanism", required=True,
                   help="preset name (survey-mar, mcar) or a YAML mechanism spec")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-plots", action="store_true")

    s = sub.add_parser("validate", parents=[common], help="check a data file against a schema")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    return p


def _fail(kind, message, code=1):
    print(f"hcmmld-error: {kind}: {message}", file=sys.stderr)
    return code


def _resolve_seed(flag, config_seed):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if config_seed is not None:
        return int(config_seed)
    import numpy as np

    # record fresh entropy so the run can still be reproduced
    return int(np.random.SeedSequence().entropy % (2 ** 63))


def cmd_validate(args):
    from .data import Schema, load_dataset

    schema = Schema.load(args.schema)
    ds = load_dataset(args.data, schema)
    print(f"ok: {ds.n} records, {len(schema.columns)} columns")
    for j, nm in enumerate(ds.x_names):
        print(f"  {nm}: categorical, {len(ds.levels[j])} levels, "
              f"{ds.Rx[:, j].mean():.3f} missing")
    for v, nm in enumerate(ds.y_names):
        print(f"  {nm}: continuous, {ds.Ry[:, v].mean():.3f} missing")
    return 0


def cmd_impute(args):
    from .data import Schema, load_dataset
    from .engine import RunConfig, run_chains, run_mi

    schema = Schema.load(args.schema)
    ds = load_dataset(args.data, schema)
    config = RunConfig.load(args.config)
    config.seed = _resolve_seed(args.seed, config.seed)
    config.validate(need_pooling=False)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.pkl")
    if config.chains > 1:
        outs = run_chains(ds, config)
        dirs = [os.path.join(args.out, f"chain_{k + 1:02d}") for k in range(len(outs))]
    else:
        outs = [run_mi(ds, config, checkpoint_path=ckpt, resume=args.resume)]
        dirs = [args.out]
    for out, d in zip(outs, dirs):
        out.write(d)
        if out.trace and not args.no_plots:
            from .plotting import trace_figure

            trace_figure(out.trace, os.path.join(d, "trace.png"),
                         retained=out.manifest["retained_sweeps"])
        log.info("wrote %d completed datasets to %s", out.M, d)
    if os.path.exists(ckpt):
        os.remove(ckpt)
    return 0


def cmd_pool(args):
    import glob

    import pandas as pd

    from .pooling import load_estimands, pool_frames, pooled_table

    files = sorted(glob.glob(os.path.join(args.imputations, "imp_*.csv")))
    if len(files) < 2:
        raise UsageError(f"--imputations: need at least two imp_*.csv files in {args.imputations}")
    specs, N = load_estimands(args.estimands)
    frames = [pd.read_csv(f, dtype=str, keep_default_na=False) for f in files]
    pooled, skipped = pool_frames(frames, specs, N, args.level)
    table = pooled_table(pooled)
    table.to_csv(args.out, index=False)
    for name in skipped:
        log.warning("estimand %s skipped: empty subgroup", name)
    return 0


def _population(spec, seed):
    import numpy as np
    import yaml

    from .pooling import EstimandSpec, load_estimands
    from .simulation import build_population, sipp_estimands

    doc = {"generator": spec}
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    gen = doc.get("generator", "sipp_like")
    N = int(doc.get("N", 20_000))
    pop_seed = doc.get("seed", seed)
    pop = build_population(gen, N, np.random.default_rng(pop_seed))
    if "estimands" in doc:
        est = doc["estimands"]
        specs = load_estimands(est)[0] if isinstance(est, str) else [EstimandSpec.from_dict(e) for e in est]
    else:
        specs = sipp_estimands()
    return pop, specs, int(doc.get("n", 1000)), int(doc.get("replicates", 100)), doc


def cmd_simulate(args):
    import yaml

    from .engine import RunConfig, _plain
    from .simulation import load_mechanism, run_repeated_sampling

    config = RunConfig.load(args.config)
    config.seed = _resolve_seed(args.seed, config.seed)
    config.trace = False
    config.validate()
    pop, specs, n, reps, doc = _population(args.population, config.seed)
    mech = load_mechanism(args.mechanism)
    os.makedirs(args.out, exist_ok=True)
    sb = run_repeated_sampling(pop, n, reps, mech, config, specs, seed=config.seed,
                               workers=args.threads or 1, log_dir=args.out)
    sb.to_csv(os.path.join(args.out, "scoreboard.csv"))
    meta = dict(sb.meta, failures=sb.failures, population=doc, mechanism=args.mechanism,
                config=config.to_dict(), version=__version__)
    with open(os.path.join(args.out, "manifest.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(_plain(meta), fh, sort_keys=False)
    if not args.no_plots and len(sb.table):
        from .plotting import bias_figure, coverage_figure

        coverage_figure(sb.table, os.path.join(args.out, "coverage.png"))
        bias_figure(sb.table, os.path.join(args.out, "bias.png"))
    print(sb.table.to_string(index=False))
    return 0


COMMANDS = {"impute": cmd_impute, "pool": cmd_pool, "simulate": cmd_simulate,
            "validate": cmd_validate}


def dispatch(argv=None):
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail("usage", str(e))
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return _fail("usage", "a subcommand is required")
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    from .errors import DataError, HCMMError, SamplerError

    try:
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be at least 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except SamplerError as e:
        ck = getattr(e, "checkpoint", None)
        return _fail("sampler", f"{e} (checkpoint: {ck or 'none'})", code=2)
    except DataError as e:
        return _fail("data", str(e))
    except UsageError as e:
        return _fail("usage", str(e))
    except HCMMError as e:
        return _fail("config", str(e))
    except FileNotFoundError as e:
        return _fail("io", f"{e.filename}: file not found")
    except OSError as e:
        return _fail("io", str(e))


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
