"""Command line interface: ``golf {simulate,fit,predict,validate}``.

Every subcommand takes ``--config PATH``, a ``key = value`` file described
in :mod:`golf.config`.  ``fit`` writes a chain directory whose layout is
documented in :mod:`golf.persist`; ``predict`` reads one.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (including a failed ``validate`` suite).

Outputs are deterministic for fixed inputs and seed, except ``summary.txt``
which carries the timings and a timestamp.
"""

from __future__ import annotations

import argparse
import datetime
import os
import shutil
import sys

import numpy as np

from .config import RunConfig, format_config, read_config
from .errors import ConfigError, DataError, GolfError, InvalidParameterError, NumericalError
from .lattice import LatticeData, read_coords, read_matrix, write_coords, write_matrix
from .model import MeanModel
from .persist import chain_lock, load_chain, read_meta, save_chain, write_table

__all__ = ["main", "cmd_simulate", "cmd_fit", "cmd_predict", "cmd_validate", "load_data"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers


def _prepare_out(out, force, keep=False):
    """Create ``out``; refuse a non-empty directory unless forced or resumed."""
    if out is None:
        raise ConfigError("--out is required")
    if os.path.isdir(out) and os.listdir(out) and not keep:
        if not force:
            raise ConfigError(f"output directory {out} exists; use --force to overwrite")
        if os.path.exists(os.path.join(out, "lock")):
            raise ConfigError(f"{out} is locked by another run")
        shutil.rmtree(out)
    os.makedirs(out, exist_ok=True)


def _require(cfg: RunConfig, *keys):
    for k in keys:
        p = cfg.path(k)
        if p is None:
            raise ConfigError(f"config key {k!r} is required")
        if not os.path.exists(p):
            raise DataError(f"{k}: file not found: {p}")


def load_data(cfg: RunConfig) -> LatticeData:
    """Read the data matrix and coordinates named in ``cfg``."""
    _require(cfg, "data", "coords_s", "coords_x")
    values, mask = read_matrix(cfg.path("data"))
    coords_s, kron = read_coords(cfg.path("coords_s"))
    coords_x, _ = read_coords(cfg.path("coords_x"))
    if coords_x.shape[1] != 1:
        raise DataError(f"{cfg.path('coords_x')}: expected one column, got {coords_x.shape[1]}")
    try:
        return LatticeData(values, mask, coords_s, coords_x[:, 0], kron=kron)
    except GolfError as exc:
        raise DataError(str(exc)) from exc


def _basis(spec, coords, n, label, cfg):
    if spec == "intercept":
        return np.ones((n, 1))
    if spec == "linear":
        return np.column_stack([np.ones(n), np.asarray(coords, dtype=float).reshape(n, -1)])
    path = spec if os.path.isabs(spec) else os.path.join(cfg.base_dir, spec)
    H, _ = read_matrix(path, allow_missing=False)
    if H.shape[0] != n:
        raise DataError(f"{label} basis {path} has {H.shape[0]} rows, expected {n}")
    return H


def mean_model(cfg: RunConfig, data: LatticeData) -> MeanModel:
    n1, n2 = data.shape
    H1 = _basis(cfg.row_basis, data.coords_s, n1, "row", cfg) if cfg.mean in ("row", "mixed") else None
    H2 = _basis(cfg.col_basis, data.coords_x, n2, "column", cfg) if cfg.mean in ("col", "mixed") else None
    return MeanModel(cfg.mean, H1, H2)


def _summaries(chain):
    """Rows ``(name, mean, sd, q2.5, q50, q97.5)`` over post-burn-in draws."""
    lo, hi = chain.config.burn_iters + 1, chain.completed + 1
    if hi <= lo:
        lo = 0
    out = []

    def add(name, v):
        v = np.asarray(v, dtype=float)
        q = np.quantile(v, [0.025, 0.5, 0.975])
        out.append((name, float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, *map(float, q)))

    for k in range(chain.beta0.shape[1]):
        add(f"beta0_{k + 1}", chain.beta0[lo:hi, k])
    for k in range(chain.beta.shape[1]):
        add(f"beta_{k + 1}", chain.beta[lo:hi, k])
    for k in range(chain.eta.shape[1]):
        add(f"eta_{k + 1}", chain.eta[lo:hi, k])
    add("sigma0_sq", chain.sigma2[lo:hi])
    if chain.B is not None:
        for k in range(chain.B.shape[1]):
            add(f"b_{k + 1}", chain.B[lo:hi, k])
    return out


def _write_summary(path, chain, started, elapsed, resumed):
    rates = chain.acceptance_rates()
    lines = [f"# run summary written {datetime.datetime.now().isoformat(timespec='seconds')}",
             f"started = {started}", f"resumed = {'true' if resumed else 'false'}",
             f"completed = {chain.completed} of {chain.config.iterations}",
             f"wall_seconds = {elapsed:.3f}", "", "# acceptance rates"]
    fac = rates["factors"]
    if chain.proposed.get("factors"):
        lines.append(f"factors: min {fac.min():.3f} mean {fac.mean():.3f} max {fac.max():.3f}")
        lines.append("factors_each = " + ",".join(f"{r:.3f}" for r in fac))
    for k in ("beta0", "shared"):
        if chain.proposed.get(k):
            lines.append(f"{k} = {float(rates[k]):.3f}")
    lines += ["", "# seconds per block (this session)"]
    lines += [f"timing.{k} = {v:.3f}" for k, v in chain.timing.items()]
    lines += ["", "# posterior summaries (post burn-in)",
              f"{'parameter':<12} {'mean':>12} {'sd':>12} {'q2.5':>12} {'q50':>12} {'q97.5':>12}"]
    for row in _summaries(chain):
        lines.append(f"{row[0]:<12} " + " ".join(f"{v:>12.5g}" for v in row[1:]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, out, force=False):
    """Simulate a data set and write it as CSV files to ``out``."""
    from .oracle import simulate

    spec = cfg.sim_spec()
    _prepare_out(out, force)
    sim = simulate(spec)
    data = sim.data
    write_matrix(os.path.join(out, "data.csv"), np.nan_to_num(data.values), data.mask)
    write_matrix(os.path.join(out, "mask.csv"), data.mask.astype(int))
    write_matrix(os.path.join(out, "truth.csv"), sim.truth)
    write_coords(os.path.join(out, "coords_s.csv"), data.coords_s, data.kron)
    write_coords(os.path.join(out, "coords_x.csv"), data.coords_x)
    echo = RunConfig(**{**vars(cfg), "data": "data.csv", "coords_s": "coords_s.csv",
                        "coords_x": "coords_x.csv", "truth": "truth.csv"})
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(format_config(echo))
    return sim


def _progress(total):
    step = max(1, total // 10)

    def report(t, chain):
        if t % step == 0 or t == total:
            print(f"iteration {t}/{total}", file=sys.stderr, flush=True)
    return report


def cmd_fit(cfg: RunConfig, out, force=False, resume=False, quiet=False):
    """Run the sampler and write the chain directory ``out``."""
    from .sampler import mcmc_run

    mcfg = cfg.mcmc()
    if resume:
        read_meta(out)  # fails early without a chain
    data = load_data(cfg)
    mean = mean_model(cfg, data)
    prior = cfg.prior()
    _prepare_out(out, force, keep=resume)
    started = datetime.datetime.now().isoformat(timespec="seconds")
    tick = datetime.datetime.now()
    with chain_lock(out):
        previous = load_chain(out) if resume else None
        if previous is not None and not np.array_equal(previous.data.mask, data.mask):
            raise ConfigError("resumed chain was fitted to different data")
        progress = None if quiet else _progress(mcfg.stop_after or mcfg.iterations)
        try:
            chain = mcmc_run(mcfg, data, resume=previous, mean=mean, prior=prior, progress=progress)
        except ValueError as exc:
            if isinstance(exc, GolfError):
                raise
            raise ConfigError(str(exc)) from exc
        save_chain(chain, out)
        write_table(os.path.join(out, "posterior_summary.csv"),
                    ["parameter", "mean", "sd", "q2.5", "q50", "q97.5"], _summaries(chain))
        if cfg.figures:
            from .plotting import figure_dir, plot_traces

            plot_traces(chain, os.path.join(figure_dir(out), "traces.png"))
        elapsed = (datetime.datetime.now() - tick).total_seconds()
        _write_summary(os.path.join(out, "summary.txt"), chain, started, elapsed, resume)
    return chain


def _truth(cfg: RunConfig):
    p = cfg.path("truth")
    if p is None and cfg.path("data") is not None:
        cand = os.path.join(os.path.dirname(cfg.path("data")), "truth.csv")
        p = cand if os.path.exists(cand) else None
    if p is None or not os.path.exists(p):
        return None
    values, _ = read_matrix(p, allow_missing=False)
    return values


def cmd_predict(cfg: RunConfig, chain_dir, out=None, force=False):
    """Predictive mean and intervals from a saved chain."""
    from .oracle import compute_metrics
    from .sampler import predict

    chain = load_chain(chain_dir)
    out = chain_dir if out is None else out
    if out != chain_dir:
        _prepare_out(out, force)
    pred = predict(chain, level=cfg.level)
    data = chain.data
    write_matrix(os.path.join(out, "pred_mean.csv"), pred.mean)
    if pred.lo is not None:
        write_matrix(os.path.join(out, "pred_lo.csv"), pred.lo)
        write_matrix(os.path.join(out, "pred_hi.csv"), pred.hi)
    else:
        print(f"only {pred.n_draws} post-burn-in draws; intervals not computed", file=sys.stderr)
    truth = _truth(cfg)
    metrics = None
    if truth is not None:
        if truth.shape != data.shape:
            raise DataError(f"truth has shape {truth.shape}, data {data.shape}")
        held = ~data.mask
        if cfg.metrics and held.any() and pred.lo is not None:
            metrics = compute_metrics(pred.mean, pred.lo, pred.hi, truth, held)
            write_table(os.path.join(out, "metrics.csv"), ["rmse", "coverage", "length", "n_held_out", "level"],
                        [(metrics.rmse, metrics.coverage, metrics.length, int(held.sum()), pred.level)])
    if cfg.figures:
        from .plotting import figure_dir, plot_prediction

        plot_prediction(pred, data, os.path.join(figure_dir(out), "prediction.png"), truth)
    return pred, metrics


def cmd_validate(cfg: RunConfig, out=None, force=False):
    """Run the fast-versus-dense suite; returns the checks."""
    from .validation import format_report, run_suite

    checks = run_suite(cfg.validate_instances, cfg.seed, cfg.validate_inject)
    report = format_report(checks)
    print(report)
    if out is not None:
        _prepare_out(out, force)
        write_table(os.path.join(out, "validate.csv"), ["check", "instances", "max_error", "tolerance", "passed"],
                    [(c.name, c.count, c.max_err, c.tol, "true" if c.passed else "false") for c in checks])
    return checks


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="golf", description="Latent factor Gaussian processes on lattices.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "simulate a data set"), ("fit", "run the sampler"),
                       ("predict", "predict from a chain"), ("validate", "check fast against dense")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="key = value configuration file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--threads", type=int, default=0, help="BLAS threads (0 = library default)")
        if name == "fit":
            s.add_argument("--resume", action="store_true", help="continue the chain in --out")
            s.add_argument("--quiet", action="store_true", help="no progress output")
        if name == "predict":
            s.add_argument("--chain", help="chain directory (default: --out)")
    return p


def _run(args):
    cfg = read_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg.seed = args.seed
    if args.command == "simulate":
        cmd_simulate(cfg, args.out, args.force)
    elif args.command == "fit":
        cmd_fit(cfg, args.out, args.force, args.resume, args.quiet)
    elif args.command == "predict":
        chain = args.chain or args.out
        if chain is None:
            raise ConfigError("predict needs --chain or --out")
        _, metrics = cmd_predict(cfg, chain, args.out if args.chain else None, args.force)
        if metrics is not None:
            print(f"rmse = {metrics.rmse:.6g}\ncoverage = {metrics.coverage:.6g}\nlength = {metrics.length:.6g}")
    else:
        checks = cmd_validate(cfg, args.out, args.force)
        if not all(c.passed for c in checks):
            return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 0:
        print("error: --threads must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.threads > 0:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return _run(args)
        return _run(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GolfError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
