"""Reading and writing chain directories.

A chain directory holds::

    meta.txt              key = value: dimensions, progress, counters and
                          the sampler and prior settings (``config.*``,
                          ``prior.*``)
    trace_beta0.csv       one row per stored iteration (row 0 is the start),
    trace_beta.csv        first column the iteration number, header line
    trace_eta.csv         naming the columns
    trace_sigma0.csv      noise variance
    trace_B.csv           stacked mean coefficients (B1 rows, then B2 rows);
                          only with a nonzero mean
    input/                copy of the data, coordinates and mean bases
    imputed/cells.csv     0-based (row, col) of every unobserved cell, in the
                          column order of the draw files
    imputed/draws.npy     float64 array (iterations x unobserved cells), or
    imputed/sketch_*.csv  running mean and quantile estimates when the raw
                          draws would exceed the memory budget
    latent_mean.csv       post-burn-in mean of the noiseless signal
    state/*.npy           everything needed to resume the chain
    factors.npy           stored factor draws, when requested
    lock                  present while a process writes the directory

All text files are deterministic functions of the inputs and seed; run
timings and timestamps go only into ``summary.txt``, written by the CLI.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from .errors import ConfigError, DataError
from .lattice import LatticeData, format_float, read_coords, read_matrix, write_coords, write_matrix
from .model import GolfModel, MeanModel, ModelState, PriorSpec
from .sampler import BLOCKS, Chain, McmcConfig
from .sketch import P2Quantile, RunningMean

__all__ = ["save_chain", "load_chain", "chain_lock", "read_meta", "write_table", "read_table"]

FORMAT = "golf-chain 1"


@contextlib.contextmanager
def chain_lock(path):
    """Hold an exclusive lock file in ``path`` for the duration of the block."""
    os.makedirs(path, exist_ok=True)
    lock = os.path.join(path, "lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{path} is locked by another run (delete {lock} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(lock)


def write_table(path, header, rows):
    """CSV with a header line; numbers written with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else format_float(v) for v in row) + "\n")


def read_table(path):
    """Inverse of :func:`write_table` for numeric tables: ``(header, array)``."""
    if not os.path.exists(path):
        raise DataError(f"{path}: file not found")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip() for line in fh if line.strip()]
    if not rows:
        return header, np.empty((0, len(header)))
    from .lattice import _read_matrix_lines

    values, _ = _read_matrix_lines(rows, path)
    return header, values


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def read_meta(path):
    """Key/value pairs of ``meta.txt`` as strings."""
    meta = os.path.join(path, "meta.txt")
    if not os.path.exists(meta):
        raise ConfigError(f"{path}: no chain metadata (meta.txt)")
    out = {}
    with open(meta) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                k, v = (p.strip() for p in line.split("=", 1))
                out[k] = v
    if out.get("format") != FORMAT:
        raise ConfigError(f"{path}: unsupported chain format {out.get('format')!r}")
    return out


def _trace(path, name, arr, n_rows, labels):
    it = np.arange(n_rows)
    rows = np.column_stack([it, arr[:n_rows]])
    write_table(os.path.join(path, name), ["iteration"] + labels, rows)


def save_chain(ch: Chain, path):
    """Write ``ch`` to directory ``path`` (created if needed)."""
    os.makedirs(os.path.join(path, "input"), exist_ok=True)
    os.makedirs(os.path.join(path, "imputed"), exist_ok=True)
    os.makedirs(os.path.join(path, "state"), exist_ok=True)
    m, data, st = ch.model, ch.data, ch.state
    n = ch.completed + 1
    cfg = ch.config
    lines = [f"format = {FORMAT}", f"n1 = {m.n1}", f"n2 = {m.n2}", f"p1 = {m.p1}", f"d = {m.d}",
             f"kron = {_fmt(m.kron)}", f"mean = {m.mean.variant.value}",
             f"n_missing = {data.n_missing}", f"completed = {ch.completed}",
             f"storage = {'draws' if ch.sketch_lo is None else 'sketch'}",
             f"accepted.beta0 = {ch.accepted['beta0']}", f"accepted.shared = {ch.accepted['shared']}",
             f"accepted.factors = {_fmt([int(a) for a in ch.accepted['factors']])}"]
    lines += [f"proposed.{k} = {v}" for k, v in ch.proposed.items()]
    lines += [f"config.{k} = {_fmt(v)}" for k, v in vars(cfg).items()]
    lines += [f"prior.{k} = {_fmt(v)}" for k, v in vars(m.prior).items()]
    with open(os.path.join(path, "meta.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    inp = os.path.join(path, "input")
    write_matrix(os.path.join(inp, "data.csv"), np.nan_to_num(data.values), data.mask)
    write_coords(os.path.join(inp, "coords_s.csv"), data.coords_s, data.kron)
    write_coords(os.path.join(inp, "coords_x.csv"), data.coords_x)
    if m.mean.has_row:
        write_matrix(os.path.join(inp, "basis_row.csv"), m.mean.H1)
    if m.mean.has_col:
        write_matrix(os.path.join(inp, "basis_col.csv"), m.mean.H2)

    _trace(path, "trace_beta0.csv", ch.beta0, n, [f"beta0_{k + 1}" for k in range(m.p1)])
    _trace(path, "trace_beta.csv", ch.beta, n, [f"beta_{k + 1}" for k in range(m.d)])
    _trace(path, "trace_eta.csv", ch.eta, n, [f"eta_{k + 1}" for k in range(m.d)])
    _trace(path, "trace_sigma0.csv", ch.sigma2[:, None], n, ["sigma0_sq"])
    if ch.B is not None:
        _trace(path, "trace_B.csv", ch.B, n, [f"b_{k + 1}" for k in range(ch.B.shape[1])])

    imp = os.path.join(path, "imputed")
    iu, ju = np.nonzero(~data.mask)
    write_table(os.path.join(imp, "cells.csv"), ["row", "col"], np.column_stack([iu, ju]))
    sdir = os.path.join(path, "state")
    if ch.imputed is not None:
        np.save(os.path.join(imp, "draws.npy"), ch.imputed)
    elif ch.sketch_lo is not None:
        rows = np.column_stack([ch.sketch_mean.mean, ch.sketch_lo.value, ch.sketch_hi.value])
        write_table(os.path.join(imp, "sketch_summary.csv"), ["mean", "lo", "hi"], rows)
        for name, sk in (("sketch_lo", ch.sketch_lo), ("sketch_hi", ch.sketch_hi),
                         ("sketch_mean", ch.sketch_mean)):
            for k, v in sk.state().items():
                np.save(os.path.join(sdir, f"{name}.{k}.npy"), v)
    if ch.latent is not None and ch.latent.count:
        write_matrix(os.path.join(path, "latent_mean.csv"), ch.latent.mean)
    if ch.latent is not None:
        for k, v in ch.latent.state().items():
            np.save(os.path.join(sdir, f"latent.{k}.npy"), v)
    for k in ("beta0", "beta", "eta", "Y", "B1", "B2"):
        v = getattr(st, k)
        if v is not None:
            np.save(os.path.join(sdir, f"{k}.npy"), v)
    np.save(os.path.join(sdir, "sigma2.npy"), np.array(st.sigma2))
    if ch.factors:
        np.save(os.path.join(path, "factors.npy"), np.stack(ch.factors))


def _parse_value(text):
    t = text.strip()
    if t == "none":
        return None
    if t in ("true", "false"):
        return t == "true"
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if "," in t:
        return tuple(_parse_value(p) for p in t.split(","))
    return t


def _config_from_meta(meta):
    kw = {k[7:]: _parse_value(v) for k, v in meta.items() if k.startswith("config.")}
    for k in ("burn_in", "d_threshold", "init_log_beta0", "init_log_beta", "init_log_eta",
              "level", "prop_sd_beta0", "prop_sd_factor"):
        if kw.get(k) is not None:
            kw[k] = float(kw[k])
    if isinstance(kw.get("kron"), int):
        kw["kron"] = (kw["kron"],)
    return McmcConfig(**kw)


def load_chain(path) -> Chain:
    """Rebuild a chain written by :func:`save_chain`."""
    meta = read_meta(path)
    cfg = _config_from_meta(meta)
    inp = os.path.join(path, "input")
    values, mask = read_matrix(os.path.join(inp, "data.csv"))
    coords_s, kron = read_coords(os.path.join(inp, "coords_s.csv"))
    coords_x, _ = read_coords(os.path.join(inp, "coords_x.csv"))
    data = LatticeData(values, mask, coords_s, coords_x[:, 0], kron=kron)
    variant = meta["mean"]
    H1 = read_matrix(os.path.join(inp, "basis_row.csv"))[0] if variant in ("row", "mixed") else None
    H2 = read_matrix(os.path.join(inp, "basis_col.csv"))[0] if variant in ("col", "mixed") else None
    pkw = {k[6:]: _parse_value(v) for k, v in meta.items() if k.startswith("prior.")}
    prior = PriorSpec(**{k: None if v is None else float(v) for k, v in pkw.items()})
    mkron = _parse_value(meta["kron"])
    d = int(meta["d"])
    model = GolfModel(data.coords_s, data.coords_x, None if mkron else d, kron=mkron,
                      family_s=cfg.family_s, family_x=cfg.family_x,
                      mean=MeanModel(variant, H1, H2), prior=prior)

    sdir = os.path.join(path, "state")

    def ld(name):
        f = os.path.join(sdir, f"{name}.npy")
        return np.load(f) if os.path.exists(f) else None

    state = ModelState(ld("beta0"), ld("beta"), ld("eta"), float(ld("sigma2")), ld("Y"),
                       ld("B1"), ld("B2"))
    T = cfg.iterations
    completed = int(meta["completed"])

    def trace(name, width):
        out = np.full((T + 1, width), np.nan)
        _, arr = read_table(os.path.join(path, name))
        out[: arr.shape[0]] = arr[:, 1:]
        return out

    nb = 0 if state.B1 is None else state.B1.size
    nb += 0 if state.B2 is None else state.B2.size
    ch = Chain(
        config=cfg, model=model, data=data,
        beta0=trace("trace_beta0.csv", model.p1), beta=trace("trace_beta.csv", d),
        eta=trace("trace_eta.csv", d), sigma2=trace("trace_sigma0.csv", 1)[:, 0],
        B=trace("trace_B.csv", nb) if nb else None,
        accepted={"factors": np.array(_as_list(meta["accepted.factors"]), dtype=int),
                  "beta0": int(meta["accepted.beta0"]), "shared": int(meta["accepted.shared"])},
        proposed={k[9:]: int(v) for k, v in meta.items() if k.startswith("proposed.")},
        timing={b: 0.0 for b in BLOCKS}, state=state, completed=completed,
    )
    draws = os.path.join(path, "imputed", "draws.npy")
    if meta["storage"] == "draws" and data.n_missing:
        ch.imputed = np.load(draws)
    elif meta["storage"] == "sketch":
        def sk(name):
            return {f.split(".")[1]: np.load(os.path.join(sdir, f))
                    for f in sorted(os.listdir(sdir)) if f.startswith(name + ".")}
        ch.sketch_lo = P2Quantile.from_state(sk("sketch_lo"))
        ch.sketch_hi = P2Quantile.from_state(sk("sketch_hi"))
        ch.sketch_mean = RunningMean.from_state(sk("sketch_mean"))
    lat = {k: ld(f"latent.{k}") for k in ("total", "count")}
    ch.latent = RunningMean.from_state(lat) if lat["total"] is not None else RunningMean((model.n1, model.n2))
    fac = os.path.join(path, "factors.npy")
    if os.path.exists(fac):
        ch.factors = list(np.load(fac))
    return ch


def _as_list(text):
    v = _parse_value(text)
    return list(v) if isinstance(v, tuple) else [v]

