"""Named experiment recipes, replication fan-out and result files."""
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, analysis, metrics, schemes
from ._accel import BACKEND
from .topology import ArrivalProcess, sample_instance

CSV_HEADER = ["grid_param", "scheme", "metric", "mean", "stderr", "replications", "seed0"]


def replication_seed(master, grid_idx, rep):
    ss = np.random.SeedSequence(master, spawn_key=(grid_idx, rep))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# Grid construction


def build_grid(cfg):
    """List of (label, params) for the recipe."""
    if cfg.recipe in ("scaling", "allocation-comparison"):
        return [(f"n={n};m={cfg.m_for(n)}", {"n": n, "m": cfg.m_for(n)}) for n in cfg.n_grid]
    n = cfg.n_grid[0]
    ms = cfg.m_grid or [cfg.m_for(n)]
    if cfg.recipe == "delay-decay":
        return [(f"m={m}", {"n": n, "m": m}) for m in ms]
    return [(f"load={rho:g};m={m}", {"n": n, "m": m, "load": rho})
            for rho in cfg.load_grid for m in ms]


def _instance(cfg, p, seed):
    return sample_instance(p["m"], p["n"], cfg.gamma, cfg.size_dist(p["n"]), cfg.overlap,
                           cfg.share_p, seed=seed)


def _scheme_cfg(cfg, kind, layout):
    tracked = None
    if cfg.tracked == "first-session":
        tracked = tuple(layout.receiver_sets[0].tolist())
    fidelity = cfg.fidelity if kind in ("mc_mwc", "mwc_static") else "ideal"
    return schemes.SchemeConfig(kind, fidelity=fidelity, block=cfg.block, warmup=cfg.warmup,
                                tracked=tracked, hist_len=cfg.hist_len)


# ---------------------------------------------------------------------------
# One replication of one grid point; returns ([(scheme, metric, value)], {scheme: report})


def _work(item):
    cfg, gi, p, rep, seed = item
    layout, stats = _instance(cfg, p, seed)
    m = layout.m
    rows, reports = [], {}
    if cfg.recipe in ("scaling", "allocation-comparison"):
        w = schemes.static_weights(stats, layout)
        opt = schemes.optimal_static_allocation(stats, layout)
        rnd = schemes.random_allocation(m, np.random.default_rng(seed), w)
        upper = np.mean([schemes.static_capacity_upper(stats, layout, h) for h in range(m)])
        for kind in cfg.schemes:
            if kind == "mc_mwc":
                rows.append((kind, "capacity", schemes.mc_mwc_capacity(stats, layout)))
            elif kind in ("mwc_static", "rlnc_static"):
                rows.append((kind, "capacity", opt.objective / m))
            elif kind == "rlnc_random":
                rows.append((kind, "capacity", rnd.objective / m))
        rows.append(("static", "upper_bound", float(upper)))
        if cfg.recipe == "scaling":
            return gi, rep, seed, rows, reports
        arrivals = cfg.arrivals
    elif cfg.recipe == "load-sweep":
        lam = p["load"] * schemes.mc_mwc_capacity(stats, layout)
        arrivals = ArrivalProcess.bernoulli(min(lam, 1.0))
    else:
        arrivals = cfg.arrivals
    for kind in cfg.schemes:
        run = schemes.run_scheme(_scheme_cfg(cfg, kind, layout), (layout, stats), arrivals,
                                 cfg.horizon, seed)
        rep_ = metrics.collect(run)
        reports[kind] = rep_
        rows.append((kind, "throughput", float(np.nanmean(rep_.throughput))))
        rows.append((kind, "mean_delay", rep_.mean_delay))
        rows.append((kind, "stable", float(rep_.stable)))
        if cfg.recipe == "delay-decay":
            rows.append((kind, "theory_rate", theory_rate(kind, stats, layout, arrivals, run)))
    return gi, rep, seed, rows, reports


def theory_rate(kind, stats, layout, arrivals, run):
    """Predicted tail exponent for session 0 (worst tracked receiver)."""
    mgf = analysis.MGFSpec.from_arrivals(arrivals)
    rx = layout.receiver_sets[0]
    try:
        if kind == "fifo_bound":
            return analysis.phi_const(mgf)
        if kind == "mc_mwc":
            return min(analysis.rate_function(stats.gamma[i], mgf, layout.m).phi for i in rx)
        if kind == "mwc_static":
            j = run.allocation.g[0]
            return min(analysis.rate_function([stats.gamma[i, j]], mgf, 1).phi for i in rx)
    except analysis.AnalysisError:
        return float("nan")
    return float("nan")


# ---------------------------------------------------------------------------
# Driver


def _stderr(vals):
    v = np.asarray(vals, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        return float("nan")
    return float(v.std(ddof=1) / math.sqrt(v.size))


def _mean(vals):
    v = np.asarray(vals, dtype=float)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else float("nan")


def _f(x):
    return repr(float(x))


def run_experiment(cfg, out_dir=None, workers=1):
    out_dir = out_dir or cfg.output
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise RuntimeError(f"unwritable output path {out_dir}: {exc}") from None

    grid = build_grid(cfg)
    items = [(cfg, gi, p, r, replication_seed(cfg.seed, gi, r))
             for gi, (_, p) in enumerate(grid) for r in range(cfg.replications)]
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_work, items))
    else:
        results = [_work(it) for it in items]
    results.sort(key=lambda x: (x[0], x[1]))

    table = {}  # (gi, scheme, metric) -> list of values in replication order
    order = []
    merged = {}
    seeds = {}
    for gi, rep, seed, rows, reports in results:
        seeds.setdefault(gi, []).append(seed)
        for kind, metric, value in rows:
            key = (gi, kind, metric)
            if key not in table:
                table[key] = []
                order.append(key)
            table[key].append(value)
        for kind, rp in reports.items():
            merged[(gi, kind)] = rp if (gi, kind) not in merged else merged[(gi, kind)].merge(rp)

    extra_files = []
    if cfg.recipe == "delay-decay":
        for (gi, kind), rp in sorted(merged.items(), key=lambda kv: (kv[0][0], cfg.schemes.index(kv[0][1]))):
            path = os.path.join(out_dir, f"tail_{kind}_{grid[gi][0].replace('=', '')}.csv")
            write_tail_csv(path, rp)
            extra_files.append(os.path.basename(path))
            try:
                fit = analysis.estimate_decay_rate(*rp.tail(), k=None).rate
            except analysis.AnalysisError:
                fit = float("nan")
            key = (gi, kind, "fitted_rate")
            table[key] = [fit]
            order.append(key)

    order.sort(key=lambda k: (k[0], _scheme_rank(cfg, k[1])))
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for key in order:
            gi, kind, metric = key
            vals = table[key]
            w.writerow([grid[gi][0], kind, metric, _f(_mean(vals)), _f(_stderr(vals)),
                        len(vals), seeds[gi][0]])

    manifest = {
        "version": __version__,
        "backend": BACKEND,
        "config": cfg.describe(),
        "normalized": cfg.normalized(),
        "grid": [{"label": lab, "params": p, "seeds": seeds.get(gi, [])}
                 for gi, (lab, p) in enumerate(grid)],
        "files": ["results.csv"] + extra_files,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return csv_path


def _scheme_rank(cfg, kind):
    return cfg.schemes.index(kind) if kind in cfg.schemes else len(cfg.schemes)


def write_tail_csv(path, report):
    tail, counts = report.tail()
    k = report.k_max
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "p_exceed", "count_exceed"])
        for i in range(k + 1):
            w.writerow([i, repr(float(tail[i])), int(counts[i])])


def read_tail_csv(path):
    ks, ps, cs = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"k", "p_exceed"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns k,p_exceed[,count_exceed]")
        for row in reader:
            ks.append(float(row["k"]))
            ps.append(float(row["p_exceed"]))
            cs.append(int(row["count_exceed"]) if row.get("count_exceed") not in (None, "") else None)
    counts = None if any(c is None for c in cs) else np.array(cs)
    return np.array(ks), np.array(ps), counts
