"""Seeded experiment suites over simulated tensors, with CSV + figure reports.

Config files are INI-style: one section per suite, flat key=value entries.
Every replicate's seed derives from (suite seed, cell index, replicate), so
tidy outputs are byte-identical across reruns and independent of worker
scheduling.  Set ``BINTENSOR_THREADS`` to run replicates in parallel
processes.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import figures
from .decomp import FitConfig, fit, predict_proba, select_rank
from .links import make_link
from .metrics import mer, relative_loss, rmse
from .sim import BlockModelSpec, BooleanModelSpec, gen_block_tensor, gen_boolean_tensor, gen_cp_signal, quantize_latent
from .tensor_ops import loss

__all__ = ["SUITES", "default_config", "load_config", "run_suite"]

SUITES = ("consistency", "dithering", "rank_table", "block_table", "boolean_compare")

_FMT = "%.17g"

# desk-scale defaults, one section per suite; fit_sigma 'match' reuses the
# generator's noise scale for the fitted link
_DEFAULTS = {
    "consistency": {
        "dims": "20,30,40,50,60",
        "ranks": "1,3,5",
        "sigma": "0.31622776601683794",
        "n_sim": "30",
        "seed": "11",
        "gen_link": "logistic",
        "fit_link": "logistic",
        "fit_sigma": "match",
        "n_starts": "3",
    },
    "dithering": {
        "dim": "50",
        "ranks": "1,3,5",
        "sigmas": "0.001,0.0031622776601683794,0.01,0.031622776601683794,0.1,0.31622776601683794,1.0,3.1622776601683795",
        "n_sim": "30",
        "seed": "12",
        "gen_link": "logistic",
        "fit_link": "logistic",
        "fit_sigma": "match",
        "n_starts": "3",
    },
    "rank_table": {
        "dims": "20,40,60",
        "ranks": "5,10",
        "sigmas": "0.1,0.01",
        "grid_span": "5",
        "n_sim": "30",
        "seed": "13",
        "gen_link": "logistic",
        "fit_link": "logistic",
        "fit_sigma": "match",
        "n_starts": "2",
    },
    "block_table": {
        "dim": "50",
        "submodels": "additive,multiplicative,combinatorial",
        "n_blocks": "5",
        "rmin": "1",
        "rmax": "6",
        "n_sim": "30",
        "seed": "14",
        "fit_link": "logistic",
        "fit_sigma": "1.0",
        "n_starts": "2",
    },
    "boolean_compare": {
        "dim": "50",
        "boolean_ranks": "10,15,20,25,30",
        "flip_prob": "0.1",
        "rmin": "1",
        "rmax": "8",
        "n_sim": "30",
        "seed": "15",
        "fit_link": "logistic",
        "fit_sigma": "1.0",
        "n_starts": "2",
    },
}


def default_config() -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.read_dict(_DEFAULTS)
    return parser


def load_config(path) -> configparser.ConfigParser:
    """Parse an INI config on top of the suite defaults."""
    parser = default_config()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    return parser


def _ints(raw):
    return [int(tok) for tok in str(raw).split(",") if tok.strip()]


def _floats(raw):
    return [float(tok) for tok in str(raw).split(",") if tok.strip()]


def _fit_options(section) -> dict:
    """Plain-dict fit options (picklable for worker processes)."""
    return {
        "fit_link": section.get("fit_link", "logistic"),
        "fit_sigma": section.get("fit_sigma", "1.0"),
        "alpha": section.getfloat("alpha", np.inf),
        "tol": section.getfloat("tol", 1e-4),
        "max_iters": section.getint("max_iters", 100),
        "n_starts": section.getint("n_starts", 3),
        "init_scale": section.getfloat("init_scale", 0.1),
    }


def _fit_config(opts, rank, seed, gen_sigma=None) -> FitConfig:
    raw = opts["fit_sigma"]
    if raw == "match":
        if gen_sigma is None:
            raise ValueError("fit_sigma 'match' needs a generator sigma")
        sigma = float(gen_sigma)
    else:
        sigma = float(raw)
    return FitConfig(
        rank=rank,
        link=make_link(opts["fit_link"], sigma),
        alpha=opts["alpha"],
        tol=opts["tol"],
        max_iters=opts["max_iters"],
        n_starts=opts["n_starts"],
        init_scale=opts["init_scale"],
        seed=seed,
    )


def _seed_int(suite_seed, cell, rep) -> int:
    return int(np.random.SeedSequence([suite_seed, cell, rep]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# per-replicate jobs (module level so process pools can pickle them)

def _cp_loss_replicate(job):
    d, rank, sigma, seed = job["dim"], job["rank"], job["sigma"], job["seed"]
    rng = np.random.default_rng(seed)
    theta = gen_cp_signal((d, d, d), rank, rng)
    y = quantize_latent(theta, make_link(job["gen_link"], sigma), rng)
    cfg = _fit_config(job["opts"], rank, seed, gen_sigma=sigma)
    t0 = time.perf_counter()
    result = fit(y, cfg)
    seconds = time.perf_counter() - t0
    return {
        "loss": loss(result.theta_hat, theta),
        "loglik": result.final_loglik,
        "converged": int(result.converged),
        "n_iterations": result.n_iterations,
        "seconds": seconds,
    }


def _rank_table_replicate(job):
    d, rank, sigma, seed = job["dim"], job["rank"], job["sigma"], job["seed"]
    rng = np.random.default_rng(seed)
    theta = gen_cp_signal((d, d, d), rank, rng)
    y = quantize_latent(theta, make_link(job["gen_link"], sigma), rng)
    cfg = _fit_config(job["opts"], rank, seed, gen_sigma=sigma)
    span = job["grid_span"]
    t0 = time.perf_counter()
    selected, _ = select_rank(y, cfg, max(1, rank - span), rank + span)
    seconds = time.perf_counter() - t0
    return {"selected_rank": selected, "correct": int(selected == rank), "seconds": seconds}


def _block_replicate(job):
    d, seed = job["dim"], job["seed"]
    rng = np.random.default_rng(seed)
    spec = BlockModelSpec((d, d, d), job["n_blocks"], job["submodel"])
    y, prob, _ = gen_block_tensor(spec, rng)
    cfg = _fit_config(job["opts"], 1, seed)
    t0 = time.perf_counter()
    selected, _ = select_rank(y, cfg, job["rmin"], job["rmax"])
    result = fit(y, dataclasses.replace(cfg, rank=selected))
    seconds = time.perf_counter() - t0
    est = predict_proba(result, cfg.link)
    return {
        "selected_rank": selected,
        "relative_loss": relative_loss(est, prob),
        "rmse": rmse(est, prob),
        "mer": mer(est, prob),
        "seconds": seconds,
    }


def _boolean_replicate(job):
    d, seed = job["dim"], job["seed"]
    rng = np.random.default_rng(seed)
    spec = BooleanModelSpec((d, d, d), job["boolean_rank"], flip_prob=job["flip_prob"])
    y, prob = gen_boolean_tensor(spec, rng)
    cfg = _fit_config(job["opts"], 1, seed)
    t0 = time.perf_counter()
    selected, _ = select_rank(y, cfg, job["rmin"], job["rmax"])
    result = fit(y, dataclasses.replace(cfg, rank=selected))
    seconds = time.perf_counter() - t0
    est = predict_proba(result, cfg.link)
    return {
        "selected_rank": selected,
        "rmse": rmse(est, prob),
        "mer": mer(est, prob),
        "seconds": seconds,
    }


_RUNNERS = {
    "consistency": _cp_loss_replicate,
    "dithering": _cp_loss_replicate,
    "rank_table": _rank_table_replicate,
    "block_table": _block_replicate,
    "boolean_compare": _boolean_replicate,
}


def _cells(name, section):
    """Grid cells for a suite: list of (cell key dict, job parameter dict)."""
    gen_link = section.get("gen_link", "logistic")
    if name == "consistency":
        sigma = section.getfloat("sigma")
        return [
            ({"dim": d, "rank": r, "sigma": sigma}, {"dim": d, "rank": r, "sigma": sigma, "gen_link": gen_link})
            for d in _ints(section.get("dims"))
            for r in _ints(section.get("ranks"))
        ]
    if name == "dithering":
        d = section.getint("dim")
        return [
            ({"dim": d, "rank": r, "sigma": s}, {"dim": d, "rank": r, "sigma": s, "gen_link": gen_link})
            for r in _ints(section.get("ranks"))
            for s in _floats(section.get("sigmas"))
        ]
    if name == "rank_table":
        return [
            ({"dim": d, "rank": r, "sigma": s},
             {"dim": d, "rank": r, "sigma": s, "grid_span": section.getint("grid_span", 5), "gen_link": gen_link})
            for d in _ints(section.get("dims"))
            for r in _ints(section.get("ranks"))
            for s in _floats(section.get("sigmas"))
        ]
    if name == "block_table":
        d = section.getint("dim")
        return [
            ({"dim": d, "submodel": sub},
             {"dim": d, "submodel": sub, "n_blocks": section.getint("n_blocks", 5),
              "rmin": section.getint("rmin", 1), "rmax": section.getint("rmax", 6)})
            for sub in [tok.strip() for tok in section.get("submodels").split(",") if tok.strip()]
        ]
    if name == "boolean_compare":
        d = section.getint("dim")
        return [
            ({"dim": d, "boolean_rank": r},
             {"dim": d, "boolean_rank": r, "flip_prob": section.getfloat("flip_prob", 0.1),
              "rmin": section.getint("rmin", 1), "rmax": section.getint("rmax", 8)})
            for r in _ints(section.get("boolean_ranks"))
        ]
    raise ValueError(f"unknown suite {name!r}")


def _n_workers() -> int:
    raw = os.environ.get("BINTENSOR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _format_value(v):
    if isinstance(v, float):
        return _FMT % v
    return v


def run_suite(name: str, config: configparser.ConfigParser, out_dir: str):
    """Run one suite; writes <name>_tidy.csv, <name>_summary.csv, <name>.png.

    Returns (tidy_rows, summary_rows).
    """
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    section = config[name] if config.has_section(name) else default_config()[name]
    n_sim = section.getint("n_sim", 10)
    suite_seed = section.getint("seed", 0)
    opts = _fit_options(section)
    cells = _cells(name, section)
    runner = _RUNNERS[name]

    jobs = []
    for cell_idx, (key, params) in enumerate(cells):
        for rep in range(n_sim):
            job = dict(params)
            job.update(opts=opts, seed=_seed_int(suite_seed, cell_idx, rep))
            jobs.append((cell_idx, rep, key, job))

    workers = _n_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(runner, [job for *_, job in jobs], chunksize=1))
    else:
        metrics = [runner(job) for *_, job in jobs]

    tidy = []
    for (cell_idx, rep, key, job), m in zip(jobs, metrics):
        tidy.append({"suite": name, "cell": cell_idx, **key, "replicate": rep, "seed": job["seed"], **m})
    tidy.sort(key=lambda r: (r["cell"], r["replicate"]))

    group_keys = list(cells[0][0])
    metric_keys = list(metrics[0])
    summary = _summarize(tidy, group_keys, metric_keys)

    os.makedirs(out_dir, exist_ok=True)
    tidy_cols = ["suite", "cell", *group_keys, "replicate", "seed", *metric_keys]
    with open(os.path.join(out_dir, f"{name}_tidy.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(tidy_cols)
        for row in tidy:
            writer.writerow([_format_value(row.get(c, "")) for c in tidy_cols])

    sum_cols = list(summary[0].keys())
    with open(os.path.join(out_dir, f"{name}_summary.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(sum_cols)
        for row in summary:
            writer.writerow([_format_value(row.get(c, "")) for c in sum_cols])

    figures.save_suite_figure(name, summary, os.path.join(out_dir, f"{name}.png"))
    return tidy, summary


def _summarize(tidy, group_keys, metric_keys):
    groups = {}
    for row in tidy:
        groups.setdefault(tuple(row[k] for k in group_keys), []).append(row)
    summary = []
    for key in sorted(groups, key=lambda t: [str(x) for x in t]):
        rows = groups[key]
        out = dict(zip(group_keys, key))
        out["n"] = len(rows)
        for mk in metric_keys:
            vals = np.array([float(r[mk]) for r in rows])
            out[f"{mk}_mean"] = float(vals.mean())
            out[f"{mk}_se"] = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        summary.append(out)
    return summary
