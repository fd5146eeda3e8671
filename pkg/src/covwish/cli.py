"""Command-line entry point: ``covwish <command> [options]``.

Options may also come from an INI-style ``key = value`` file passed with
``--config``; flags given on the command line override the file.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import io, posthoc, simgen
from .errors import ConfigError, CovWishError, DataError
from .linalg import DISTANCES
from .models import ModelConfig, fit
from .models.data import Dataset
from .shrinkage import IgHyper

MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"ig_hyper"}
SIM_KEYS = {f.name for f in fields(simgen.SimDesign)}

# key -> (type, help); shared by every subcommand so a config file can hold any of them
OPTIONS = {
    "model": (str, "independence | hierarchical | changepoint | dynamic"),
    "r_star": (int, "dictionary size"),
    "phi": (float, "Wishart degrees of freedom (default p + 1)"),
    "phi1": (float, "degrees of freedom before the change point"),
    "phi2": (float, "degrees of freedom after the change point"),
    "iterations": (int, "total MCMC iterations"),
    "burn_in": (int, "discarded iterations"),
    "thin": (int, "keep every k-th draw"),
    "seed": (int, "master seed"),
    "step_sd": (float, "random-walk scale for the global shrinkage update"),
    "dyn_step_sd": (float, "random-walk scale for the dynamic path updates"),
    "inner_sweeps": (int, "coordinate sweeps per dictionary column update"),
    "nocp_factor": (float, "report no change when the mode probability is <= factor / T"),
    "alpha_sigma": (float, "inverse-gamma shape for sigma^2 (default: elicited)"),
    "beta_sigma": (float, "inverse-gamma scale for sigma^2 (default: elicited)"),
    "threads": (int, "worker threads (default $COVWISH_THREADS or 1)"),
    "input": (str, "long CSV with subject_id,time,row,col,value"),
    "preset": (str, "simulation preset used when no input is given"),
    "out": (str, "output directory"),
}
FLAGS = {
    "scale_min_eig": "divide every matrix by its smallest eigenvalue on ingestion",
    "validate_spd": "reject matrices that are not positive definite",
    "cp_interior_only": "restrict change points to 2..T-1",
    "no_store_v": "do not keep dictionary draws in the trace",
}


def _str2bool(text) -> bool:
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict:
    """Flat ``{key: str}`` from an INI file; a section header is optional."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if not text.lstrip().startswith("["):
        text = "[covwish]\n" + text
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    out = dict(cp.defaults())
    for sec in cp.sections():
        out.update(cp[sec])
    return {k.strip().replace("-", "_"): v for k, v in out.items()}


def merge_options(args: argparse.Namespace) -> dict:
    """Config file values overridden by explicit flags, with types applied."""
    opts = {}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key in OPTIONS:
                typ = OPTIONS[key][0]
                try:
                    opts[key] = typ(raw)
                except ValueError:
                    raise ConfigError(f"config key {key}: cannot parse {raw!r}") from None
            elif key in FLAGS:
                opts[key] = _str2bool(raw)
            elif key in SIM_KEYS or key in EXTRA_KEYS:
                opts[key] = raw
            else:
                raise ConfigError(f"unknown config key {key!r}")
    for key, val in vars(args).items():
        if key in ("command", "config", "func") or val is None:
            continue
        if key in FLAGS and val is False:
            continue
        opts[key] = val
    if "threads" not in opts:
        env = os.environ.get("COVWISH_THREADS")
        try:
            opts["threads"] = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"COVWISH_THREADS={env!r} is not an integer") from None
    return opts


# keys that only some subcommands use
EXTRA_KEYS = {"trace", "models", "grid", "max_depth", "min_len", "a", "b", "design", "n", "p", "T", "N"}


def model_config(opts: dict, model: str | None = None) -> ModelConfig:
    kw = {k: v for k, v in opts.items() if k in MODEL_KEYS}
    if model is not None:
        kw["model"] = model
    kw.setdefault("model", "hierarchical")
    if opts.get("no_store_v"):
        kw["store_v"] = False
    a, b = opts.get("alpha_sigma"), opts.get("beta_sigma")
    if (a is None) != (b is None):
        raise ConfigError("give both alpha_sigma and beta_sigma or neither")
    if a is not None:
        kw["ig_hyper"] = IgHyper(float(a), float(b))
    return ModelConfig(**kw)


def load_data(opts: dict):
    """``(dataset, provenance)`` from ``input`` or a simulation ``preset``."""
    if opts.get("input"):
        path = opts["input"]
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc.strerror}") from None
        data = io.ingest(path, opts.get("scale_min_eig", False), opts.get("validate_spd", False))
        return data, {"input_sha256": hashlib.sha256(blob).hexdigest()}
    if opts.get("preset"):
        design = simgen.preset(opts["preset"], seed=int(opts.get("seed", 0)))
        data, _ = simgen.generate(design)
        return data, {"preset": opts["preset"], "design": asdict(design)}
    raise ConfigError("give --input or --preset")


def out_dir(opts: dict) -> Path:
    path = Path(opts.get("out") or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def stamp(cfg: ModelConfig, provenance: dict) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "config": cfg.to_dict(), "data": provenance}


def rank_table(trace) -> dict:
    out = {}
    for i, sid in enumerate(trace.subject_ids):
        per = [posthoc.estimate_rank(trace, k, i) for k in range(trace.n_regimes)]
        out[sid] = {"mode": [e.mode for e in per], "histogram": [e.histogram.tolist() for e in per]}
    return out


def summarize(trace, cfg: ModelConfig, provenance: dict) -> dict:
    summary = stamp(cfg, provenance)
    summary.update(
        {
            "model": trace.model,
            "subjects": list(trace.subject_ids),
            "times": list(trace.times),
            "p": trace.p,
            "phi": list(trace.phi),
            "kept": trace.kept,
            "posterior_mean": {
                "sigma2": trace.sigma2_mean(),
                "dtilde": trace.params["dtilde"].mean(axis=0),
                "omega": trace.omega_mean,
            },
            "rank_mode": {sid: rec["mode"] for sid, rec in rank_table(trace).items()},
            "acceptance": trace.acceptance_rates(),
            "orth_corrections": trace.extra.get("orth_corrections", []),
            "ig_hyper": list(trace.extra.get("hyper", ())),
        }
    )
    if trace.cp_probs is not None:
        summary["changepoints"] = posthoc.detect_changes(trace, cfg.nocp_factor)
    return summary


# ---------------------------------------------------------------- commands


def cmd_simulate(opts):
    name = opts.get("preset")
    kw = {}
    for key in ("design", "n", "p", "T", "N", "r_star", "seed", "phi"):
        if opts.get(key) is not None:
            kw[key] = opts[key]
    for key in ("n", "p", "T", "N", "r_star", "seed"):
        if key in kw:
            kw[key] = int(kw[key])
    if "phi" in kw:
        kw["phi"] = float(kw["phi"])
    design = simgen.preset(name, **kw) if name else simgen.SimDesign(**kw)
    data, truth = simgen.generate(design)
    out = out_dir(opts)
    io.write_dataset(out / "data.csv", data)
    (out / "truth.json").write_text(truth.to_json() + "\n")
    return {"data": str(out / "data.csv"), "truth": str(out / "truth.json"), "seed": design.seed}


def cmd_fit(opts):
    cfg = model_config(opts)
    data, prov = load_data(opts)
    trace = fit(data, cfg)
    out = out_dir(opts)
    io.write_trace_csv(out / "trace.csv", trace)
    summary = summarize(trace, cfg, prov)
    io.write_json(out / "summary.json", summary)
    head = stamp(cfg, prov)
    io.write_json(out / "waic.json", {**head, cfg.model: posthoc.compute_waic(trace).as_dict()})
    io.write_json(out / "ranks.json", {**head, "ranks": rank_table(trace)})
    if trace.cp_probs is not None:
        io.write_json(out / "changepoints.json", {**head, "changepoints": summary["changepoints"]})
    return {"out": str(out), "config_hash": cfg.digest()}


def cmd_waic(opts):
    out = out_dir(opts)
    if opts.get("trace"):
        cols = io.read_trace_csv(opts["trace"])
        if "loglik" not in cols:
            raise DataError(f"{opts['trace']}: trace has no loglik columns")
        rep = posthoc.compute_waic(cols["loglik"])
        payload = {"trace": Path(opts["trace"]).name, "waic": rep.as_dict()}
        io.write_json(out / "waic.json", payload)
        return payload
    models = [m.strip() for m in str(opts.get("models", "independence,hierarchical,changepoint")).split(",") if m.strip()]
    data, prov = load_data(opts)
    base = model_config(opts, models[0])
    table = {}
    for m in models:
        table[m] = posthoc.compute_waic(fit(data, model_config(opts, m))).as_dict()
    ranking = sorted(table, key=lambda m: table[m]["waic"])
    payload = {**stamp(base, prov), "waic": table, "ranking": ranking}
    io.write_json(out / "waic.json", payload)
    return {"ranking": ranking}


def _trace_ranks(cols: dict) -> dict:
    if "sigma2" not in cols or "dtilde" not in cols:
        raise DataError("trace needs sigma2 and dtilde columns")
    s2, dt = cols["sigma2"], cols["dtilde"]
    out = {}
    for i in range(s2.shape[2]):
        modes, hists = [], []
        for k in range(s2.shape[1]):
            d = s2[:, k, i, None] * dt[:, k, i, :]
            sizes = posthoc.two_means_upper_size(d)
            hist = np.bincount(sizes, minlength=d.shape[1] + 1)[1:]
            modes.append(int(np.argmax(hist)) + 1)
            hists.append(hist.tolist())
        out[str(i)] = {"mode": modes, "histogram": hists}
    return out


def cmd_rank(opts):
    out = out_dir(opts)
    if opts.get("trace"):
        payload = {"trace": Path(opts["trace"]).name, "ranks": _trace_ranks(io.read_trace_csv(opts["trace"]))}
    else:
        cfg = model_config(opts)
        data, prov = load_data(opts)
        payload = {**stamp(cfg, prov), "ranks": rank_table(fit(data, cfg))}
    io.write_json(out / "ranks.json", payload)
    return {"subjects": len(payload["ranks"])}


def cmd_cpdetect(opts):
    cfg = model_config(opts, "changepoint")
    data, prov = load_data(opts)
    found = posthoc.multiple_changepoints(
        data, cfg, max_depth=int(opts.get("max_depth", 2)), min_len=int(opts.get("min_len", 5))
    )
    io.write_json(out_dir(opts) / "changepoints.json", {**stamp(cfg, prov), "changepoints": found})
    return {"subjects_with_changes": sum(bool(v) for v in found.values())}


def cmd_validate(opts):
    cfg = model_config(opts, "independence")
    data, prov = load_data(opts)
    different, same = posthoc.shared_v_diagnostic(data, cfg)
    payload = {
        **stamp(cfg, prov),
        "subjects": list(data.subject_ids),
        "distance_observed": different,
        "distance_shared": same,
        "median_observed": float(np.median(different)),
        "median_shared": float(np.median(same)),
    }
    io.write_json(out_dir(opts) / "validate.json", payload)
    return {"median_observed": payload["median_observed"], "median_shared": payload["median_shared"]}


def parse_grid(text) -> list:
    """``"11:20"`` (inclusive integer range) or a comma-separated list."""
    s = str(text).strip()
    try:
        if ":" in s:
            lo, hi = s.split(":")
            return [float(x) for x in range(int(lo), int(hi) + 1)]
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}") from None


def cmd_phisweep(opts):
    cfg = model_config(opts)
    data, prov = load_data(opts)
    grid = parse_grid(opts.get("grid") or f"{data.p + 1}:{data.p + 10}")
    table, best = posthoc.phi_waic_sweep(data, cfg, grid)
    payload = {**stamp(cfg, prov), "table": [{"phi": a, "waic": b} for a, b in table], "argmin": best}
    io.write_json(out_dir(opts) / "phisweep.json", payload)
    return {"argmin": best}


def cmd_distances(opts):
    if not opts.get("a") or not opts.get("b"):
        raise ConfigError("distances needs --a and --b")
    A = io.ingest(opts["a"], validate_spd=opts.get("validate_spd", False))
    B = io.ingest(opts["b"], validate_spd=opts.get("validate_spd", False))
    if A.p != B.p:
        raise DataError(f"dimension mismatch: {A.p} vs {B.p}")
    bmap = {s: m for s, m in zip(B.subject_ids, B.matrices)}
    rows = []
    for sid, stack in zip(A.subject_ids, A.matrices):
        if sid not in bmap:
            continue
        other = bmap[sid]
        for t in range(min(len(stack), len(other))):
            rec = {"subject_id": sid, "time": t + 1}
            for name, fn in DISTANCES.items():
                rec[name] = fn(stack[t], other[t])
            rows.append(rec)
    if not rows:
        raise DataError("the two inputs share no (subject, time) cells")
    means = {name: float(np.mean([r[name] for r in rows])) for name in DISTANCES}
    io.write_json(out_dir(opts) / "distances.json", {"pairs": rows, "mean": means})
    return means


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic dataset and its ground truth"),
    "fit": (cmd_fit, "run a sampler and write trace.csv, summary.json, waic.json, ranks.json"),
    "waic": (cmd_waic, "WAIC of a persisted trace or of several fitted models"),
    "rank": (cmd_rank, "dictionary-size estimates"),
    "cpdetect": (cmd_cpdetect, "recursive search for multiple change points"),
    "validate": (cmd_validate, "shared-dictionary diagnostic"),
    "phisweep": (cmd_phisweep, "WAIC over a grid of degrees of freedom"),
    "distances": (cmd_distances, "Euclidean, Riemannian and Cholesky distances between two inputs"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covwish", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="INI-style key = value file")
        for key, (typ, h) in OPTIONS.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=h)
        for key, h in FLAGS.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, action="store_true", help=h)
        if name in ("waic", "rank"):
            sp.add_argument("--trace", default=None, help="persisted trace.csv")
        if name == "waic":
            sp.add_argument("--models", default=None, help="comma-separated models to compare")
        if name == "cpdetect":
            sp.add_argument("--max-depth", dest="max_depth", type=int, default=None)
            sp.add_argument("--min-len", dest="min_len", type=int, default=None)
        if name == "phisweep":
            sp.add_argument("--grid", default=None, help='"lo:hi" or "a,b,c"')
        if name == "simulate":
            sp.add_argument("--design", default=None, help=f"one of {', '.join(simgen.DESIGNS)}")
            for key in ("n", "p", "T", "N"):
                sp.add_argument("--" + key, dest=key, type=int, default=None)
        if name == "distances":
            sp.add_argument("--a", default=None, help="first long CSV")
            sp.add_argument("--b", default=None, help="second long CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = merge_options(args)
        result = args.func(opts)
    except CovWishError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        err = {"error": "ConfigError", "message": str(exc), "exit_code": ConfigError.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return ConfigError.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        err = {"error": "NumericError", "message": str(exc), "exit_code": 4}
        sys.stderr.write(json.dumps(err) + "\n")
        return 4
    except OSError as exc:
        err = {"error": "DataError", "message": str(exc), "exit_code": DataError.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return DataError.exit_code
    except Exception as exc:  # noqa: BLE001 - every failure must surface as error JSON
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": 1}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    sys.stdout.write(io.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
