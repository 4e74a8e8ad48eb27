"""Command-line entry point: ``sampfit <command> [--config FILE] [flags]``.

Settings come from an INI file with ``[cpi]``, ``[experiment]``, ``[train]``
and ``[simulate]`` sections; explicit flags override file values.  Exit
codes: 0 success, 2 configuration error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import render
from .cpi.dataset import CAR, DatasetConfig, generate_dataset, load_dataset
from .cpi.geometry import REGIONS
from .errors import ConfigError, NumericalError, SimulationError
from .io import digest, file_digest, read_report, write_grids, write_report
from .losses import Variant, WtaConfig
from .metrics import emd_points
from .pipeline import METHODS, ExperimentConfig, evaluate, load_predictor, report_rows, save_result, \
    summary_table, train_method
from .sampler import GT_SAMPLERS, SimConfig, TrainConfig, cluster_counts, simulate_free_hypotheses

log = logging.getLogger("sampfit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# -- config plumbing ---------------------------------------------------------------

def _coerce(value: str, like):
    if isinstance(like, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    try:
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, (list, tuple)):
            return json.loads(value)
    except (ValueError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {value!r}: {e}") from None
    return value


def _fill(obj, section: dict, overrides: dict):
    """Set dataclass fields from an INI section, then from non-None flag values."""
    names = {f.name for f in fields(obj)}
    lower = {n.lower(): n for n in names}  # INI keys arrive lower-cased
    for key, raw in section.items():
        k = lower.get(key.replace("-", "_").lower())
        if k is None:
            raise ConfigError(f"unknown setting {key!r} for {type(obj).__name__}")
        setattr(obj, k, _coerce(raw, getattr(obj, k)))
    for k, v in overrides.items():
        if v is not None and k in names:
            setattr(obj, k, v)
    return obj


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        cp.read(path)
    return cp


def _section(cp, name):
    return dict(cp[name]) if cp.has_section(name) else {}


def build_cpi_config(args, cp) -> DatasetConfig:
    cfg = _fill(DatasetConfig(), _section(cp, "cpi"), vars(args))
    cfg.validate()
    return cfg


def build_experiment(args, cp) -> ExperimentConfig:
    tc = TrainConfig()
    _fill(tc, _section(cp, "train"), vars(args))
    tc.__post_init__()
    cfg = ExperimentConfig(train=tc)
    sec = {k: v for k, v in _section(cp, "experiment").items() if k != "train"}
    _fill(cfg, sec, {k: v for k, v in vars(args).items() if k != "train"})
    cfg.validate()
    return cfg


def write_resolved(path, cfg: ExperimentConfig):
    cp = configparser.ConfigParser()
    d = cfg.as_dict()
    train = d.pop("train")
    cp["experiment"] = {k: json.dumps(v) if isinstance(v, (list, tuple)) else str(v) for k, v in d.items()}
    cp["train"] = {k: json.dumps(v) if isinstance(v, (list, tuple)) else str(v) for k, v in train.items()}
    with open(path, "w") as f:
        f.write(f"# config_digest = {digest(cfg.as_dict())}\n")
        cp.write(f)


# -- commands ------------------------------------------------------------------------

def cmd_cpi_gen(args, cp) -> int:
    cfg = build_cpi_config(args, cp)
    out = generate_dataset(cfg, args.out)
    files = sorted(p for p in out.iterdir() if p.is_file())
    print(f"dataset {out}  digest {file_digest(files)}  config {digest(asdict(cfg))}")
    return EXIT_OK


def cmd_train(args, cp) -> int:
    cfg = build_experiment(args, cp)
    data = load_dataset(cfg.dataset) if cfg.dataset else None
    out = Path(cfg.output)
    res = train_method(cfg, data)
    paths = save_result(res, out, cfg)
    write_resolved(out / f"{cfg.method}_config.ini", cfg)
    for p in paths:
        print(f"checkpoint {p}")
    if res.trace.rows:
        print(f"trace {out / (cfg.method + '_trace.csv')}  phases "
              f"{','.join(dict.fromkeys(r[1] for r in res.trace.rows))}  final loss {res.trace.rows[-1][2]:.4f}")
    return EXIT_OK


def cmd_eval(args, cp) -> int:
    cfg = build_experiment(args, cp)
    data = load_dataset(cfg.dataset)
    if cfg.method == "kalman":
        pred = train_method(cfg, data).predictor
    else:
        ckpt = args.checkpoint or _default_checkpoint(cfg)
        pred = load_predictor(ckpt)
        if pred.method != cfg.method:
            raise ConfigError(f"checkpoint {ckpt} holds a {pred.method} model, not {cfg.method}")
    per, grids = evaluate(pred, data, cfg, keep_grids=args.heatmaps)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = report_rows(cfg.method, per, cfg.train.seed)
    tag = digest(cfg.as_dict())
    write_report(out / f"report_{cfg.method}.csv", rows, comment=f"config_digest={tag} dataset={cfg.dataset}")
    np.savez(out / f"per_condition_{cfg.method}.npz", **per)
    if grids:
        write_grids(out / f"pred_{cfg.method}.grid", [g for _, _, g, _ in grids], tag)
        for actor, i, g, gt in grids:
            name = "car" if actor == CAR else "pedestrian"
            render.heatmap(out / f"heatmap_{cfg.method}_{i:03d}_{name}.png", g, f"{cfg.method} test {i} {name}",
                           points=data.test_future[i, actor], gt=gt, regions=REGIONS.crossing)
    table = summary_table(rows)
    (out / f"summary_{cfg.method}.md").write_text(table)
    print(table, end="")
    return EXIT_OK


def _default_checkpoint(cfg: ExperimentConfig) -> Path:
    last = {"ewtad-mdf": "finetuned", "ewtap-mdf": "finetuned"}.get(cfg.method, cfg.method)
    p = Path(cfg.output) / f"{cfg.method}_{last}.ckpt"
    if not p.is_file():
        raise ConfigError(f"no checkpoint given and {p} does not exist")
    return p


def cmd_simulate_wta(args, cp) -> int:
    sec = _section(cp, "simulate")
    sim = _fill(SimConfig(), {k: v for k, v in sec.items() if k in {f.name for f in fields(SimConfig)}},
                {"steps": args.steps, "lr": args.lr, "seed": args.seed})
    variant = args.variant or sec.get("variant", "ewta")
    K = args.K if args.K is not None else int(sec.get("k", 10))
    clusters = args.clusters or sec.get("clusters", "two-cluster")
    if clusters not in GT_SAMPLERS:
        raise ConfigError(f"unknown cluster layout {clusters!r}; choose from {', '.join(GT_SAMPLERS)}")
    if K < 1 or sim.steps < 1:
        raise ConfigError("K and steps must be positive")
    sim.init_center, sim.init_spread = (0.5, 0.5), 0.05
    sampler = GT_SAMPLERS[clusters]
    res = simulate_free_hypotheses(sampler, K, sim, WtaConfig(Variant(variant)))
    gt = np.array([sampler(np.random.default_rng([sim.seed, 1, i])) for i in range(300)])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for label, pos in res.snapshots:
        render.snapshot(out / f"{variant}_{clusters}_{label}.png", pos, gt, f"{variant.upper()} {label}", res.init)
    np.save(out / f"{variant}_{clusters}_final.npy", res.final)
    emd = emd_points(res.final, np.ones(K), gt, np.ones(len(gt)))
    counts = cluster_counts(res.final).tolist() if clusters == "two-cluster" else []
    line = (f"variant={variant} K={K} clusters={clusters} seed={sim.seed} emd={emd:.6f} "
            f"untouched={res.untouched()} snapshots={len(res.snapshots)}" + (f" per_cluster={counts}" if counts else ""))
    (out / f"{variant}_{clusters}_summary.txt").write_text(line + "\n")
    print(line)
    return EXIT_OK


def cmd_report_merge(args, cp) -> int:
    rows = []
    for p in args.reports:
        if not Path(p).is_file():
            raise ConfigError(f"report {p} not found")
        rows.extend(read_report(p))
    if not rows:
        raise ConfigError("no report rows to merge")
    rows.sort(key=lambda r: (METHODS.index(r["method"]) if r["method"] in METHODS else len(METHODS),
                             r["metric"], str(r["seed"])))
    write_report(args.out, rows, comment=f"merged from {len(args.reports)} reports")
    table = summary_table(rows)
    Path(args.out).with_suffix(".md").write_text(table)
    print(table, end="")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------

def _experiment_flags(p):
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--dataset")
    p.add_argument("--out", dest="output", help="output directory")
    p.add_argument("--K", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--sigma-np", dest="sigma_np", type=float)
    p.add_argument("--kind", choices=["gaussian", "laplace"])
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--finetune-lr", dest="finetune_lr", type=float)
    for name in ("ed", "nll", "fit", "finetune", "mdn-full", "np"):
        p.add_argument(f"--{name}-iters", dest=f"{name.replace('-', '_')}_iters", type=int)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sampfit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("cpi-gen", help="generate a CPI dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-sequences", dest="n_sequences", type=int)
    g.add_argument("--futures-per-seq", dest="futures_per_seq", type=int)
    g.add_argument("--dt", type=int)
    g.add_argument("--h", type=int)
    g.add_argument("--n-test", dest="n_test", type=int)
    g.add_argument("--n-rollouts", dest="n_rollouts", type=int)
    g.add_argument("--grid", type=int)
    g.set_defaults(func=cmd_cpi_gen)

    t = sub.add_parser("train", help="train one method")
    t.add_argument("--config")
    _experiment_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained method on the test conditions")
    e.add_argument("--config")
    _experiment_flags(e)
    e.add_argument("--checkpoint")
    e.add_argument("--heatmaps", type=int, default=4, help="number of conditions to render")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate-wta", help="free-hypothesis WTA simulation")
    s.add_argument("--config")
    s.add_argument("--variant", choices=[v.value for v in Variant])
    s.add_argument("--K", type=int)
    s.add_argument("--clusters", choices=sorted(GT_SAMPLERS))
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="wta_sim")
    s.set_defaults(func=cmd_simulate_wta)

    r = sub.add_parser("report-merge", help="merge report CSVs into one table")
    r.add_argument("reports", nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.set_defaults(func=cmd_report_merge)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = read_config(getattr(args, "config", None))
        return args.func(args, cp)
    except (ConfigError, configparser.Error) as e:
        print(f"sampfit: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SimulationError) as e:
        print(f"sampfit: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
