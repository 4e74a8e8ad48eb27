"""Training and evaluation of every method on a CPI dataset.

Learned methods predict in a local frame: targets are offsets from the
anchor (the current position of the actor of interest) and predictions are
shifted back to world coordinates for evaluation.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import NonParametricModel, kalman_predict_future, train_nonparametric, train_single_point, \
    train_unimodal
from .core import GridDensity, HypothesisSet, Kind, MixtureDistribution, points_to_grid, rasterize_mixture
from .cpi.dataset import Dataset
from .errors import ConfigError
from .io import digest, load_checkpoint, save_checkpoint, write_trace
from .losses import Variant, WtaConfig
from .mdf import FittingHead, TwoStageModel, finetune_end_to_end, train_fitting
from .mdn import MdnModel, train_mdn
from .nn import Whitening
from .metrics import emd_exact, grid_nll, nll_metric, oracle_error, semd, wemd
from .sampler import HypothesisNet, LossTrace, TrainConfig, train_sampler

log = logging.getLogger(__name__)

METHODS = ("ewtad-mdf", "ewtap-mdf", "mdn", "single-point", "unimodal", "nonparametric", "kalman")
MIXTURE_METHODS = ("ewtad-mdf", "ewtap-mdf", "mdn")


@dataclass
class ExperimentConfig:
    method: str = "ewtad-mdf"
    dataset: str = ""
    output: str = "runs"
    K: int = 40
    M: int = 4
    sigma_np: float = 3.0
    kind: str = "gaussian"
    hidden: int = 64
    head_hidden: int = 128
    sigma_low: float = 5.0
    sigma_high: float = 30.0
    min_var: float = 1.0
    # end-to-end finetuning has its own step size; clipping keeps the larger steps stable
    finetune_lr: float = 5e-3
    finetune_clip: float = 1.0
    eval_grid: int = 64
    emd_mass_budget: float = 1e-3
    emd_pool: int = 2
    max_train: int = 0
    whiten: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.method != "kalman" and not self.dataset:
            raise ConfigError(f"method {self.method} needs a dataset path")
        if self.method in ("ewtad-mdf", "ewtap-mdf") and (self.K < 1 or self.M < 1):
            raise ConfigError("K and M must be positive")
        if self.method == "mdn" and self.M < 1:
            raise ConfigError("M must be positive")
        if self.method == "nonparametric" and self.sigma_np <= 0:
            raise ConfigError("sigma_np must be positive")
        if self.emd_pool < 1 or self.eval_grid % self.emd_pool:
            raise ConfigError("eval_grid must be divisible by emd_pool")
        if self.finetune_lr <= 0 or self.finetune_clip < 0:
            raise ConfigError("finetune_lr must be positive and finetune_clip non-negative")
        if self.sigma_high < self.sigma_low:
            raise ConfigError("sigma_high must be >= sigma_low")
        Kind(self.kind)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d


def _sigma_knots(cfg: ExperimentConfig, tc: TrainConfig, tail_iters: int):
    p = tc.ed_iters + tc.nll_iters
    return [(0, cfg.sigma_low), (p, cfg.sigma_low), (p + max(tail_iters, 1), cfg.sigma_high)]


def _with_schedule(tc: TrainConfig, knots) -> TrainConfig:
    d = asdict(tc)
    d["sigma_schedule"] = knots
    return TrainConfig(**d)


def _out_scale(Y) -> float:
    return float(max(1.0, np.round(np.std(Y), 1)))


# -- predictors ---------------------------------------------------------------------------

class Predictor:
    """Uniform prediction interface for evaluation."""

    method: str

    def mixture(self, x, anchor, history=None) -> Optional[MixtureDistribution]:
        return None

    def hypotheses(self, x, anchor) -> Optional[HypothesisSet]:
        return None

    def grid(self, x, anchor, n: int, history=None) -> GridDensity:
        m = self.mixture(x, anchor, history)
        return rasterize_mixture(m, n, n)


def _shift(m: MixtureDistribution, anchor) -> MixtureDistribution:
    return MixtureDistribution(m.weights, m.mu + np.asarray(anchor, float), m.scale, m.kind)


class TwoStagePredictor(Predictor):
    def __init__(self, method, model: TwoStageModel):
        self.method, self.model = method, model

    def mixture(self, x, anchor, history=None):
        return _shift(self.model.predict(np.asarray(x)[None])[0], anchor)

    def hypotheses(self, x, anchor):
        hs = self.model.sampler.forward(x)
        return HypothesisSet(hs.mu + np.asarray(anchor, float), hs.scale)


class MdnPredictor(Predictor):
    method = "mdn"

    def __init__(self, model: MdnModel):
        self.model = model

    def mixture(self, x, anchor, history=None):
        return _shift(self.model.mixtures(np.asarray(x)[None])[0], anchor)


class PointPredictor(Predictor):
    method = "single-point"

    def __init__(self, model: HypothesisNet):
        self.model = model

    def hypotheses(self, x, anchor):
        return HypothesisSet(self.model.forward(x).mu + np.asarray(anchor, float))

    def grid(self, x, anchor, n, history=None):
        return points_to_grid(self.hypotheses(x, anchor).mu, n, n)


class UnimodalPredictor(Predictor):
    method = "unimodal"

    def __init__(self, model: HypothesisNet, kind=Kind.GAUSSIAN):
        self.model, self.kind = model, Kind(kind)

    def mixture(self, x, anchor, history=None):
        hs = self.model.forward(x)
        return MixtureDistribution([1.0], hs.mu + np.asarray(anchor, float), hs.scale, self.kind)


class NonParametricPredictor(Predictor):
    method = "nonparametric"

    def __init__(self, model: NonParametricModel):
        self.model = model

    def grid(self, x, anchor, n, history=None):
        g = self.model.predict_grid(x, anchor, world_bins=int(round(256.0 / self.model.cell)))
        if g.width != n:
            raise ConfigError("the non-parametric window cell must match the evaluation grid")
        return g


class KalmanPredictor(Predictor):
    method = "kalman"

    def __init__(self, dt_future: int):
        self.dt_future = dt_future

    def mixture(self, x, anchor, history=None):
        return kalman_predict_future(history, self.dt_future)


# -- training -------------------------------------------------------------------------------

@dataclass
class TrainResult:
    predictor: Predictor
    trace: LossTrace
    checkpoints: list  # (name, meta, arrays)


def _ckpt(name, *models):
    # copies: later stages keep updating the live parameter arrays in place
    meta = {"name": name, "models": [m.state() for m in models]}
    arrays = [a.copy() for m in models for a in m.params]
    return name, meta, arrays


def train_method(cfg: ExperimentConfig, data: Optional[Dataset]) -> TrainResult:
    cfg.validate()
    tc = cfg.train
    if cfg.method == "kalman":
        return TrainResult(KalmanPredictor(data.cfg.dt if data else 20), LossTrace(), [])
    X, Y, A = data.train_xy("local")
    if cfg.max_train and len(X) > cfg.max_train:
        sel = np.random.default_rng([tc.seed, 11]).choice(len(X), cfg.max_train, replace=False)
        X, Y, A = X[np.sort(sel)], Y[np.sort(sel)], A[np.sort(sel)]
    rng = np.random.default_rng([tc.seed, 1])
    out_scale = _out_scale(Y)
    hidden = (cfg.hidden, cfg.hidden)
    kind = Kind(cfg.kind)
    wt = Whitening.fit(X) if cfg.whiten else None
    if cfg.method in ("ewtad-mdf", "ewtap-mdf"):
        scaled = cfg.method == "ewtad-mdf"
        tc = _with_schedule(tc, _sigma_knots(cfg, tc, tc.fit_iters + tc.finetune_iters))
        sampler = HypothesisNet(X.shape[1], cfg.K, rng, with_scale=scaled, hidden=hidden, out_scale=out_scale,
                                sigma_bound=cfg.sigma_low if scaled else None, input_transform=wt)
        _, trace = train_sampler(sampler, X, Y, tc, WtaConfig(Variant.EWTA, density=kind))
        cks = [_ckpt("sampler", sampler)]
        head = FittingHead(cfg.K, cfg.M, rng, with_scale=scaled, hidden=cfg.head_hidden, in_scale=out_scale,
                           kind=kind, min_var=cfg.min_var)
        start = tc.ed_iters + tc.nll_iters
        _, tr2 = train_fitting(head, sampler, X, Y, tc, start_iter=start)
        trace.extend(tr2)
        cks.append(_ckpt("fitting", sampler, head))
        ft = replace(tc, lr=cfg.finetune_lr, grad_clip=cfg.finetune_clip)
        _, tr3 = finetune_end_to_end(sampler, head, X, Y, ft, start_iter=start + tc.fit_iters)
        trace.extend(tr3)
        cks.append(_ckpt("finetuned", sampler, head))
        return TrainResult(TwoStagePredictor(cfg.method, TwoStageModel(sampler, head)), trace, cks)
    if cfg.method == "mdn":
        tc = _with_schedule(tc, _sigma_knots(cfg, tc, tc.mdn_full_iters))
        model = MdnModel(X.shape[1], cfg.M, rng, hidden=hidden, out_scale=out_scale, sigma_bound=cfg.sigma_low,
                         kind=kind, input_transform=wt)
        _, trace = train_mdn(model, X, Y, tc, WtaConfig(Variant.EWTA, density=kind))
        return TrainResult(MdnPredictor(model), trace, [_ckpt("mdn", model)])
    if cfg.method == "single-point":
        model, trace = train_single_point(X, Y, tc, rng, hidden=hidden, out_scale=out_scale, input_transform=wt)
        return TrainResult(PointPredictor(model), trace, [_ckpt("single-point", model)])
    if cfg.method == "unimodal":
        # the bound opens over the NLL phase, as the MDN's does over its last phase
        tc = _with_schedule(tc, [(0, cfg.sigma_low), (tc.ed_iters, cfg.sigma_low),
                                 (tc.ed_iters + max(tc.nll_iters, 1), cfg.sigma_high)])
        model, trace = train_unimodal(X, Y, tc, rng, density=kind, hidden=hidden, out_scale=out_scale,
                                      input_transform=wt)
        return TrainResult(UnimodalPredictor(model, kind), trace, [_ckpt("unimodal", model)])
    cell = 256.0 / cfg.eval_grid
    model, trace = train_nonparametric(X, Y + A, A, tc, cfg.sigma_np, n=cfg.eval_grid, cell=cell, rng=rng,
                                       hidden=hidden, input_transform=wt)
    return TrainResult(NonParametricPredictor(model), trace, [_ckpt("nonparametric", model)])


def save_result(res: TrainResult, out_dir, cfg: ExperimentConfig) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = digest(cfg.as_dict())
    paths = []
    for name, meta, arrays in res.checkpoints:
        meta = dict(meta, method=cfg.method, config_digest=tag, config=cfg.as_dict())
        p = out / f"{cfg.method}_{name}.ckpt"
        save_checkpoint(p, meta, arrays)
        paths.append(p)
    write_trace(out / f"{cfg.method}_trace.csv", res.trace)
    return paths


def _model_from_state(state, arrays):
    kinds = {"HypothesisNet": HypothesisNet, "FittingHead": FittingHead, "MdnModel": MdnModel,
             "NonParametricModel": NonParametricModel}
    return kinds[state["type"]].from_state(state, arrays)


def load_predictor(path) -> Predictor:
    meta, arrays = load_checkpoint(path)
    models, off = [], 0
    for st in meta["models"]:
        n = 2 * (len(st["mlp"]["sizes"]) - 1)
        models.append(_model_from_state(st, arrays[off:off + n]))
        off += n
    method = meta["method"]
    if method in ("ewtad-mdf", "ewtap-mdf"):
        return TwoStagePredictor(method, TwoStageModel(models[0], models[1]))
    if method == "mdn":
        return MdnPredictor(models[0])
    if method == "single-point":
        return PointPredictor(models[0])
    if method == "unimodal":
        return UnimodalPredictor(models[0], Kind(meta["config"]["kind"]))
    return NonParametricPredictor(models[0])


# -- evaluation --------------------------------------------------------------------------------

def sparsify(g: GridDensity, budget: float) -> GridDensity:
    """Drop the lightest bins whose summed mass stays within ``budget``, renormalize."""
    if budget <= 0:
        return g
    flat = g.mass.ravel()
    order = np.argsort(flat, kind="stable")
    cum = np.cumsum(flat[order])
    drop = order[cum <= budget]
    m = flat.copy()
    m[drop] = 0.0
    return GridDensity((m / m.sum()).reshape(g.mass.shape), g.cell, g.origin)


def evaluate(pred: Predictor, data: Dataset, cfg: ExperimentConfig, keep_grids: int = 0):
    """Per-condition metric values plus a few predicted grids for heatmaps."""
    n = cfg.eval_grid
    per = {}
    grids = []
    for actor, i, x, anchor, y_hat, mc, gt in data.test_conditions():
        hist = data.test_hist[i, :, actor]
        vals = {}
        m = pred.mixture(x, anchor, hist)
        hs = pred.hypotheses(x, anchor)
        g = pred.grid(x, anchor, n, hist)
        if m is not None:
            vals["nll"] = nll_metric(m, mc)
            vals["oracle"] = oracle_error(m, y_hat)
            if pred.method in MIXTURE_METHODS:
                vals["semd"] = semd(m)
        elif pred.method == "nonparametric":
            vals["nll"] = float(np.mean(grid_nll(g, mc)))
        if hs is not None:
            vals["oracle_hyp"] = oracle_error(hs, y_hat)
            if m is None:
                vals["oracle"] = vals["oracle_hyp"]
        f = cfg.emd_pool
        vals["emd"] = emd_exact(sparsify(g.coarsen(f), cfg.emd_mass_budget), gt.coarsen(f))
        vals["wemd"] = wemd(g, gt)
        for k, v in vals.items():
            per.setdefault(k, []).append(v)
        if len(grids) < keep_grids:
            grids.append((actor, i, g, gt))
    return {k: np.asarray(v) for k, v in per.items()}, grids


def report_rows(method: str, per: dict, seed) -> list[dict]:
    order = ["nll", "emd", "wemd", "semd", "oracle", "oracle_hyp"]
    return [{"method": method, "metric": k, "value": float(np.mean(per[k])), "n": len(per[k]), "seed": seed}
            for k in order if k in per]


def summary_table(rows) -> str:
    """Method x metric table of values averaged over seeds (markdown)."""
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    metrics = [k for k in ("nll", "emd", "wemd", "semd", "oracle") if any(r["metric"] == k for r in rows)]
    lines = ["| Method | " + " | ".join(k.upper() for k in metrics) + " |",
             "|---" * (len(metrics) + 1) + "|"]
    for m in methods:
        cells = []
        for k in metrics:
            v = [r["value"] for r in rows if r["method"] == m and r["metric"] == k]
            cells.append(f"{np.mean(v):.2f}" if v else "-")
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
