"""Run configuration and the train / evaluate / ablate / export commands."""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import torch

from .core import ModelConfig, ValidationError
from .data import (
    DENSITY_CLASSES,
    DatasetSpec,
    NormalizationStats,
    corrupt_missing,
    crime_val_windows,
    density_bins,
    fit_normalizer,
    load_dataset,
    n_windows,
    split_dataset,
)
from .generator import EDGE_ACTIONS, NODE_ACTIONS
from .metrics import compute_metrics, historical_average, metrics_by_class
from .model import CL4ST, Batch
from .training import (
    LossConfig,
    TrainConfig,
    load_model,
    lr_at,
    predict,
    save_checkpoint,
    train_epoch,
)

log = logging.getLogger(__name__)

VARIANTS = ("full", "wo_node_meta", "wo_edge_meta", "wo_meta", "wo_gcl")
VARIANT_DELTAS = {
    "full": {},
    "wo_node_meta": {"meta_node": False},
    "wo_edge_meta": {"meta_edge": False},
    "wo_meta": {"meta_node": False, "meta_edge": False},
    "wo_gcl": {"use_gcl": False},
}


class ConfigError(ValueError):
    pass


def load_schema(name: str) -> dict:
    return json.loads(resources.files("cl4st").joinpath("schemas", name).read_text())


def validate_report(report: dict) -> None:
    jsonschema.validate(report, load_schema("report.schema.json"))


@dataclass
class RunConfig:
    data: DatasetSpec
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    output_dir: str = "runs/default"
    variant: str = "full"
    stride: int = 1
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            jsonschema.validate(raw, load_schema("config.schema.json"))
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config invalid at {list(exc.absolute_path)}: {exc.message}") from exc
        raw = copy.deepcopy(raw)
        try:
            data = DatasetSpec(**raw["data"])
            loss_raw = raw.get("loss", {})
            loss_raw.setdefault("task", "crime" if data.kind == "crime_grid" else "traffic")
            train_raw = raw.get("train", {})
            env_seed = os.environ.get("CL4ST_SEED")
            if env_seed is not None:
                train_raw["seed"] = int(env_seed)
            cfg = cls(data=data, model=ModelConfig(**raw.get("model", {})),
                      train=TrainConfig(**train_raw), loss=LossConfig(**loss_raw),
                      output_dir=raw.get("output_dir", "runs/default"),
                      variant=raw.get("variant", "full"), stride=raw.get("stride", 1),
                      dtype=raw.get("dtype", "float32"))
        except (TypeError, ValidationError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.with_variant(cfg.variant)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def with_variant(self, variant: str) -> "RunConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        cfg = copy.deepcopy(self)
        cfg.variant = variant
        for key, value in VARIANT_DELTAS[variant].items():
            setattr(cfg.model, key, value)
        if variant == "wo_gcl":
            lm = list(cfg.train.lambda_max)
            lm[0] = 0.0
            cfg.train.lambda_max = tuple(lm)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"]["split"] = list(d["data"]["split"])
        d["train"]["lambda_max"] = list(d["train"]["lambda_max"])
        return d

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


class WindowSet:
    """Index-based view of a normalized series; x comes from ``inputs``, y from ``targets``."""

    def __init__(self, inputs, targets, tod, dow, t_in, t_out):
        self.inputs, self.targets = inputs, targets
        self.tod, self.dow = tod, dow
        self.t_in, self.t_out = t_in, t_out

    def arrays(self, starts):
        starts = np.asarray(starts)
        xi = starts[:, None] + np.arange(self.t_in)
        yi = starts[:, None] + self.t_in + np.arange(self.t_out)
        return self.inputs[xi], self.targets[yi], self.tod[xi], self.dow[xi]


@dataclass
class Prepared:
    raw: np.ndarray
    graph: object
    tidx: object
    stats: NormalizationStats
    splits: tuple
    windows: WindowSet


def prepare(cfg: RunConfig, stats: NormalizationStats | None = None, missing_rate=None,
            missing_seed: int = 0) -> Prepared:
    spec = cfg.data
    ft, graph, tidx = load_dataset(spec)
    raw = ft.data
    n = n_windows(raw.shape[0], spec.t_in, spec.t_out, cfg.stride)
    if n == 0:
        raise ValidationError(f"{raw.shape[0]} steps are too few for t_in={spec.t_in}, t_out={spec.t_out}")
    starts = np.arange(n) * cfg.stride
    val_w = crime_val_windows(tidx.interval_minutes)
    splits = split_dataset(starts, spec.kind, ratio=spec.split, val_windows=val_w)
    if stats is None:
        train_end = int(splits[0][-1]) + spec.t_in + spec.t_out
        stats = fit_normalizer(raw[:train_end])
    inputs = raw
    if missing_rate is not None:
        inputs = corrupt_missing(raw, missing_rate, missing_seed)[0].data
    windows = WindowSet(stats.apply(inputs), stats.apply(raw), tidx.tod, tidx.dow,
                        spec.t_in, spec.t_out)
    return Prepared(raw, graph, tidx, stats, splits, windows)


def build_model(cfg: RunConfig, prep: Prepared) -> CL4ST:
    T_total, N, F = prep.raw.shape
    torch.manual_seed(cfg.train.seed)
    model = CL4ST(cfg.model, T=cfg.data.t_in, N=N, F=F, T_out=cfg.data.t_out, F_out=F,
                  spatial_structure=prep.graph.structure())
    return model.to(cfg.torch_dtype)


def evaluate_split(model, prep: Prepared, starts, dtype, batch_size=64):
    x, y, tod, dow = prep.windows.arrays(starts)
    pred = prep.stats.invert(predict(model, x, tod, dow, batch_size, dtype))
    truth = prep.stats.invert(y)
    return pred, truth, x


def _iter_batches(ws: WindowSet, starts, batch_size, rng, dtype):
    order = rng.permutation(starts)
    for i in range(0, len(order), batch_size):
        chunk = order[i:i + batch_size]
        if len(chunk) < 2:
            continue
        yield Batch.from_arrays(*ws.arrays(chunk), dtype=dtype)


def checkpoint_config(cfg: RunConfig, model: CL4ST, stats: NormalizationStats) -> dict:
    return {"model": asdict(cfg.model), "dims": model.dims, "normalization": stats.to_dict(),
            "run": cfg.to_dict(), "variant": cfg.variant}


def fit(cfg: RunConfig, command: str = "train") -> dict:
    """Train, keep the best-on-validation checkpoint, evaluate on test."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg)
    train_s, val_s, test_s = prep.splits
    model = build_model(cfg, prep)
    dtype = cfg.torch_dtype
    tc = cfg.train
    optimizer = torch.optim.Adam(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    schedule = tc.schedule()
    ckpt_path = out / "best.ckpt"
    log_path = out / "log.ndjson"
    log_path.write_text("")
    best, best_epoch, stale = float("inf"), -1, 0
    best_state = None
    epochs_run = 0
    for epoch in range(tc.max_epochs):
        lr = lr_at(epoch, tc)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng(tc.seed * 7919 + epoch)
        batches = _iter_batches(prep.windows, train_s, tc.batch_size, rng, dtype)
        stats = train_epoch(model, batches, optimizer, epoch, cfg.loss, schedule,
                            seed=tc.seed, clip_norm=tc.clip_norm)
        pred, truth, _ = evaluate_split(model, prep, val_s, dtype, tc.eval_batch_size)
        val = compute_metrics(truth, pred)
        lam = stats["lambdas"]
        row = {"epoch": epoch, "train_loss": stats["loss"], "val_mae": val.mae,
               "val_rmse": val.rmse, "val_mape": val.mape_percent, "lr": lr,
               "lambda1": lam[0], "lambda2": lam[1], "lambda3": lam[2]}
        with open(log_path, "a") as fh:
            fh.write(json.dumps(row) + "\n")
        log.info("epoch %d loss %.4f val_mae %.4f", epoch, stats["loss"], val.mae)
        epochs_run = epoch + 1
        if val.mae < best:
            best, best_epoch, stale = val.mae, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= tc.patience:
                break
    model.load_state_dict(best_state)
    save_checkpoint(ckpt_path, model, checkpoint_config(cfg, model, prep.stats))

    pred, truth, x = evaluate_split(model, prep, test_s, dtype, tc.eval_batch_size)
    test = compute_metrics(truth, pred, horizon_axis=1)
    ha = compute_metrics(truth, historical_average(prep.stats.invert(x), cfg.data.t_out))
    report = {
        "command": command,
        "variant": cfg.variant,
        "dataset": str(cfg.data.path),
        "kind": cfg.data.kind,
        "seed": tc.seed,
        "split": {"train": len(train_s), "val": len(val_s), "test": len(test_s)},
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "best_val_mae": best,
        "metrics": test.to_dict(),
        "baseline_historical_average": {"mae": ha.mae, "rmse": ha.rmse,
                                        "mape_percent": ha.mape_percent},
        "missing_rate": None,
    }
    validate_report(report)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return report


def cmd_train(config_path) -> dict:
    return fit(RunConfig.from_file(config_path), "train")


def cmd_ablate(config_path, variant: str) -> dict:
    cfg = RunConfig.from_file(config_path).with_variant(variant)
    cfg.output_dir = str(Path(cfg.output_dir) / variant)
    return fit(cfg, "ablate")


def _run_config_from_ckpt(config: dict, data_dir=None) -> RunConfig:
    run = copy.deepcopy(config["run"])
    if data_dir is not None:
        run["data"]["path"] = str(data_dir)
    return RunConfig.from_dict(run)


def cmd_evaluate(ckpt, data_dir, missing_rate=None, seed: int = 0, with_density=False,
                 out=None) -> dict:
    model, config = load_model(ckpt)
    cfg = _run_config_from_ckpt(config, data_dir)
    stats = NormalizationStats.from_dict(config["normalization"])
    prep = prepare(cfg, stats=stats, missing_rate=missing_rate, missing_seed=seed)
    if prep.raw.shape[1:] != (model.dims["N"], model.dims["F"]):
        raise ValidationError(f"dataset (N, F) = {prep.raw.shape[1:]} does not match checkpoint "
                              f"({model.dims['N']}, {model.dims['F']})")
    dtype = next(model.parameters()).dtype
    model.to(dtype)
    train_s, _, test_s = prep.splits
    pred, truth, x = evaluate_split(model, prep, test_s, dtype)
    test = compute_metrics(truth, pred, horizon_axis=1)
    if with_density:
        train_end = int(train_s[-1]) + cfg.data.t_in + cfg.data.t_out
        classes = density_bins(prep.raw[cfg.data.t_in:train_end])
        test.per_density_class = metrics_by_class(truth, pred, classes, DENSITY_CLASSES, node_axis=2)
    ha = compute_metrics(truth, historical_average(prep.stats.invert(x), cfg.data.t_out))
    report = {
        "command": "evaluate",
        "variant": config.get("variant", "full"),
        "dataset": str(cfg.data.path),
        "kind": cfg.data.kind,
        "seed": seed,
        "split": {"train": len(prep.splits[0]), "val": len(prep.splits[1]), "test": len(test_s)},
        "metrics": test.to_dict(),
        "baseline_historical_average": {"mae": ha.mae, "rmse": ha.rmse,
                                        "mape_percent": ha.mape_percent},
        "missing_rate": missing_rate,
    }
    validate_report(report)
    out = Path(out) if out else Path(ckpt).parent / "eval_report.json"
    out.write_text(json.dumps(report, indent=2))
    return report


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _heatmap(path, matrix, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, cmap="viridis", aspect="auto")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.savefig(path, dpi=80)
    plt.close(fig)


ACTION_COLORS = np.array([[0.85, 0.2, 0.2], [0.2, 0.7, 0.3], [0.25, 0.4, 0.85]])


def cmd_export(ckpt, what: str, sample: int, data_dir=None, out=None, seed: int = 0) -> list:
    """Write attention matrices or sampled augmentations for one window."""
    if what not in ("attention", "augmentations"):
        raise ValueError("what must be 'attention' or 'augmentations'")
    model, config = load_model(ckpt)
    cfg = _run_config_from_ckpt(config, data_dir)
    prep = prepare(cfg, stats=NormalizationStats.from_dict(config["normalization"]))
    n_total = sum(len(s) for s in prep.splits)
    if not 0 <= sample < n_total:
        raise IndexError(f"sample {sample} out of range [0, {n_total})")
    start = np.concatenate(prep.splits)[sample]
    dtype = next(model.parameters()).dtype
    batch = Batch.from_arrays(*prep.windows.arrays([start]), dtype=dtype)
    out = Path(out) if out else Path(ckpt).parent / f"export_{what}_{sample}"
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    written = []
    with torch.no_grad():
        if what == "attention":
            attn = {}
            model.branch(batch.x, batch.tod, batch.dow, attn=attn)
            for kind in ("spatial", "temporal"):
                for layer, alpha in enumerate(attn[kind]):
                    for head in range(alpha.shape[1]):
                        a = alpha[0, head].double().numpy()
                        stem = out / f"attention_{kind}_layer{layer}_head{head}"
                        np.savetxt(f"{stem}.csv", a, delimiter=",", fmt="%.17g")
                        _heatmap(f"{stem}.png", a, f"{kind} layer {layer} head {head}")
                        written += [Path(f"{stem}.csv"), Path(f"{stem}.png")]
            return written
        if model.spatial_generator is None:
            raise ValueError("checkpoint has no view generators (wo_gcl variant)")
        gen = torch.Generator().manual_seed(seed)
        aug = model.augment(batch.x, generator=gen, hard=True)
    for kind in ("spatial", "temporal"):
        view = aug[f"{kind[0]}_view"]
        node_act = view.node_actions[0].argmax(-1).numpy()
        node_p = view.node_probs[0].double().numpy()
        path = out / f"augment_{kind}_nodes.csv"
        _write_csv(path, ["node", "action", *[f"p_{a}" for a in NODE_ACTIONS]],
                   [[i, NODE_ACTIONS[a], *p] for i, (a, p) in enumerate(zip(node_act, node_p))])
        written.append(path)
        edges = view.edge_index.numpy()
        edge_act = view.edge_actions[0].argmax(-1).numpy()
        edge_p = view.edge_probs[0].double().numpy()
        path = out / f"augment_{kind}_edges.csv"
        _write_csv(path, ["src", "dst", "action", *[f"p_{a}" for a in EDGE_ACTIONS]],
                   [[int(s), int(d), EDGE_ACTIONS[a], *p]
                    for (s, d), a, p in zip(edges, edge_act, edge_p)])
        written.append(path)
        if kind == "spatial" and cfg.data.kind == "crime_grid":
            meta = json.loads((Path(cfg.data.path) / "meta.json").read_text())
            grid = ACTION_COLORS[node_act].reshape(int(meta["I"]), int(meta["J"]), 3)
            import matplotlib
            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
            path = out / "augment_spatial_grid.png"
            plt.imsave(path, grid)
            written.append(path)
    return written
