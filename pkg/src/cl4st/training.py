"""Losses, annealing and learning-rate schedules, the two-branch training loop, checkpoints."""
from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import ModelConfig, ValidationError
from .generator import kl_loss
from .model import CL4ST, Batch

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossConfig:
    task: str = "traffic"
    delta: float = 1.0
    tau_cl: float = 0.5
    include_positive_in_denominator: bool = True

    def __post_init__(self):
        if self.task not in ("traffic", "crime"):
            raise ValidationError("task must be 'traffic' or 'crime'")
        if self.delta <= 0 or self.tau_cl <= 0:
            raise ValidationError("delta and tau_cl must be positive")


@dataclass
class AnnealSchedule:
    lambda_max: tuple = (1.0, 1.0, 1.0)
    ramp_epochs: int = 1
    shape: str = "linear"

    def __post_init__(self):
        self.lambda_max = tuple(float(v) for v in self.lambda_max)
        if len(self.lambda_max) != 3 or any(v < 0 for v in self.lambda_max):
            raise ValidationError("lambda_max must be three non-negative values")
        if self.shape not in ("linear", "cosine"):
            raise ValidationError("shape must be 'linear' or 'cosine'")

    def __call__(self, epoch: int) -> tuple:
        frac = min(1.0, epoch / self.ramp_epochs) if self.ramp_epochs > 0 else 1.0
        if self.shape == "cosine":
            frac = 0.5 * (1.0 - math.cos(math.pi * frac))
        return tuple(lm * frac for lm in self.lambda_max)


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    decay_ratio: float = 0.5
    decay_epochs: list = field(default_factory=lambda: [1, 50, 100])
    max_epochs: int = 100
    seed: int = 0
    clip_norm: float | None = None
    patience: int = 15
    anneal_fraction: float = 0.25
    anneal_shape: str = "linear"
    lambda_max: tuple = (1.0, 1.0, 1.0)
    weight_decay: float = 0.0
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("contrastive training needs batch_size >= 2")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")

    def schedule(self) -> AnnealSchedule:
        ramp = max(1, round(self.anneal_fraction * self.max_epochs))
        return AnnealSchedule(tuple(self.lambda_max), ramp, self.anneal_shape)


# ------------------------------------------------------------------------- losses

def _check_shapes(y, y_hat):
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")


def huber_loss(y, y_hat, delta: float = 1.0):
    _check_shapes(y, y_hat)
    r = (y - y_hat).abs()
    quad = 0.5 * r.square()
    lin = delta * (r - 0.5 * delta)
    return torch.where(r <= delta, quad, lin).mean()


def squared_error_loss(y, y_hat):
    _check_shapes(y, y_hat)
    return (y - y_hat).square().mean()


def task_loss(y, y_hat, cfg: LossConfig):
    if cfg.task == "traffic":
        return huber_loss(y, y_hat, cfg.delta)
    return squared_error_loss(y, y_hat)


def prediction_loss(y, y_hat, y_hat_aug, cfg: LossConfig):
    return task_loss(y, y_hat, cfg) + task_loss(y, y_hat_aug, cfg)


def contrastive_loss(z, z_aug, tau_cl: float = 0.5, include_positive: bool = True):
    """Symmetric graph-level InfoNCE with cosine similarity; rows i of z and z_aug are positives."""
    if z.shape != z_aug.shape or z.dim() != 2:
        raise ValueError("z and z_aug must both be (B, d)")
    B = z.shape[0]
    if B < 2:
        raise ValueError("contrastive loss needs at least two samples")
    nz, na = z.norm(dim=1), z_aug.norm(dim=1)
    if torch.any(nz == 0) or torch.any(na == 0):
        raise ValueError("zero-norm representation row")
    sim = (z / nz[:, None]) @ (z_aug / na[:, None]).T / tau_cl
    total = 0.0
    for s in (sim, sim.T):
        pos = s.diagonal()
        if include_positive:
            denom = torch.logsumexp(s, dim=1)
        else:
            off = s.masked_fill(torch.eye(B, dtype=torch.bool), float("-inf"))
            denom = torch.logsumexp(off, dim=1)
        total = total + (denom - pos).sum()
    return total / B


def joint_loss(pred, cl, kl_spatial, kl_temporal, lambdas):
    parts = {"prediction": pred, "contrastive": cl, "kl_spatial": kl_spatial,
             "kl_temporal": kl_temporal}
    for name, value in parts.items():
        if not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise TrainingDiverged(f"non-finite {name} loss component: {float(value)}")
    l1, l2, l3 = lambdas
    return pred + l1 * cl + l2 * kl_spatial + l3 * kl_temporal


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    steps = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.lr * cfg.decay_ratio ** steps


# -------------------------------------------------------------------------- loop

def model_losses(model: CL4ST, batch: Batch, loss_cfg: LossConfig, lambdas, generator=None,
                 force_keep=False, hard=None):
    out = model(batch, generator=generator, force_keep=force_keep, hard=hard)
    if model.spatial_generator is None:
        pred = task_loss(batch.y, out["y_hat"], loss_cfg)
        zero = torch.zeros((), dtype=pred.dtype)
        comps = {"prediction": pred, "contrastive": zero, "kl_spatial": zero, "kl_temporal": zero}
    else:
        comps = {
            "prediction": prediction_loss(batch.y, out["y_hat"], out["y_hat_aug"], loss_cfg),
            "contrastive": contrastive_loss(out["z"], out["z_aug"], loss_cfg.tau_cl,
                                            loss_cfg.include_positive_in_denominator),
            "kl_spatial": kl_loss(out["s_kl"]),
            "kl_temporal": kl_loss(out["t_kl"]),
        }
    total = joint_loss(comps["prediction"], comps["contrastive"], comps["kl_spatial"],
                       comps["kl_temporal"], lambdas)
    return total, comps, out


def train_epoch(model: CL4ST, batches, optimizer, epoch: int, loss_cfg: LossConfig,
                schedule: AnnealSchedule, *, seed: int = 0, clip_norm=None):
    model.train()
    lambdas = schedule(epoch)
    gen = torch.Generator().manual_seed(seed * 100003 + epoch)
    cfg = model.cfg
    model.tau = max(cfg.gumbel_tau_min, cfg.gumbel_tau * cfg.gumbel_anneal ** epoch) \
        if cfg.gumbel_anneal != 1.0 else cfg.gumbel_tau
    totals, count = {}, 0
    for batch in batches:
        optimizer.zero_grad()
        loss, comps, _ = model_losses(model, batch, loss_cfg, lambdas, gen)
        loss.backward()
        if clip_norm:
            torch.nn.utils.clip_grad_norm_(model.parameters(), clip_norm)
        optimizer.step()
        n = batch.x.shape[0]
        count += n
        totals["loss"] = totals.get("loss", 0.0) + loss.item() * n
        for k, v in comps.items():
            totals[k] = totals.get(k, 0.0) + v.item() * n
    metrics = {k: v / max(count, 1) for k, v in totals.items()}
    metrics["lambdas"] = lambdas
    return metrics


@torch.no_grad()
def predict(model: CL4ST, x, tod, dow, batch_size=64, dtype=torch.float32, return_h=False):
    """Original-branch predictions for stacked normalized inputs (n, T, N, F)."""
    model.eval()
    preds = []
    for i in range(0, x.shape[0], batch_size):
        xb = torch.as_tensor(np.ascontiguousarray(x[i:i + batch_size]), dtype=dtype)
        tb = torch.as_tensor(tod[i:i + batch_size], dtype=torch.long)
        db = torch.as_tensor(dow[i:i + batch_size], dtype=torch.long)
        preds.append(model.branch(xb, tb, db)[1].double().numpy())
    return np.concatenate(preds, axis=0)


# -------------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: CL4ST, config: dict) -> None:
    """Zip archive: ``config.json`` plus one ``params/<name>.npy`` per state-dict tensor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(config, indent=2, sort_keys=True))
        for name, tensor in model.state_dict().items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy())
            zf.writestr(f"params/{name}.npy", buf.getvalue())


def read_checkpoint(path):
    with zipfile.ZipFile(path) as zf:
        config = json.loads(zf.read("config.json"))
        params = {}
        for info in zf.infolist():
            if info.filename.startswith("params/") and info.filename.endswith(".npy"):
                name = info.filename[len("params/"):-len(".npy")]
                params[name] = np.load(io.BytesIO(zf.read(info)))
    return config, params


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def load_model(path):
    config, params = read_checkpoint(path)
    mcfg = ModelConfig(**config["model"])
    dims = config["dims"]
    model = CL4ST(mcfg, spatial_structure=np.zeros((dims["N"], dims["N"])), **dims)
    state = {k: torch.as_tensor(v) for k, v in params.items()}
    # restore in the stored precision, whatever the current default dtype is
    floats = [v.dtype for v in state.values() if v.is_floating_point()]
    if floats:
        model.to(floats[0])
    model.load_state_dict(state)
    return model, config
