"""Spatio-temporal GAT encoder, position-aware decoder and projection head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as Fn
from torch import nn

from .core import DOW_SLOTS, TOD_SLOTS, ModelConfig
from .generator import MetaViewGenerator

LEAKY_SLOPE = 0.2


class GATLayer(nn.Module):
    """Multi-head graph attention over N(i) + {i}.

    ``weights`` (optional, same shape as ``structure``) scales each neighbour's
    unnormalized attention; it carries augmentation edge drops while keeping
    gradients for straight-through views. Self-attention always has weight 1.
    """

    def __init__(self, in_dim: int, out_dim: int, heads: int, concat: bool = True):
        super().__init__()
        if concat and out_dim % heads:
            raise ValueError("out_dim must be divisible by heads when concatenating")
        self.heads = heads
        self.concat = concat
        self.head_dim = out_dim // heads if concat else out_dim
        self.W = nn.Parameter(torch.empty(heads, in_dim, self.head_dim))
        self.a_src = nn.Parameter(torch.empty(heads, self.head_dim))
        self.a_dst = nn.Parameter(torch.empty(heads, self.head_dim))
        bound = 1.0 / math.sqrt(in_dim)
        nn.init.uniform_(self.W, -bound, bound)
        nn.init.uniform_(self.a_src, -1.0 / math.sqrt(self.head_dim), 1.0 / math.sqrt(self.head_dim))
        nn.init.uniform_(self.a_dst, -1.0 / math.sqrt(self.head_dim), 1.0 / math.sqrt(self.head_dim))

    def forward(self, x, structure, weights=None, return_attention=False):
        # x: (..., n, in); structure/weights: (n, n) or (..., n, n)
        n = x.shape[-2]
        if x.shape[-1] != self.W.shape[1]:
            raise ValueError(f"input width {x.shape[-1]} != layer input {self.W.shape[1]}")
        wx = torch.einsum("...ni,hio->...hno", x, self.W)
        src = (wx * self.a_src[:, None, :]).sum(-1)
        dst = (wx * self.a_dst[:, None, :]).sum(-1)
        e = Fn.leaky_relu(src.unsqueeze(-1) + dst.unsqueeze(-2), LEAKY_SLOPE)
        eye = torch.eye(n, dtype=x.dtype)
        support = (structure.to(x.dtype) + eye) > 0
        if weights is None:
            w = support.to(x.dtype)
        else:
            w = weights * (1.0 - eye) + eye
        support = support.unsqueeze(-3)
        w = w.unsqueeze(-3)
        masked = e.masked_fill(~support, float("-inf"))
        m = masked.amax(dim=-1, keepdim=True).detach()
        num = w * torch.exp(masked - m)
        alpha = num / num.sum(dim=-1, keepdim=True)
        out = torch.matmul(alpha, wx)
        if self.concat:
            out = out.movedim(-3, -2).reshape(*out.shape[:-3], n, self.heads * self.head_dim)
        else:
            out = out.mean(dim=-3)
        return (out, alpha) if return_attention else out


class STEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, T: int, N: int, F: int):
        super().__init__()
        self.T, self.N, self.F, self.d = T, N, F, cfg.d
        self.embed = nn.Linear(F, cfg.d)
        self.fc_s = nn.Linear(T * cfg.d, cfg.d_s)
        self.spatial_gat = nn.ModuleList(self._gat_stack(cfg.d_s, cfg.K_spatial, cfg))
        self.fc_s_back = nn.Linear(cfg.d_s, T * cfg.d)
        self.fc_t = nn.Linear(N * cfg.d, cfg.d_t)
        self.temporal_gat = nn.ModuleList(self._gat_stack(cfg.d_t, cfg.K_temporal, cfg))
        self.fc_t_back = nn.Linear(cfg.d_t, N * cfg.d)
        self.dropout = cfg.dropout

    @staticmethod
    def _gat_stack(width, heads, cfg):
        layers = []
        for k in range(cfg.n_gat_layers):
            last = k == cfg.n_gat_layers - 1
            concat = not (last and cfg.final_merge == "mean")
            layers.append(GATLayer(width, width, heads, concat=concat))
        return layers

    def embed_input(self, x):
        if x.shape[-1] != self.F:
            raise ValueError(f"expected {self.F} input features, got {x.shape[-1]}")
        return self.embed(x)

    def _gat(self, layers, h, structure, weights, attn):
        for k, layer in enumerate(layers):
            if attn is not None:
                h, a = layer(h, structure, weights, return_attention=True)
                attn.append(a)
            else:
                h = layer(h, structure, weights)
            if k < len(layers) - 1:
                h = Fn.elu(h)
                if self.dropout:
                    h = Fn.dropout(h, self.dropout, self.training)
        return h

    def spatial_pass(self, x0, structure, weights=None, attn=None):
        # x0: (B, T, N, d)
        B, T, N, d = x0.shape
        h = x0.permute(0, 2, 1, 3).reshape(B, N, T * d)
        h = self.fc_s(h)
        h = self._gat(self.spatial_gat, h, structure, weights, attn)
        h = self.fc_s_back(h).reshape(B, N, T, d)
        return h.permute(0, 2, 1, 3)

    def temporal_pass(self, hs, structure, weights=None, attn=None):
        B, T, N, d = hs.shape
        h = self.fc_t(hs.reshape(B, T, N * d))
        h = self._gat(self.temporal_gat, h, structure, weights, attn)
        return self.fc_t_back(h).reshape(B, T, N, d)

    def forward(self, x0, s_struct, t_struct, s_weights=None, t_weights=None, attn=None):
        sp = [] if attn is not None else None
        tp = [] if attn is not None else None
        h = self.spatial_pass(x0, s_struct, s_weights, sp)
        h = self.temporal_pass(h, t_struct, t_weights, tp)
        if attn is not None:
            attn["spatial"], attn["temporal"] = sp, tp
        return h


def _mlp(sizes):
    layers = []
    for k, (i, o) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(i, o))
        if k < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig, T: int, N: int, T_out: int, F_out: int):
        super().__init__()
        self.T_out, self.F_out = T_out, F_out
        hid = cfg.decoder_hidden
        self.omega1 = _mlp([T * cfg.d, hid, hid])
        self.omega2 = _mlp([2 * hid + 3 * cfg.D, hid, T_out * F_out])
        self.e_spatial = nn.Parameter(torch.empty(N, cfg.D))
        self.e_tod = nn.Parameter(torch.empty(TOD_SLOTS, cfg.D))
        self.e_dow = nn.Parameter(torch.empty(DOW_SLOTS, cfg.D))
        for p in (self.e_spatial, self.e_tod, self.e_dow):
            nn.init.xavier_uniform_(p)

    def forward(self, h, x0, tod, dow):
        # h, x0: (B, T, N, d); tod, dow: (B,) indices for the chosen input step
        B, T, N, d = h.shape
        if torch.any((tod < 0) | (tod >= TOD_SLOTS)) or torch.any((dow < 0) | (dow >= DOW_SLOTS)):
            raise IndexError("tod/dow index out of range")
        fh = self.omega1(h.permute(0, 2, 1, 3).reshape(B, N, T * d))
        fx = self.omega1(x0.permute(0, 2, 1, 3).reshape(B, N, T * d))
        es = self.e_spatial.unsqueeze(0).expand(B, N, -1)
        et = self.e_tod[tod].unsqueeze(1).expand(B, N, -1)
        ew = self.e_dow[dow].unsqueeze(1).expand(B, N, -1)
        fused = torch.cat([fh, es, et, ew, fx], dim=-1)
        y = self.omega2(fused).reshape(B, N, self.T_out, self.F_out)
        return y.permute(0, 2, 1, 3)


class ProjectionHead(nn.Module):
    def __init__(self, d: int, proj_dim: int):
        super().__init__()
        self.net = _mlp([d, proj_dim, proj_dim])

    def forward(self, h):
        return self.net(h.mean(dim=(-3, -2)))


@dataclass
class Batch:
    x: torch.Tensor
    y: torch.Tensor
    tod: torch.Tensor
    dow: torch.Tensor

    @classmethod
    def from_arrays(cls, x, y, tod, dow, dtype=torch.float32):
        return cls(torch.as_tensor(np.ascontiguousarray(x), dtype=dtype),
                   torch.as_tensor(np.ascontiguousarray(y), dtype=dtype),
                   torch.as_tensor(np.asarray(tod), dtype=torch.long),
                   torch.as_tensor(np.asarray(dow), dtype=torch.long))

    @classmethod
    def from_samples(cls, samples, dtype=torch.float32):
        return cls.from_arrays(np.stack([s.x for s in samples]), np.stack([s.y for s in samples]),
                               np.stack([s.tod_index for s in samples]),
                               np.stack([s.dow_index for s in samples]), dtype)


class CL4ST(nn.Module):
    """Shared encoder over an original and a meta-augmented branch."""

    def __init__(self, cfg: ModelConfig, *, T: int, N: int, F: int, T_out: int, F_out: int,
                 spatial_structure, edge_list=None):
        super().__init__()
        self.cfg = cfg
        self.dims = {"T": T, "N": N, "F": F, "T_out": T_out, "F_out": F_out}
        s = torch.as_tensor(np.asarray(spatial_structure), dtype=torch.float32)
        if s.shape != (N, N):
            raise ValueError(f"spatial structure {tuple(s.shape)} does not match N={N}")
        t = torch.ones(T, T) - torch.eye(T)
        self.register_buffer("s_struct", s)
        self.register_buffer("t_struct", t, persistent=False)
        self.encoder = STEncoder(cfg, T, N, F)
        self.decoder = Decoder(cfg, T, N, T_out, F_out)
        self.projection = ProjectionHead(cfg.d, cfg.proj_dim)
        self.tau = cfg.gumbel_tau
        if cfg.use_gcl:
            common = dict(d1=cfg.gin_d1, hidden=cfg.gin_hidden, d_z=cfg.d_z,
                          phi_hidden=cfg.phi_hidden, psi_hidden=cfg.psi_hidden,
                          eps1=cfg.gin_eps1, eps2=cfg.gin_eps2, meta_node=cfg.meta_node,
                          meta_edge=cfg.meta_edge, share_edge_latent=cfg.share_edge_latent)
            self.spatial_generator = MetaViewGenerator(T * F, T * N * F, **common)
            self.temporal_generator = MetaViewGenerator(N * F, T * N * F, **common)
        else:
            self.spatial_generator = None
            self.temporal_generator = None

    @property
    def s_edges(self):
        return torch.nonzero(self.s_struct > 0).reshape(-1, 2)

    @property
    def t_edges(self):
        return torch.nonzero(self.t_struct > 0).reshape(-1, 2)

    def _position(self, idx):
        return idx[:, -1] if self.cfg.tod_position == "last" else idx[:, 0]

    def branch(self, x, tod, dow, s_weights=None, t_weights=None, attn=None):
        x0 = self.encoder.embed_input(x)
        s_struct = self.s_struct.to(x.dtype)
        t_struct = self.t_struct.to(x.dtype)
        h = self.encoder(x0, s_struct, t_struct, s_weights, t_weights, attn)
        y_hat = self.decoder(h, x0, self._position(tod), self._position(dow))
        return h, y_hat

    def predict(self, batch: Batch):
        return self.branch(batch.x, batch.tod, batch.dow)[1]

    def augment(self, x, generator=None, force_keep=False, hard=None, deterministic=False):
        """Spatial then temporal meta view on raw input windows x: (B, T, N, F)."""
        if self.spatial_generator is None:
            raise RuntimeError("model was built without the augmented branch")
        hard = self.cfg.hard_views if hard is None else hard
        B, T, N, F = x.shape
        signal = x.reshape(B, T * N * F)
        s_feat = x.permute(0, 2, 1, 3).reshape(B, N, T * F)
        s_view, s_w, s_feat, s_kl = self.spatial_generator(
            s_feat, signal, self.s_struct.to(x.dtype), self.s_edges, tau=self.tau, hard=hard,
            generator=generator, force_keep=force_keep, deterministic=deterministic)
        x_s = s_feat.reshape(B, N, T, F).permute(0, 2, 1, 3)
        t_feat = x_s.reshape(B, T, N * F)
        t_view, t_w, t_feat, t_kl = self.temporal_generator(
            t_feat, signal, self.t_struct.to(x.dtype), self.t_edges, tau=self.tau, hard=hard,
            generator=generator, force_keep=force_keep, deterministic=deterministic)
        x_aug = t_feat.reshape(B, T, N, F)
        return {"x": x_aug, "s_weights": s_w, "t_weights": t_w, "s_view": s_view,
                "t_view": t_view, "s_kl": s_kl, "t_kl": t_kl}

    def forward(self, batch: Batch, generator=None, force_keep=False, hard=None,
                deterministic=False):
        h, y_hat = self.branch(batch.x, batch.tod, batch.dow)
        out = {"h": h, "y_hat": y_hat}
        if self.spatial_generator is None:
            return out
        aug = self.augment(batch.x, generator, force_keep, hard, deterministic)
        h_aug, y_aug = self.branch(aug["x"], batch.tod, batch.dow, aug["s_weights"], aug["t_weights"])
        out.update(aug)
        out.update({"h_aug": h_aug, "y_hat_aug": y_aug, "z": self.projection(h),
                    "z_aug": self.projection(h_aug)})
        return out
