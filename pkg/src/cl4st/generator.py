"""Learnable, input-conditioned node/edge augmentation.

All functions are batched over a leading sample axis ``B``. Node actions are
ordered ``(drop, keep, mask)`` and edge actions ``(drop, keep)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

NODE_ACTIONS = ("drop", "keep", "mask")
EDGE_ACTIONS = ("drop", "keep")
DROP, KEEP, MASK = 0, 1, 2


class MLPLayout:
    """Flattening order for an MLP: for each layer, weight (in x out) row-major, then bias."""

    def __init__(self, sizes):
        self.sizes = list(sizes)
        self.shapes = [(i, o) for i, o in zip(self.sizes[:-1], self.sizes[1:])]

    @property
    def count(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def unflatten(self, vec: torch.Tensor):
        if vec.shape[-1] != self.count:
            raise ValueError(f"expected {self.count} parameters, got {vec.shape[-1]}")
        lead = vec.shape[:-1]
        out, pos = [], 0
        for i, o in self.shapes:
            w = vec[..., pos:pos + i * o].reshape(*lead, i, o)
            pos += i * o
            b = vec[..., pos:pos + o]
            pos += o
            out.append((w, b))
        return out

    def flatten(self, params) -> torch.Tensor:
        parts = []
        for w, b in params:
            parts.append(w.reshape(*w.shape[:-2], -1))
            parts.append(b)
        return torch.cat(parts, dim=-1)

    def init_flat(self, generator=None) -> torch.Tensor:
        chunks = []
        for i, o in self.shapes:
            bound = 1.0 / math.sqrt(i)
            chunks.append((torch.rand(i * o, generator=generator) * 2 - 1) * bound)
            chunks.append((torch.rand(o, generator=generator) * 2 - 1) * bound)
        return torch.cat(chunks)


def batched_mlp(h: torch.Tensor, params) -> torch.Tensor:
    """Apply per-sample MLP weights. h: (B, n, in); weights (B, in, out) or (in, out)."""
    for k, (w, b) in enumerate(params):
        h = torch.matmul(h, w) + b.unsqueeze(-2)
        if k < len(params) - 1:
            h = torch.relu(h)
    return h


@dataclass
class GINParams:
    theta1: list
    theta2: list
    eps1: float = 0.0
    eps2: float = 0.0


@dataclass
class EdgeViewParams:
    theta3: list


@dataclass
class AugmentationView:
    node_probs: torch.Tensor
    node_actions: torch.Tensor
    edge_probs: torch.Tensor
    edge_actions: torch.Tensor
    edge_index: torch.Tensor


def gin_layer(h: torch.Tensor, structure: torch.Tensor, params, eps: float) -> torch.Tensor:
    """h'_v = MLP[(1 + eps) h_v + sum of neighbour rows]; structure holds no self-loops."""
    if h.shape[-2] != structure.shape[-1]:
        raise ValueError(f"{h.shape[-2]} feature rows for a {structure.shape[-1]}-node graph")
    if h.shape[-1] != params[0][0].shape[-2]:
        raise ValueError(f"feature width {h.shape[-1]} does not match MLP input {params[0][0].shape[-2]}")
    agg = (1.0 + eps) * h + torch.matmul(structure.to(h.dtype), h)
    return batched_mlp(agg, params)


def sample_gumbel(shape, generator=None, dtype=torch.float64) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    tiny = torch.finfo(dtype).tiny
    return -torch.log(-torch.log(u.clamp(min=tiny, max=1.0 - torch.finfo(dtype).eps)))


def gumbel_softmax(logits: torch.Tensor, tau: float = 1.0, hard: bool = False,
                   generator=None, noise: torch.Tensor | None = None) -> torch.Tensor:
    """Relaxed categorical sample over the last axis.

    With ``hard`` the forward value is the argmax one-hot while the gradient is
    that of the soft sample (straight-through).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if noise is None:
        noise = sample_gumbel(logits.shape, generator, logits.dtype)
    soft = torch.softmax((logits + noise) / tau, dim=-1)
    if not hard:
        return soft
    return straight_through(soft)


def straight_through(soft: torch.Tensor) -> torch.Tensor:
    index = soft.argmax(dim=-1, keepdim=True)
    one_hot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
    return one_hot - soft.detach() + soft


def _sample_view(logits, tau, hard, generator, force_keep):
    probs = gumbel_softmax(logits, tau, hard=False, generator=generator)
    if force_keep:
        actions = torch.zeros_like(probs)
        actions[..., KEEP] = 1.0
    elif hard:
        actions = straight_through(probs)
    else:
        actions = probs
    return probs, actions


def node_view(structure, features, gin: GINParams, tau=1.0, generator=None, *,
              hard=True, force_keep=False):
    """Return (node_probs, node_actions, h1)."""
    h1 = gin_layer(features, structure, gin.theta1, gin.eps1)
    h2 = gin_layer(h1, structure, gin.theta2, gin.eps2)
    probs, actions = _sample_view(h2, tau, hard, generator, force_keep)
    return probs, actions, h1


def edge_view(h1, edge_index, edge_params: EdgeViewParams, tau=1.0, generator=None, *,
              hard=True, force_keep=False):
    """Return (edge_probs, edge_actions), one row per stored edge (v, u)."""
    edge_index = torch.as_tensor(edge_index, dtype=torch.long).reshape(-1, 2)
    if edge_index.numel() and int(edge_index.max()) >= h1.shape[-2]:
        raise ValueError("edge index refers to a node without an embedding row")
    h_e = torch.cat([h1[..., edge_index[:, 0], :], h1[..., edge_index[:, 1], :]], dim=-1)
    if h_e.shape[-1] != edge_params.theta3[0][0].shape[-2]:
        raise ValueError("edge representation width does not match the edge MLP")
    logits = batched_mlp(h_e, edge_params.theta3)
    return _sample_view(logits, tau, hard, generator, force_keep)


def apply_views(structure: torch.Tensor, features: torch.Tensor, view: AugmentationView):
    """Edge view first, then node view.

    Returns ``(edge_weights, features')`` where edge_weights is (B, n, n) with the
    kept edges of ``structure``; dropped nodes lose all incident edges and get a
    zero row, masked nodes get the per-graph mean row.
    """
    n = structure.shape[-1]
    if features.shape[-2] != n or view.node_actions.shape[-2] != n:
        raise ValueError("view was sampled for a graph of a different size")
    if view.edge_actions.shape[-2] != view.edge_index.shape[0]:
        raise ValueError("edge view does not match the graph's edge list")
    lead = features.shape[:-2]
    weights = structure.to(features.dtype).expand(*lead, n, n).clone()
    if view.edge_index.shape[0]:
        src, dst = view.edge_index[:, 0], view.edge_index[:, 1]
        weights = _scatter_edges(weights, src, dst, view.edge_actions[..., KEEP])
    alive = 1.0 - view.node_actions[..., DROP]
    weights = weights * alive.unsqueeze(-1) * alive.unsqueeze(-2)
    mean = features.mean(dim=-2, keepdim=True)
    keep = view.node_actions[..., KEEP].unsqueeze(-1)
    mask = view.node_actions[..., MASK].unsqueeze(-1)
    return weights, keep * features + mask * mean


def _scatter_edges(weights, src, dst, keep):
    flat = weights.reshape(*weights.shape[:-2], -1)
    n = weights.shape[-1]
    idx = src * n + dst
    flat = flat.index_copy(-1, idx, keep.to(weights.dtype) * flat[..., idx])
    return flat.reshape(weights.shape)


def kl_loss(kl_inputs) -> torch.Tensor:
    """Closed-form KL(N(mu, diag var) || N(0, I)), averaged over samples, summed over groups."""
    total = None
    for mu, var in kl_inputs:
        if torch.any(var <= 0):
            raise ValueError("KL needs strictly positive variances")
        term = 0.5 * (var + mu.square() - 1.0 - torch.log(var)).sum(dim=-1)
        term = term.mean() if term.dim() else term
        total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return total


class MetaViewGenerator(nn.Module):
    """Meta view generator for one graph (spatial or temporal).

    Per-sample GIN/MLP parameters are emitted by hypernetworks from latent
    Gaussians: z ~ prior latent, z_phi ~ N(Phi(signal)), Theta = Psi(z + z_phi).
    With ``meta_node`` / ``meta_edge`` off, the respective Theta groups are plain
    learnable parameters shared by all samples.
    """

    def __init__(self, unit_features: int, signal_size: int, *, d1=8, hidden=16, d_z=16,
                 phi_hidden=64, psi_hidden=32, eps1=0.0, eps2=0.0, meta_node=True,
                 meta_edge=True, share_edge_latent=True):
        super().__init__()
        self.layouts = {
            "theta1": MLPLayout([unit_features, hidden, d1]),
            "theta2": MLPLayout([d1, hidden, len(NODE_ACTIONS)]),
            "theta3": MLPLayout([2 * d1, hidden, len(EDGE_ACTIONS)]),
        }
        self.eps1, self.eps2 = eps1, eps2
        self.d_z = d_z
        self.signal_size = signal_size
        meta = {"theta1": meta_node, "theta2": meta_node, "theta3": meta_edge}
        # latent group each meta-generated Theta reads from
        groups = []
        self.group_of = {}
        for name in ("theta1", "theta2"):
            if meta[name]:
                groups.append(name)
                self.group_of[name] = name
        if meta["theta3"]:
            if share_edge_latent and meta["theta2"]:
                self.group_of["theta3"] = "theta2"
            else:
                groups.append("theta3")
                self.group_of["theta3"] = "theta3"
        self.groups = groups

        self.psi = nn.ModuleDict()
        self.direct = nn.ParameterDict()
        for name, layout in self.layouts.items():
            if name in self.group_of:
                last = nn.Linear(psi_hidden, layout.count)
                with torch.no_grad():
                    last.weight.mul_(1.0 / math.sqrt(max(layout.sizes[0], 1)))
                    last.bias.copy_(layout.init_flat())
                self.psi[name] = nn.Sequential(nn.Linear(d_z, psi_hidden), nn.ReLU(), last)
            else:
                self.direct[name] = nn.Parameter(layout.init_flat())
        if groups:
            self.prior_mu = nn.Parameter(torch.zeros(len(groups), d_z))
            self.prior_log_var = nn.Parameter(torch.full((len(groups), d_z), math.log(0.5)))
            self.phi = nn.Sequential(nn.Linear(signal_size, phi_hidden), nn.ReLU(),
                                     nn.Linear(phi_hidden, 2 * len(groups) * d_z))

    def generate_params(self, signal: torch.Tensor, generator=None, deterministic=False):
        """signal: (B, S) flattened graph signal. Returns (GINParams, EdgeViewParams, kl_inputs)."""
        if signal.shape[-1] != self.signal_size:
            raise ValueError(f"signal has {signal.shape[-1]} features, expected {self.signal_size}")
        B = signal.shape[0]
        latents, kl_inputs = {}, []
        if self.groups:
            stats = self.phi(signal).reshape(B, len(self.groups), 2, self.d_z)
            mu_phi, lv_phi = stats[:, :, 0], stats[:, :, 1]
            mu_p, lv_p = self.prior_mu.unsqueeze(0), self.prior_log_var.unsqueeze(0)
            if deterministic:
                z = mu_p + mu_phi
            else:
                eta = torch.randn(2, B, len(self.groups), self.d_z, generator=generator,
                                  dtype=signal.dtype)
                z = (mu_p + torch.exp(0.5 * lv_p) * eta[0]) + (mu_phi + torch.exp(0.5 * lv_phi) * eta[1])
            for g, name in enumerate(self.groups):
                latents[name] = z[:, g]
                kl_inputs.append((mu_p[:, g] + mu_phi[:, g],
                                  torch.exp(lv_p[:, g]) + torch.exp(lv_phi[:, g])))
        flat = {}
        for name in self.layouts:
            if name in self.group_of:
                flat[name] = self.psi[name](latents[self.group_of[name]])
            else:
                flat[name] = self.direct[name]
        gin = GINParams(self.layouts["theta1"].unflatten(flat["theta1"]),
                        self.layouts["theta2"].unflatten(flat["theta2"]), self.eps1, self.eps2)
        return gin, EdgeViewParams(self.layouts["theta3"].unflatten(flat["theta3"])), kl_inputs

    def forward(self, features, signal, structure, edge_index, *, tau=1.0, hard=True,
                generator=None, force_keep=False, deterministic=False):
        """features: (B, n, f) per-unit signals. Returns (view, weights, features', kl_inputs)."""
        gin, edge_params, kl_inputs = self.generate_params(signal, generator, deterministic)
        node_probs, node_actions, h1 = node_view(structure, features, gin, tau, generator,
                                                 hard=hard, force_keep=force_keep)
        edge_probs, edge_actions = edge_view(h1, edge_index, edge_params, tau, generator,
                                             hard=hard, force_keep=force_keep)
        view = AugmentationView(node_probs, node_actions, edge_probs, edge_actions,
                                torch.as_tensor(edge_index, dtype=torch.long).reshape(-1, 2))
        weights, feats = apply_views(structure, features, view)
        return view, weights, feats, kl_inputs
