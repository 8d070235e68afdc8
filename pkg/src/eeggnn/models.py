"""Graph classifiers (DGCNN, RGNN, SparseDGCNN, HetEmotionNet) and their training step.

All four share one module, :class:`GraphClassifier`; ``ModelConfig.kind``
selects the adjacency treatment and, for ``het_emotion_net``, the recurrent
two-stream body. Gradients come from torch autograd.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataio import Dataset
from .errors import ConfigError, DivergenceError, ValidationError
from .graph import normalize_adjacency_torch

KINDS = ("dgcnn", "rgnn", "sparse_dgcnn", "het_emotion_net")
STREAMS = ("spectral_only", "dual")
OPTIMIZERS = ("adam", "sgd")
ACTIVATIONS = {"relu": torch.relu, "identity": lambda x: x}


@dataclass
class ModelConfig:
    kind: str
    n_classes: int
    n_nodes: int
    n_features: int
    hidden_dim: int = 20
    n_layers: int = 2
    dropout: float = 0.5
    activation: str = "relu"
    # rgnn
    node_dat: bool = False
    node_dat_beta: float = 1.0
    emotion_dl_eps: float = 0.0
    neighbor_map: Optional[Dict[int, List[int]]] = None
    # sparse_dgcnn
    adj_l1: float = 0.0
    # het_emotion_net
    streams: str = "spectral_only"
    n_timesteps: Optional[int] = None
    # initial raw adjacency; all-ones when absent
    adjacency_init: Optional[List[List[float]]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name in ("n_classes", "n_nodes", "n_features", "hidden_dim", "n_layers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0 <= self.emotion_dl_eps < 1:
            raise ConfigError(f"emotion_dl_eps must lie in [0, 1), got {self.emotion_dl_eps}")
        if self.node_dat_beta < 0 or self.adj_l1 < 0:
            raise ConfigError("node_dat_beta and adj_l1 must be nonnegative")
        if self.node_dat and self.kind == "het_emotion_net":
            raise ConfigError("node_dat is not available for het_emotion_net")
        if self.streams not in STREAMS:
            raise ConfigError(f"unknown streams mode {self.streams!r}")
        if self.kind == "het_emotion_net" and self.streams == "dual" and not self.n_timesteps:
            raise ConfigError("dual-stream het_emotion_net needs n_timesteps")
        if self.neighbor_map is not None:
            self.neighbor_map = {int(k): [int(v) for v in vs] for k, vs in self.neighbor_map.items()}
        if self.adjacency_init is not None:
            a = np.asarray(self.adjacency_init, dtype=np.float64)
            if a.shape != (self.n_nodes, self.n_nodes):
                raise ConfigError(f"adjacency_init shape {a.shape} != ({self.n_nodes}, {self.n_nodes})")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["neighbor_map"] is not None:
            d["neighbor_map"] = {str(k): v for k, v in d["neighbor_map"].items()}
        if d["adjacency_init"] is not None:
            d["adjacency_init"] = np.asarray(d["adjacency_init"], dtype=float).tolist()
        return d


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l1_coef: float = 0.0
    l2_coef: float = 0.0
    batch_size: int = 256
    max_epochs: int = 100
    optimizer: str = "adam"
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self):
        for name in ("learning_rate", "l1_coef", "l2_coef"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


# ----------------------------------------------------------------------------
# primitives


def gcn_layer_forward(H, A_hat, W, activation: Union[str, Callable] = "relu"):
    """One graph-convolution layer: ``activation(A_hat @ H @ W)``.

    ``H`` may carry leading batch dimensions.
    """
    act = ACTIVATIONS[activation] if isinstance(activation, str) else activation
    n = A_hat.shape[-1]
    if A_hat.shape[-2] != n or H.shape[-2] != n:
        raise ValidationError(f"A_hat {tuple(A_hat.shape)} does not conform with H {tuple(H.shape)}")
    if H.shape[-1] != W.shape[0]:
        raise ValidationError(f"H feature dim {H.shape[-1]} != W input dim {W.shape[0]}")
    return act(A_hat @ H @ W)


def prox_l1(A, lam: float):
    """Soft-threshold off-diagonal entries by ``lam``; the diagonal is kept."""
    if lam < 0:
        raise ValidationError(f"lam must be nonnegative, got {lam}")
    if isinstance(A, torch.Tensor):
        out = torch.sign(A) * torch.clamp(A.abs() - lam, min=0)
        diag = torch.eye(A.shape[-1], dtype=torch.bool, device=A.device)
        return torch.where(diag, A, out)
    A = np.asarray(A, dtype=np.float64)
    out = np.sign(A) * np.maximum(np.abs(A) - lam, 0.0)
    if A.ndim == 2:
        np.fill_diagonal(out, np.diagonal(A))
    return out


def weight_penalty(weights: Sequence[torch.Tensor], l1_coef: float, l2_coef: float) -> torch.Tensor:
    total = torch.zeros((), dtype=weights[0].dtype if weights else torch.float32)
    for w in weights:
        if l1_coef:
            total = total + l1_coef * w.abs().sum()
        if l2_coef:
            total = total + l2_coef * (w * w).sum()
    return total


def emotion_dl_targets(labels, eps: float, neighbor_map: Optional[Mapping[int, Sequence[int]]], n_classes: int,
                       dtype=torch.float64) -> torch.Tensor:
    """Label distributions: ``1-eps`` on the true class, ``eps`` spread over its neighbours.

    Without a ``neighbor_map`` every other class is a neighbour.
    """
    if not 0 <= eps < 1:
        raise ConfigError(f"eps must lie in [0, 1), got {eps}")
    labels = _as_labels(labels)
    table = torch.zeros((n_classes, n_classes), dtype=dtype)
    for c in torch.unique(labels).tolist():
        if not 0 <= c < n_classes:
            raise ValidationError(f"label {c} outside [0, {n_classes})")
        table[c, c] = 1.0 - eps
        if eps == 0:
            continue
        nbrs = neighbor_map.get(c, []) if neighbor_map is not None else range(n_classes)
        nbrs = sorted({int(k) for k in nbrs if k != c})
        if not nbrs:
            raise ConfigError(f"class {c} has no neighbours but eps={eps} > 0")
        table[c, nbrs] += eps / len(nbrs)
    return table[labels]


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, beta):
        ctx.beta = beta
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.beta * grad, None


def grad_reverse(x: torch.Tensor, beta: float) -> torch.Tensor:
    """Identity forward; multiplies the incoming gradient by ``-beta``."""
    return _GradReverse.apply(x, float(beta))


# ----------------------------------------------------------------------------
# model


def _as_labels(labels) -> torch.Tensor:
    if isinstance(labels, torch.Tensor):
        return labels.to(torch.long).reshape(-1)
    return torch.tensor(np.array(labels), dtype=torch.long).reshape(-1)


def _as_tensor(x, dtype) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.tensor(np.array(x), dtype=dtype)


def _uniform(gen: torch.Generator, shape, fan_in: int, dtype) -> nn.Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    return nn.Parameter((torch.rand(shape, generator=gen, dtype=dtype) * 2 - 1) * bound)


class _Stream(nn.Module):
    """One HetEmotionNet stream: meta-graph mixture, graph aggregation, GRU over the sequence axis."""

    N_META = 3

    def __init__(self, n_nodes, hidden, n_layers, gen, dtype):
        super().__init__()
        self.mix_logits = nn.Parameter(torch.zeros(self.N_META, dtype=dtype))
        self.gru = nn.GRU(1, hidden, batch_first=True, dtype=dtype)
        with torch.no_grad():
            for p in self.gru.parameters():
                p.copy_((torch.rand(p.shape, generator=gen, dtype=dtype) * 2 - 1) / math.sqrt(hidden))
        self.layers = nn.ParameterList(
            [_uniform(gen, (hidden, hidden), hidden, dtype) for _ in range(n_layers - 1)]
        )

    def forward(self, X, candidates, dropout):
        w = torch.softmax(self.mix_logits, dim=0)
        A = (w[:, None, None] * candidates).sum(0)
        A_hat = normalize_adjacency_torch(A)
        B, n, L = X.shape
        Z = (A_hat @ X).reshape(B * n, L, 1)
        _, h = self.gru(Z)
        H = h[-1].reshape(B, n, -1)
        for W in self.layers:
            H = gcn_layer_forward(dropout(H), A_hat, W, "relu")
        return H


class GraphClassifier(nn.Module):
    """Trainable-adjacency graph classifier.

    ``dgcnn``/``sparse_dgcnn`` read the adjacency through
    ``relu(P) + I`` so the effective self-loops never go negative; ``rgnn``
    uses the signed raw matrix as is. The GCN body is followed by a 1x1
    convolution over hidden channels, relu, flatten and a linear head.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.seed = int(seed)
        self.dtype = dtype
        self.generator = torch.Generator().manual_seed(self.seed)
        self.shuffle_rng = np.random.default_rng(self.seed)
        self._optim = None
        self._optim_key = None
        g, c = self.generator, config
        n, h = c.n_nodes, c.hidden_dim

        init = np.ones((n, n)) if c.adjacency_init is None else np.asarray(c.adjacency_init, dtype=np.float64)
        self.adjacency_param = nn.Parameter(torch.tensor(init, dtype=dtype))
        self.register_buffer("adjacency_fixed", torch.tensor(np.abs(init), dtype=dtype))

        if c.kind == "het_emotion_net":
            self.streams = nn.ModuleList([_Stream(n, h, c.n_layers, g, dtype)])
            if c.streams == "dual":
                self.streams.append(_Stream(n, h, c.n_layers, g, dtype))
            head_in = len(self.streams) * n * h
        else:
            dims = [c.n_features] + [h] * c.n_layers
            self.layer_weights = nn.ParameterList(
                [_uniform(g, (dims[i], dims[i + 1]), dims[i], dtype) for i in range(c.n_layers)]
            )
            self.conv_weight = _uniform(g, (h, h), h, dtype)
            self.conv_bias = _uniform(g, (h,), h, dtype)
            head_in = n * h
        self.head_weight = _uniform(g, (head_in, c.n_classes), head_in, dtype)
        self.head_bias = _uniform(g, (c.n_classes,), head_in, dtype)
        if c.node_dat:
            self.disc_weight = _uniform(g, (h, 1), h, dtype)
            self.disc_bias = nn.Parameter(torch.zeros(1, dtype=dtype))

    # -- adjacency ---------------------------------------------------------

    def effective_adjacency(self) -> torch.Tensor:
        P = self.adjacency_param
        if self.config.kind == "rgnn":
            return P
        return torch.relu(P) + torch.eye(P.shape[0], dtype=P.dtype)

    # -- forward -----------------------------------------------------------

    def _dropout(self, x):
        p = self.config.dropout
        if not self.training or p == 0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= p
        return x * keep / (1 - p)

    def _check_input(self, X):
        c = self.config
        if X.ndim != 3 or X.shape[1:] != (c.n_nodes, c.n_features):
            raise ValidationError(
                f"input shape {tuple(X.shape)} does not match [batch, {c.n_nodes}, {c.n_features}]"
            )

    def embed(self, X: torch.Tensor) -> torch.Tensor:
        """Node embeddings after the GCN stack, ``[batch, n_nodes, hidden]``."""
        self._check_input(X)
        A_hat = normalize_adjacency_torch(self.effective_adjacency())
        H = X
        for i, W in enumerate(self.layer_weights):
            if i:
                H = self._dropout(H)
            H = gcn_layer_forward(H, A_hat, W, self.config.activation)
        return H

    def forward(self, X, X_time=None, return_embeddings: bool = False):
        X = _as_tensor(X, self.dtype)
        c = self.config
        if c.kind == "het_emotion_net":
            self._check_input(X)
            A = self.effective_adjacency()
            eye = torch.eye(c.n_nodes, dtype=A.dtype)
            candidates = torch.stack([A, eye, self.adjacency_fixed])
            parts = [self.streams[0](X, candidates, self._dropout)]
            if c.streams == "dual":
                if X_time is None:
                    raise ValidationError("dual-stream model needs X_time")
                X_time = _as_tensor(X_time, self.dtype)
                if X_time.shape[:2] != X.shape[:2]:
                    raise ValidationError("X_time must be [batch, n_nodes, n_timesteps]")
                parts.append(self.streams[1](X_time, candidates, self._dropout))
            H = torch.cat(parts, dim=-1)
            emb = parts[0]
        else:
            emb = self.embed(X)
            H = torch.relu(emb @ self.conv_weight + self.conv_bias)
        logits = H.flatten(1) @ self.head_weight + self.head_bias
        if return_embeddings:
            return logits, emb
        return logits

    # -- bookkeeping -------------------------------------------------------

    def penalized_weights(self) -> List[torch.Tensor]:
        """Weight matrices subject to the L1/L2 penalty (biases and adjacency excluded)."""
        if self.config.kind == "het_emotion_net":
            ws = [w for s in self.streams for w in s.layers]
        else:
            ws = list(self.layer_weights) + [self.conv_weight]
        return ws + [self.head_weight]

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise DivergenceError(f"parameter {name} became non-finite")

    def optimizer_for(self, cfg: TrainConfig) -> torch.optim.Optimizer:
        key = (cfg.optimizer, cfg.learning_rate)
        if self._optim is None or self._optim_key != key:
            params = list(self.parameters())
            if cfg.optimizer == "adam":
                self._optim = torch.optim.Adam(params, lr=cfg.learning_rate)
            else:
                self._optim = torch.optim.SGD(params, lr=cfg.learning_rate)
            self._optim_key = key
        return self._optim


@dataclass
class ModelFactory:
    """Builds fresh models; a grid point may override ``hidden_dim``."""

    config: ModelConfig
    dtype: torch.dtype = torch.float32

    def __call__(self, seed: int, point: Optional[Mapping] = None) -> GraphClassifier:
        cfg = self.config
        if point and "hidden_dim" in point:
            cfg = replace(cfg, hidden_dim=int(point["hidden_dim"]))
        return GraphClassifier(cfg, seed=seed, dtype=self.dtype)


# ----------------------------------------------------------------------------
# loss and training


def node_dat_term(model: GraphClassifier, source_embed, target_embed, beta: float) -> torch.Tensor:
    """Domain-discriminator loss on node embeddings with gradient reversal.

    A linear discriminator shared across nodes separates source (label 0)
    from target (label 1) node embeddings. Its own parameters receive the
    ordinary gradient; the embeddings receive it reversed and scaled by
    ``beta``.
    """
    if not model.config.node_dat:
        raise ConfigError("node_dat_term called on a model built without node_dat")
    if beta < 0:
        raise ConfigError(f"beta must be nonnegative, got {beta}")
    z = torch.cat([grad_reverse(source_embed, beta), grad_reverse(target_embed, beta)], dim=0)
    logits = (z @ model.disc_weight + model.disc_bias).squeeze(-1)
    domain = torch.zeros_like(logits)
    domain[source_embed.shape[0]:] = 1.0
    return F.binary_cross_entropy_with_logits(logits, domain)


def loss(model: GraphClassifier, logits: torch.Tensor, labels, train_cfg: TrainConfig,
         extras: Optional[Mapping] = None) -> torch.Tensor:
    """Classification loss plus L1/L2 weight penalty plus optional NodeDAT term.

    With ``emotion_dl_eps > 0`` the classification part is KL divergence to
    the smoothed label distribution instead of plain cross-entropy.
    """
    c = model.config
    labels = _as_labels(labels)
    if labels.numel() != logits.shape[0]:
        raise ValidationError(f"{labels.numel()} labels for {logits.shape[0]} logit rows")
    if labels.numel() and (labels.min() < 0 or labels.max() >= c.n_classes):
        raise ValidationError(f"labels outside [0, {c.n_classes})")
    if c.emotion_dl_eps > 0:
        target = emotion_dl_targets(labels, c.emotion_dl_eps, c.neighbor_map, c.n_classes, dtype=logits.dtype)
        logp = F.log_softmax(logits, dim=1)
        total = F.kl_div(logp, target, reduction="batchmean")
    else:
        total = F.cross_entropy(logits, labels)
    total = total + weight_penalty(model.penalized_weights(), train_cfg.l1_coef, train_cfg.l2_coef)
    if extras and extras.get("node_dat") is not None:
        total = total + extras["node_dat"]
    return total


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_epoch(model: GraphClassifier, data: Dataset, cfg: TrainConfig, extras: Optional[Mapping] = None) -> dict:
    """One shuffled pass over ``data``; returns ``{"loss", "accuracy"}``.

    ``extras`` may hold ``target_features`` (unlabeled samples for NodeDAT)
    and ``time_series`` (aligned with ``data``, for dual-stream models).
    After each optimizer step ``sparse_dgcnn`` applies the L1 proximal step
    to the adjacency followed by projection onto nonnegative values.
    """
    extras = extras or {}
    c = model.config
    n = data.n_samples
    if n == 0:
        raise ValidationError("cannot train on an empty dataset")
    model.train()
    opt = model.optimizer_for(cfg)
    X_all = torch.tensor(np.array(data.features), dtype=model.dtype)
    y_all = torch.tensor(np.array(data.labels), dtype=torch.long)
    T_all = extras.get("time_series")
    target = extras.get("target_features") if c.node_dat else None
    if c.node_dat and target is None:
        raise ConfigError("node_dat enabled but no target_features supplied")
    if target is not None:
        target = _as_tensor(target, model.dtype)

    order = model.shuffle_rng.permutation(n)
    total_loss, correct = 0.0, 0
    for b, idx in enumerate(_batches(n, cfg.batch_size, order)):
        X, y = X_all[idx], y_all[idx]
        Xt = None if T_all is None else _as_tensor(np.asarray(T_all)[idx], model.dtype)
        opt.zero_grad(set_to_none=True)
        logits, emb = model(X, Xt, return_embeddings=True)
        step_extras = {}
        if target is not None:
            t_idx = model.shuffle_rng.integers(0, target.shape[0], size=len(idx))
            t_emb = model.embed(target[t_idx])
            step_extras["node_dat"] = node_dat_term(model, emb, t_emb, c.node_dat_beta)
        value = loss(model, logits, y, cfg, step_extras)
        if not torch.isfinite(value):
            raise DivergenceError(f"non-finite loss {value.item()} at batch {b}", batch_index=b)
        value.backward()
        opt.step()
        if c.kind == "sparse_dgcnn":
            with torch.no_grad():
                P = model.adjacency_param
                P.copy_(prox_l1(P, cfg.learning_rate * c.adj_l1).clamp_(min=0))
        try:
            model.check_finite()
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} after batch {b}", batch_index=b) from None
        total_loss += value.item() * len(idx)
        correct += int((logits.detach().argmax(1) == y).sum())
    return {"loss": total_loss / n, "accuracy": correct / n}


@torch.no_grad()
def predict(model: GraphClassifier, data: Dataset, time_series=None, batch_size: int = 1024) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, data.n_samples, batch_size):
        X = data.features[start:start + batch_size]
        Xt = None if time_series is None else np.asarray(time_series)[start:start + batch_size]
        logits = model(X, Xt)
        if not torch.isfinite(logits).all():
            raise DivergenceError("model produced non-finite logits")
        # np.argmax resolves ties to the lowest class index
        out.append(np.argmax(logits.numpy(), axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def evaluate(model: GraphClassifier, data: Dataset, time_series=None) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    if data.n_samples == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    pred = predict(model, data, time_series)
    return float(np.mean(pred == data.labels))


# ----------------------------------------------------------------------------
# checkpoints


def save_model(model: GraphClassifier, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dt = np.dtype("<f8") if model.dtype == torch.float64 else np.dtype("<f4")
    params = {}
    for name, p in model.state_dict().items():
        fname = name.replace(".", "__") + ".bin"
        (directory / fname).write_bytes(p.detach().numpy().astype(dt).tobytes())
        params[name] = {"file": fname, "shape": list(p.shape)}
    meta = {
        "kind": model.config.kind,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "dtype": dt.str,
        "params": params,
        "format_version": 1,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_model(directory) -> GraphClassifier:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    dt = np.dtype(meta["dtype"])
    cfg = ModelConfig(**meta["config"])
    model = GraphClassifier(cfg, seed=meta["seed"], dtype=torch.float64 if dt.itemsize == 8 else torch.float32)
    state = {}
    for name, info in meta["params"].items():
        arr = np.frombuffer((directory / info["file"]).read_bytes(), dtype=dt).reshape(info["shape"])
        state[name] = torch.tensor(arr.copy())
    model.load_state_dict(state)
    return model
