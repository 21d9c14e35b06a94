"""Per-program verifier: encoders, fusion, logistic head, Adam training, checkpoints."""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .attention import GATES, AttentionParams, attention_weights, concat_embedding, joint_embedding
from .channels import DEFAULT_CHANNELS, MetaPath, MultiChannelGraph, parse_channels
from .encoder import EncoderConfig, encode, glorot_uniform, init_channel_weights
from .errors import (
    ConfigError,
    EmptyDataset,
    LabelOutOfRange,
    NonFinite,
    SchemaVersionMismatch,
    ShapeMismatch,
    SingleClassWarning,
)
from .features import FeatureConfig
from .tensor import Tape, Tensor, add_row, backward, binary_cross_entropy, matmul, sigmoid

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FUSIONS = ("attention", "concat")


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[MetaPath, ...] = DEFAULT_CHANNELS
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: str = "attention"
    att_dim: Optional[int] = None
    gate: str = "leaky_relu"

    def __post_init__(self):
        object.__setattr__(self, "channels", parse_channels([str(getattr(c, "value", c)) for c in self.channels]))
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.att_dim is not None and self.att_dim < 1:
            raise ConfigError("att_dim must be >= 1")
        if self.gate not in GATES:
            raise ConfigError(f"gate must be one of {GATES}, got {self.gate!r}")

    @property
    def joint_dim(self) -> int:
        h = self.encoder.hidden_dim
        return h * len(self.channels) if self.fusion == "concat" else h

    def to_dict(self) -> dict:
        return {
            "channels": [c.value for c in self.channels],
            "d_con": self.features.d_con,
            "feature_set": self.features.feature_set,
            "n_layers": self.encoder.n_layers,
            "hidden_dim": self.encoder.hidden_dim,
            "propagation": self.encoder.propagation,
            "fusion": self.fusion,
            "att_dim": self.att_dim,
            "gate": self.gate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            channels=tuple(d["channels"]),
            features=FeatureConfig.from_feature_set(d["feature_set"], d["d_con"]),
            encoder=EncoderConfig(d["n_layers"], d["hidden_dim"], d["propagation"]),
            fusion=d["fusion"],
            att_dim=d.get("att_dim"),
            gate=d.get("gate", "leaky_relu"),
        )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    seed: int = 0
    patience: int = 20
    batch_size: Optional[int] = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class ModelParams:
    enc: dict[MetaPath, list[Tensor]]
    att: AttentionParams
    w: Tensor  # (joint_dim, 1)
    b: Tensor  # (1, 1)

    def tensors(self) -> list[Tensor]:
        """Fixed ordering used by the optimiser and the gradient checks."""
        out = [W for ws in self.enc.values() for W in ws]
        return out + self.att.tensors() + [self.w, self.b]

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        enc = {p: init_channel_weights(rng, cfg.features.width, cfg.encoder) for p in cfg.channels}
        att = AttentionParams.init(rng, cfg.encoder.hidden_dim, cfg.att_dim)
        w = Tensor(glorot_uniform(rng, cfg.joint_dim, 1), requires_grad=True, name="w")
        b = Tensor(np.zeros((1, 1)), requires_grad=True, name="b")
        return cls(enc, att, w, b)

    def check(self, cfg: ModelConfig) -> None:
        width, hidden = cfg.features.width, cfg.encoder.hidden_dim
        att = cfg.att_dim or hidden
        expected = {}
        for p in cfg.channels:
            if p not in self.enc:
                raise ShapeMismatch(f"missing encoder weights for channel {p.value}")
            dims = [width] + [hidden] * cfg.encoder.n_layers
            if len(self.enc[p]) != cfg.encoder.n_layers:
                raise ShapeMismatch(f"channel {p.value}: {len(self.enc[p])} layers")
            for l, W in enumerate(self.enc[p]):
                expected[f"{p.value}.W{l}"] = (W.shape, (dims[l], dims[l + 1]))
        expected["Wa"] = (self.att.Wa.shape, (hidden, att))
        expected["a"] = (self.att.a.shape, (2 * att, 1))
        expected["w"] = (self.w.shape, (cfg.joint_dim, 1))
        expected["b"] = (self.b.shape, (1, 1))
        for name, (got, want) in expected.items():
            if tuple(got) != want:
                raise ShapeMismatch(f"parameter {name} has shape {tuple(got)}, expected {want}")


# ----------------------------------------------------------------- batching


@dataclass
class PackedBatch:
    """Examples stacked for one forward pass.

    Per channel, ``props`` is block-diagonal over the examples, ``feats``
    stacks their feature rows and ``targets`` gives each example's target row.
    """

    props: dict[MetaPath, sparse.csr_matrix]
    feats: dict[MetaPath, np.ndarray]
    targets: dict[MetaPath, np.ndarray]
    labels: Optional[np.ndarray]

    @property
    def size(self) -> int:
        return len(next(iter(self.targets.values())))


def pack(examples: Sequence[MultiChannelGraph], paths: Sequence[MetaPath]) -> PackedBatch:
    props, feats, targets = {}, {}, {}
    for p in paths:
        blocks, rows, tgt = [], [], []
        offset = 0
        for ex in examples:
            if ex.features is None:
                raise ShapeMismatch("example features have not been assembled")
            if p not in ex.channels:
                raise ShapeMismatch(f"example lacks channel {p.value}")
            ch = ex.channels[p]
            X = ex.features[p]
            if X.shape[0] != ch.n_nodes:
                raise ShapeMismatch(f"channel {p.value}: {X.shape[0]} feature rows for {ch.n_nodes} nodes")
            blocks.append(ch.prop)
            rows.append(X)
            tgt.append(offset + ch.target_index)
            offset += ch.n_nodes
        widths = {r.shape[1] for r in rows}
        if len(widths) > 1:
            raise ShapeMismatch(f"inconsistent feature widths {sorted(widths)}")
        props[p] = sparse.block_diag(blocks, format="csr")
        feats[p] = np.concatenate(rows, axis=0)
        targets[p] = np.asarray(tgt, dtype=np.intp)
    labels = None
    if all(ex.label is not None for ex in examples):
        labels = to_binary([ex.label for ex in examples])
    return PackedBatch(props, feats, targets, labels)


def to_binary(labels) -> np.ndarray:
    """Map +1/-1 labels to 1/0."""
    arr = np.asarray(labels)
    if not np.isin(arr, (1, -1)).all():
        raise LabelOutOfRange(f"labels must be +1 or -1, got {sorted(set(arr.tolist()))}")
    return (arr == 1).astype(np.float64)


# ------------------------------------------------------------------ forward


@dataclass
class Forward:
    yhat: Tensor  # (B, 1)
    joint: Tensor  # (B, joint_dim)
    alpha: Optional[Tensor]  # (B, |C|) under attention fusion


def forward(params: ModelParams, batch: PackedBatch, cfg: ModelConfig) -> Forward:
    embeddings = [
        encode(batch.props[p], batch.feats[p], batch.targets[p], params.enc[p], cfg.encoder)
        for p in cfg.channels
    ]
    if cfg.fusion == "concat":
        alpha = None
        joint = concat_embedding(embeddings)
    else:
        alpha = attention_weights(embeddings, params.att, cfg.gate)
        joint = joint_embedding(embeddings, alpha)
    logit = add_row(matmul(joint, params.w), params.b)
    return Forward(sigmoid(logit), joint, alpha)


def predict_batch(examples: Sequence[MultiChannelGraph], params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    return forward(params, pack(examples, cfg.channels), cfg).yhat.data[:, 0].copy()


def predict(example: MultiChannelGraph, params: ModelParams, cfg: ModelConfig) -> float:
    """Probability that ``example`` is its claimed program; >= 0.5 means +1."""
    return float(predict_batch([example], params, cfg)[0])


def decide(score: float) -> int:
    return 1 if score >= 0.5 else -1


def bce_loss(yhat, y) -> Tensor:
    """Binary cross-entropy of 0/1 targets (mapped from +1/-1 beforehand)."""
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise LabelOutOfRange("bce targets must be 0 or 1")
    return binary_cross_entropy(yhat, y)


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, t: int, cfg: TrainConfig
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and the new state."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    new_params, new_m, new_v = [], [], []
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for theta, g, m, v in zip(params, grads, state.m, state.v):
        if theta.shape != g.shape:
            raise ShapeMismatch(f"gradient {g.shape} for parameter {theta.shape}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        theta = theta - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if not np.isfinite(theta).all():
            raise NonFinite(f"Adam step {t} produced a non-finite parameter")
        new_params.append(theta)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v)


# ----------------------------------------------------------------- training


@dataclass
class TrainedModel:
    params: ModelParams
    config: ModelConfig
    train_config: TrainConfig
    history: list[dict]
    claimed_id: str

    def predict(self, example: MultiChannelGraph) -> float:
        return predict(example, self.params, self.config)

    def predict_batch(self, examples: Sequence[MultiChannelGraph]) -> np.ndarray:
        return predict_batch(examples, self.params, self.config)


def _accuracy(yhat: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((yhat >= 0.5) == (y == 1.0)))


def train(
    dataset: Sequence[MultiChannelGraph],
    cfg: ModelConfig,
    tcfg: TrainConfig = TrainConfig(),
    claimed_id: Optional[str] = None,
) -> TrainedModel:
    """Fit one verifier with Adam.

    Full-batch by default. Stops early once training accuracy has been 1.0
    for ``patience`` consecutive epochs.
    """
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    labels = to_binary([ex.label for ex in dataset])
    if len(set(labels.tolist())) < 2:
        warnings.warn("training set holds a single class", SingleClassWarning, stacklevel=2)
    claimed_id = claimed_id or dataset[0].claimed_id

    params = ModelParams.init(cfg, tcfg.seed)
    tensors = params.tensors()
    state = AdamState.zeros_like([t.data for t in tensors])

    if tcfg.batch_size is None or tcfg.batch_size >= len(dataset):
        batches = [pack(dataset, cfg.channels)]
        order_rng = None
    else:
        order_rng = np.random.default_rng(tcfg.seed)

    history = []
    streak = 0
    step = 0
    for epoch in range(tcfg.epochs):
        if order_rng is not None:
            perm = order_rng.permutation(len(dataset))
            chunks = [perm[i : i + tcfg.batch_size] for i in range(0, len(dataset), tcfg.batch_size)]
            batches = [pack([dataset[i] for i in c], cfg.channels) for c in chunks]
        total_loss, correct = 0.0, 0.0
        for batch in batches:
            with Tape() as tape:
                out = forward(params, batch, cfg)
                loss = bce_loss(out.yhat, batch.labels)
            grads = backward(tape, loss, tensors)
            step += 1
            try:
                new, state = adam_step([t.data for t in tensors], grads, state, step, tcfg)
            except NonFinite as exc:
                raise NonFinite(f"epoch {epoch}: {exc}") from None
            for t, arr in zip(tensors, new):
                t.data = arr
            total_loss += loss.item() * batch.size
            correct += _accuracy(out.yhat.data[:, 0], batch.labels) * batch.size
        acc = correct / len(dataset)
        history.append({"epoch": epoch, "loss": total_loss / len(dataset), "acc": acc})
        streak = streak + 1 if acc == 1.0 else 0
        if streak >= tcfg.patience:
            break
    return TrainedModel(params, cfg, tcfg, history, claimed_id)


# -------------------------------------------------------------- persistence


def _rows(t: Tensor) -> list:
    return t.data.tolist()


def _to_tensor(obj, name: str, shape=None) -> Tensor:
    arr = np.asarray(obj, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return Tensor(arr, requires_grad=True, name=name)


def model_to_dict(m: TrainedModel) -> dict:
    p = m.params
    return {
        "schema": SCHEMA_VERSION,
        "claimed_id": m.claimed_id,
        "config": {**m.config.to_dict(), "train": asdict(m.train_config)},
        "channels": [c.value for c in m.config.channels],
        "params": {
            "enc": {c.value: {f"W{l}": _rows(W) for l, W in enumerate(p.enc[c])} for c in m.config.channels},
            "att": {"Wa": _rows(p.att.Wa), "a": p.att.a.data[:, 0].tolist()},
            "clf": {"w": p.w.data[:, 0].tolist(), "b": float(p.b.data[0, 0])},
        },
        "history": m.history,
    }


def model_from_dict(obj: dict) -> TrainedModel:
    if obj.get("schema") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"checkpoint schema {obj.get('schema')!r}, reader expects {SCHEMA_VERSION}")
    conf = dict(obj["config"])
    tconf = conf.pop("train", {})
    cfg = ModelConfig.from_dict(conf)
    if [c.value for c in cfg.channels] != list(obj["channels"]):
        raise ShapeMismatch("checkpoint channel list disagrees with its config")
    raw = obj["params"]
    try:
        enc = {
            c: [_to_tensor(raw["enc"][c.value][f"W{l}"], f"W{l}") for l in range(cfg.encoder.n_layers)]
            for c in cfg.channels
        }
        att = AttentionParams(
            Wa=_to_tensor(raw["att"]["Wa"], "Wa"),
            a=_to_tensor(np.asarray(raw["att"]["a"], dtype=np.float64).reshape(-1, 1), "a"),
        )
        w = _to_tensor(np.asarray(raw["clf"]["w"], dtype=np.float64).reshape(-1, 1), "w")
        b = _to_tensor(raw["clf"]["b"], "b", (1, 1))
    except (KeyError, ValueError) as exc:
        raise ShapeMismatch(f"malformed checkpoint parameters: {exc}") from None
    params = ModelParams(enc, att, w, b)
    params.check(cfg)
    return TrainedModel(params, cfg, TrainConfig(**tconf), list(obj.get("history", [])), obj["claimed_id"])


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def save_model(m: TrainedModel, path: str | os.PathLike) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(m), indent=1) + "\n")


def load_model(path: str | os.PathLike) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
