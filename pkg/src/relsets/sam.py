"""Set abstraction model: encoder, per-cardinality relation nets, heads,
loss, and momentum-SGD training on the minimal autodiff tape.

Every nonempty subset of the encoded inputs gets an order-invariant
representation (the relation net averaged over all orderings of the
subset); a shared classifier and a shared embedding head supervise each
subset, and a final net maps the summed subset representations to the
whole-set representation.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .sampler import SubsetTarget, TrainingExample, subset_masks

CHECKPOINT_MAGIC = b"RSETSAM\0"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class DivergenceError(Exception):
    """Training hit a non-finite loss; carries the last good parameters."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class SamConfig:
    feature_dim: int
    num_classes: int
    embed_dim: int
    hidden: int = 128
    max_set_size: int = 4
    subset_mode: str = "full"  # "full" | "pairs"
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.max_set_size <= 4:
            raise ValueError("max_set_size must be in [1, 4]")
        if self.subset_mode not in ("full", "pairs"):
            raise ValueError(f"unknown subset_mode {self.subset_mode!r}")
        if min(self.feature_dim, self.hidden, self.embed_dim, self.num_classes) < 1:
            raise ValueError("all widths must be positive")


@dataclass
class LabelVocab:
    ids: tuple[str, ...]

    def __post_init__(self):
        self.ids = tuple(sorted(self.ids))
        self._index = {node_id: i for i, node_id in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def index(self, node_id: str) -> int:
        return self._index[node_id]

    def target_distribution(self, nodes) -> np.ndarray:
        out = np.zeros(len(self.ids))
        for n in nodes:
            out[self._index[n]] = 1.0
        return out / out.sum()


@dataclass
class SamParams:
    config: SamConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "SamParams":
        return SamParams(
            config=copy.deepcopy(self.config),
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )


@dataclass
class SetAbstractionOutput:
    subset_reps: dict[int, np.ndarray]
    subset_logits: dict[int, np.ndarray]
    subset_embeddings: dict[int, np.ndarray]
    set_representation: np.ndarray
    set_logits: np.ndarray
    set_embedding: np.ndarray


def _layer_shapes(cfg: SamConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every parameter tensor."""
    h = cfg.hidden
    shapes: list[tuple[str, tuple[int, ...], int]] = [
        ("enc.w1", (cfg.feature_dim, h), cfg.feature_dim),
        ("enc.b1", (h,), cfg.feature_dim),
        ("enc.w2", (h, h), h),
        ("enc.b2", (h,), h),
    ]
    for k in range(1, cfg.max_set_size + 1):
        shapes += [
            (f"g{k}.w1", (k * h, h), k * h),
            (f"g{k}.b1", (h,), k * h),
            (f"g{k}.w2", (h, h), h),
            (f"g{k}.b2", (h,), h),
        ]
    shapes += [
        ("head.w1", (h, h), h),
        ("head.b1", (h,), h),
        ("head.w2", (h, h), h),
        ("head.b2", (h,), h),
        ("cls.w", (h, cfg.num_classes), h),
        ("cls.b", (cfg.num_classes,), h),
        ("emb.w", (h, cfg.embed_dim), h),
        ("emb.b", (cfg.embed_dim,), h),
    ]
    return shapes


def init_params(cfg: SamConfig) -> SamParams:
    """Seeded uniform init in (-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(cfg.seed)
    tensors = {}
    for name, shape, fan_in in _layer_shapes(cfg):
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return SamParams(config=cfg, tensors=tensors)


def _mlp(x: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    hid = ad.relu(ad.affine(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return ad.affine(hid, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _active_masks(n: int, mode: str):
    for mask in subset_masks(n):
        if mode == "pairs" and bin(mask).count("1") > 2:
            continue
        yield mask


def _forward_tape(params: SamParams, features):
    """Run the tape forward; returns per-subset tensors plus the set head."""
    cfg = params.config
    n = len(features)
    if not 1 <= n <= cfg.max_set_size:
        raise ValueError(f"set size {n} outside [1, {cfg.max_set_size}]")
    for x in features:
        if np.asarray(x).shape != (cfg.feature_dim,):
            raise ValueError(
                f"feature shape {np.asarray(x).shape} != ({cfg.feature_dim},)"
            )
    p = {name: Tensor(arr) for name, arr in params.tensors.items()}
    encoded = [_mlp(Tensor(x), p, "enc") for x in features]

    subset_reps: dict[int, Tensor] = {}
    for mask in _active_masks(n, cfg.subset_mode):
        members = tuple(i for i in range(n) if mask >> i & 1)
        k = len(members)
        orderings = ad.all_orderings(members)
        rows = ad.gather_concat(encoded, orderings)
        subset_reps[mask] = ad.mean_rows(_mlp(rows, p, f"g{k}"))

    summed = ad.add_n(list(subset_reps.values()))
    set_rep = _mlp(summed, p, "head")

    logits = {m: ad.affine(r, p["cls.w"], p["cls.b"]) for m, r in subset_reps.items()}
    embeds = {m: ad.affine(r, p["emb.w"], p["emb.b"]) for m, r in subset_reps.items()}

    full_mask = (1 << n) - 1
    if full_mask in subset_reps:
        set_logits = logits[full_mask]
        set_embed = embeds[full_mask]
    else:
        # pairs mode with n > 2: the set head output stands in for the
        # (absent) full-subset representation.
        set_logits = ad.affine(set_rep, p["cls.w"], p["cls.b"])
        set_embed = ad.affine(set_rep, p["emb.w"], p["emb.b"])
    return p, subset_reps, logits, embeds, set_rep, set_logits, set_embed


def forward_set(params: SamParams, features) -> SetAbstractionOutput:
    _, reps, logits, embeds, set_rep, set_logits, set_embed = _forward_tape(
        params, features
    )
    return SetAbstractionOutput(
        subset_reps={m: r.value.copy() for m, r in reps.items()},
        subset_logits={m: l.value.copy() for m, l in logits.items()},
        subset_embeddings={m: e.value.copy() for m, e in embeds.items()},
        set_representation=set_rep.value.copy(),
        set_logits=set_logits.value.copy(),
        set_embedding=set_embed.value.copy(),
    )


def _loss_tape(logits, embeds, targets, vocab: LabelVocab) -> Tensor:
    terms = []
    for mask in logits:
        if mask not in targets:
            raise KeyError(f"missing target for subset mask {mask}")
        t = targets[mask]
        ce = ad.softmax_cross_entropy(logits[mask], vocab.target_distribution(t.nodes))
        err = ad.mse(embeds[mask], t.embedding)
        terms.append(ad.add_n([ce, err]))
    return ad.scale(ad.add_n(terms), 1.0 / len(terms))


def loss(
    out: SetAbstractionOutput,
    targets: dict[int, SubsetTarget],
    vocab: LabelVocab,
) -> float:
    """Mean over subsets of softmax cross-entropy + embedding MSE."""
    total = 0.0
    for mask, logit in out.subset_logits.items():
        if mask not in targets:
            raise KeyError(f"missing target for subset mask {mask}")
        t = targets[mask]
        dist = vocab.target_distribution(t.nodes)
        z = logit - logit.max()
        log_probs = z - np.log(np.exp(z).sum())
        ce = -(dist * log_probs).sum()
        diff = out.subset_embeddings[mask] - t.embedding
        total += ce + (diff**2).mean()
    return total / len(out.subset_logits)


def backward(
    params: SamParams,
    features,
    targets: dict[int, SubsetTarget],
    vocab: LabelVocab,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value plus gradients for every parameter tensor."""
    p, _, logits, embeds, _, _, _ = _forward_tape(params, features)
    total = _loss_tape(logits, embeds, targets, vocab)
    total.backward()
    return float(total.value), {name: t.grad for name, t in p.items()}


def learning_rate(cfg: SamConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def sgd_step(
    params: SamParams,
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    epoch: int,
) -> SamParams:
    """Classical momentum with coupled weight decay, in place."""
    cfg = params.config
    lr = learning_rate(cfg, epoch)
    for name, w in params.tensors.items():
        g = grads[name] + cfg.weight_decay * w
        velocity[name] = cfg.momentum * velocity[name] + g
        w -= lr * velocity[name]
        if not np.all(np.isfinite(w)):
            raise NonFiniteError(f"sgd_step:{name}")
    return params


def zero_velocity(params: SamParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(w) for name, w in params.tensors.items()}


class SamModel:
    """Parameters bound to their config and abstraction vocabulary."""

    def __init__(self, params: SamParams, vocab: LabelVocab):
        self.params = params
        self.vocab = vocab

    @property
    def config(self) -> SamConfig:
        return self.params.config

    def forward_set(self, features) -> SetAbstractionOutput:
        return forward_set(self.params, features)

    def abstraction_representation(self, features) -> np.ndarray:
        """Predicted embedding of the full input subset."""
        return self.forward_set(features).set_embedding

    def predict_topk(self, features, k: int = 5) -> list[str]:
        logits = self.forward_set(features).set_logits
        top = np.argsort(-logits, kind="stable")[:k]
        return [self.vocab.ids[i] for i in top]

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "SamModel":
        return load_checkpoint(path)


def train(
    cfg: SamConfig,
    corpus,
    examples: list[TrainingExample],
    epochs: int,
    vocab: LabelVocab,
    metrics_path=None,
) -> tuple[SamModel, list[dict]]:
    """Momentum-SGD over the example list; deterministic for a given seed.

    A non-finite loss aborts training and returns the parameters from the
    last completed epoch.
    """
    if not examples:
        raise ValueError("training stream is empty")
    params = init_params(cfg)
    velocity = zero_velocity(params)
    rng = np.random.default_rng(cfg.seed + 1)
    feats = [
        [corpus.features_of(v) for v in ex.video_ids] for ex in examples
    ]
    metrics: list[dict] = []
    last_good = params.copy()
    for epoch in range(epochs):
        order = rng.permutation(len(examples))
        total_loss = 0.0
        hits = 0
        subsets = 0
        try:
            for idx in order:
                ex = examples[idx]
                value, grads = backward(params, feats[idx], ex.subset_targets, vocab)
                sgd_step(params, grads, velocity, epoch)
                total_loss += value
            # Accuracy pass on the epoch-end parameters.
            for idx in order:
                ex = examples[idx]
                out = forward_set(params, feats[idx])
                for mask, logit in out.subset_logits.items():
                    pred = vocab.ids[int(np.argmax(logit))]
                    hits += pred in ex.subset_targets[mask].nodes
                    subsets += 1
        except NonFiniteError as e:
            metrics.append({"epoch": epoch, "diverged": True, "op": e.op})
            params = last_good
            break
        entry = {
            "epoch": epoch,
            "loss": total_loss / len(examples),
            "subset_top1": hits / subsets,
            "lr": learning_rate(cfg, epoch),
        }
        metrics.append(entry)
        last_good = params.copy()
    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as f:
            for entry in metrics:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    return SamModel(params, vocab), metrics


# --- checkpoint format -----------------------------------------------------


def save_checkpoint(model: SamModel, path) -> None:
    names = sorted(model.params.tensors)
    header = {
        "config": asdict(model.config),
        "vocab": list(model.vocab.ids),
        "params": [
            {"name": n, "shape": list(model.params.tensors[n].shape)} for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(model.params.tensors[n].astype("<f4").tobytes())


def load_checkpoint(path) -> SamModel:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("not a model checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {version} != supported {CHECKPOINT_VERSION}"
            )
        (blob_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        cfg = SamConfig(**header["config"])
        tensors = {}
        for entry in header["params"]:
            size = int(np.prod(entry["shape"]))
            data = np.frombuffer(f.read(size * 4), dtype="<f4")
            tensors[entry["name"]] = data.reshape(entry["shape"]).astype(np.float64)
    return SamModel(SamParams(config=cfg, tensors=tensors), LabelVocab(tuple(header["vocab"])))
