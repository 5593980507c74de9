"""Labeled video records as feature vectors, plus synthetic generation.

Real feature ingestion reads newline-delimited JSON, optionally with a
sidecar binary feature file. The synthetic generator draws one unit anchor
per leaf class and jitters records around it with Gaussian noise, which
makes class separability directly controllable through sigma.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import RelationalGraph

SPLITS = ("train", "val", "test")


class CorpusError(Exception):
    pass


@dataclass
class VideoRecord:
    video_id: str
    labels: tuple[str, ...]  # sorted leaf node ids
    features: np.ndarray | None
    split: str


@dataclass
class Corpus:
    records: dict[str, VideoRecord]
    feature_dim: int
    graph_id: str = ""
    _split_index: dict[str, list[str]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def split_ids(self, split: str) -> list[str]:
        if split not in self._split_index:
            self._split_index[split] = sorted(
                vid for vid, r in self.records.items() if r.split == split
            )
        return self._split_index[split]

    def ids_with_label(self, leaf_id: str, split: str) -> list[str]:
        return [
            vid for vid in self.split_ids(split) if leaf_id in self.records[vid].labels
        ]

    def features_of(self, video_id: str) -> np.ndarray:
        rec = self.records[video_id]
        if rec.features is None:
            raise CorpusError(f"record {video_id!r} carries no features")
        return rec.features


def _validate_record(rec: VideoRecord, g: RelationalGraph) -> None:
    if not rec.labels:
        raise CorpusError(f"record {rec.video_id!r} has an empty label set")
    if rec.split not in SPLITS:
        raise CorpusError(f"record {rec.video_id!r} has unknown split {rec.split!r}")
    for label in rec.labels:
        node = g.node(label)
        if not node.is_leaf:
            raise CorpusError(
                f"record {rec.video_id!r} labeled with non-leaf node {label!r}"
            )


def load_corpus(path, g: RelationalGraph, features_path=None) -> Corpus:
    """Load newline-delimited JSON records, validated against the graph.

    Records may omit "features" only when a sidecar binary file is given.
    """
    sidecar = _load_feature_sidecar(features_path) if features_path else None
    records: dict[str, VideoRecord] = {}
    feature_dim = -1
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            doc = json.loads(line)
            vid = doc["video_id"]
            if vid in records:
                raise CorpusError(f"duplicate video_id {vid!r} (line {lineno})")
            features = doc.get("features")
            if features is not None:
                features = np.array(features, dtype=np.float64)
            elif sidecar is not None:
                if vid not in sidecar:
                    raise CorpusError(f"no sidecar features for {vid!r}")
                features = sidecar[vid]
            else:
                raise CorpusError(
                    f"record {vid!r} omits features and no sidecar file was given"
                )
            if feature_dim < 0:
                feature_dim = features.shape[0]
            elif features.shape[0] != feature_dim:
                raise CorpusError(
                    f"inconsistent feature dim for {vid!r}: "
                    f"{features.shape[0]} != {feature_dim}"
                )
            rec = VideoRecord(
                video_id=vid,
                labels=tuple(sorted(set(doc["labels"]))),
                features=features,
                split=doc["split"],
            )
            _validate_record(rec, g)
            records[vid] = rec
    return Corpus(records=records, feature_dim=max(feature_dim, 0))


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for vid in sorted(corpus.records):
            rec = corpus.records[vid]
            doc = {
                "video_id": rec.video_id,
                "labels": list(rec.labels),
                "features": [float(c) for c in rec.features]
                if rec.features is not None
                else None,
                "split": rec.split,
            }
            if doc["features"] is None:
                del doc["features"]
            f.write(json.dumps(doc, sort_keys=True) + "\n")


def _load_feature_sidecar(path) -> dict[str, np.ndarray]:
    """Binary sidecar: u32 header length, JSON index {dim, ids}, then
    id-ordered little-endian float32 rows."""
    with open(path, "rb") as f:
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        dim = header["dim"]
        ids = header["ids"]
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.shape[0] != dim * len(ids):
        raise CorpusError("sidecar payload size disagrees with its index")
    rows = data.reshape(len(ids), dim).astype(np.float64)
    return {vid: rows[i] for i, vid in enumerate(ids)}


def save_feature_sidecar(corpus: Corpus, path) -> None:
    ids = sorted(corpus.records)
    header = json.dumps({"dim": corpus.feature_dim, "ids": ids}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for vid in ids:
            f.write(corpus.records[vid].features.astype("<f4").tobytes())


def gen_synthetic_corpus(
    g: RelationalGraph,
    per_leaf: int,
    feature_dim: int,
    noise: float,
    seed: int,
) -> Corpus:
    """Per leaf: a seeded unit anchor, then per_leaf records at anchor + N(0, sigma).

    Split rule per leaf: 10% val, 10% test (floored), remainder to train,
    assigned over a seeded shuffle.
    """
    if per_leaf < 1:
        raise ValueError("per_leaf must be >= 1")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    records: dict[str, VideoRecord] = {}
    for leaf in g.leaf_ids:
        anchor = rng.standard_normal(feature_dim)
        anchor /= np.linalg.norm(anchor)
        feats = anchor[None, :] + noise * rng.standard_normal((per_leaf, feature_dim))
        order = rng.permutation(per_leaf)
        n_val = per_leaf // 10
        n_test = per_leaf // 10
        splits = {}
        for rank, idx in enumerate(order):
            if rank < n_val:
                splits[idx] = "val"
            elif rank < n_val + n_test:
                splits[idx] = "test"
            else:
                splits[idx] = "train"
        for i in range(per_leaf):
            vid = f"{leaf}#{i:04d}"
            records[vid] = VideoRecord(
                video_id=vid,
                labels=(leaf,),
                features=feats[i],
                split=splits[i],
            )
    return Corpus(records=records, feature_dim=feature_dim)
