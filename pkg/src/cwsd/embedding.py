"""Embedding provider client, sub-word averaging, layer pooling, and cache.

The provider speaks a small HTTP JSON protocol:

    GET  /info   -> {"protocol_version": 1, "model_name": str, "dim": int,
                     "n_layers": int, "max_tokens": int}
    POST /embed  <- {"layers": [int, ...] | "all",
                     "sentences": [{"tokens": [str, ...], "target_index": int}, ...]}
                 -> {"dim": int, "layers": [int, ...],
                     "results": [{"truncated": bool,
                                  "target_subwords": [[vec, ...] per layer]}, ...]}

Layer 0 is the model's input-embedding layer; layers 1..n_layers are the
transformer outputs. The client averages the target token's sub-word
vectors per layer (the provider never averages). Vectors are stored as
float32; averaging and pooling accumulate in float64.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import write_bytes_atomic
from .errors import (
    CacheFormatError,
    MissingEmbeddingError,
    ProtocolError,
    TransportError,
    TruncatedTargetError,
)

PROTOCOL_VERSION = 1

CACHE_MAGIC = b"CWSE"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIIHHQ")  # magic, version, dim, layer_count, reserved, record_count
_U16 = struct.Struct("<H")


@dataclass(frozen=True)
class ProviderInfo:
    """Capabilities advertised by an embedding provider."""

    model_name: str
    dim: int
    n_layers: int
    max_tokens: int

    @classmethod
    def from_payload(cls, payload) -> "ProviderInfo":
        try:
            version = payload["protocol_version"]
            info = cls(
                model_name=str(payload["model_name"]),
                dim=int(payload["dim"]),
                n_layers=int(payload["n_layers"]),
                max_tokens=int(payload["max_tokens"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"malformed /info payload: {e}") from None
        if version != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: provider speaks {version}, "
                f"client speaks {PROTOCOL_VERSION}"
            )
        if info.dim < 1 or info.n_layers < 1:
            raise ProtocolError(f"invalid provider dimensions: {info}")
        return info


@dataclass(frozen=True)
class InstanceEmbedding:
    """Per-layer target-token vectors for one instance.

    Vectors are already averaged over the target word's sub-word pieces
    but not yet pooled across layers, so a single cache serves both the
    default pooling and per-layer sweeps.
    """

    instance_id: str
    layers: dict[int, np.ndarray]

    @property
    def dim(self) -> int:
        return len(next(iter(self.layers.values())))

    def layer(self, index: int) -> np.ndarray:
        if index not in self.layers:
            raise MissingEmbeddingError(
                f"layer {index} absent from embedding {self.instance_id!r} "
                f"(has {sorted(self.layers)})"
            )
        return self.layers[index]


@dataclass(frozen=True)
class PoolingSpec:
    """How to combine per-layer vectors into one contextual embedding."""

    mode: str  # sum | mean | single
    layers: tuple[int, ...]

    def __post_init__(self):
        if self.mode not in ("sum", "mean", "single"):
            raise ValueError(f"unknown pooling mode {self.mode!r}")
        if not self.layers:
            raise ValueError("pooling needs at least one layer")
        if self.mode == "single" and len(self.layers) != 1:
            raise ValueError("single-layer pooling takes exactly one layer")
        object.__setattr__(self, "layers", tuple(int(x) for x in self.layers))

    @classmethod
    def last_four_sum(cls, n_layers: int) -> "PoolingSpec":
        """Default: sum of the final four transformer layers."""
        if n_layers < 4:
            raise ValueError(f"model has only {n_layers} layers")
        return cls("sum", tuple(range(n_layers - 3, n_layers + 1)))

    @classmethod
    def single(cls, layer: int) -> "PoolingSpec":
        return cls("single", (layer,))

    def to_json(self) -> dict:
        return {"mode": self.mode, "layers": list(self.layers)}

    @classmethod
    def from_json(cls, payload) -> "PoolingSpec":
        return cls(payload["mode"], tuple(payload["layers"]))


def pool(e: InstanceEmbedding, spec: PoolingSpec) -> np.ndarray:
    """Combine the requested layers of one embedding into a single vector."""
    stack = np.stack([e.layer(i) for i in spec.layers]).astype(np.float64)
    if spec.mode == "sum":
        out = stack.sum(axis=0)
    elif spec.mode == "mean":
        out = stack.mean(axis=0)
    else:
        out = stack[0]
    return out.astype(np.float32)


def average_subwords(subword_vectors, dim: int) -> np.ndarray:
    """Mean of a token's sub-word piece vectors, float64 accumulation."""
    arr = np.asarray(subword_vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != dim:
        raise ProtocolError(
            f"expected a non-empty list of {dim}-dim sub-word vectors, "
            f"got shape {arr.shape}"
        )
    out = arr.mean(axis=0).astype(np.float32)
    if np.isnan(out).all():
        raise ProtocolError("provider returned an all-NaN target vector")
    return out


def parse_embed_response(payload, instance_ids, info: ProviderInfo):
    """Turn one /embed response into InstanceEmbeddings, validating shape.

    Raises TruncatedTargetError when any instance lost its target token to
    provider-side truncation; no instance is ever silently dropped.
    """
    try:
        dim = int(payload["dim"])
        layer_order = [int(x) for x in payload["layers"]]
        results = payload["results"]
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"malformed /embed payload: {e}") from None
    if dim != info.dim:
        raise ProtocolError(f"dimension mismatch: /embed says {dim}, /info says {info.dim}")
    if len(results) != len(instance_ids):
        raise ProtocolError(
            f"result count {len(results)} != request count {len(instance_ids)}"
        )
    truncated = [
        iid for iid, r in zip(instance_ids, results) if r.get("truncated", False)
    ]
    if truncated:
        raise TruncatedTargetError(truncated)
    embeddings = []
    for iid, r in zip(instance_ids, results):
        per_layer = r.get("target_subwords")
        if not isinstance(per_layer, list) or len(per_layer) != len(layer_order):
            raise ProtocolError(
                f"{iid}: expected {len(layer_order)} per-layer sub-word lists"
            )
        layers = {
            layer: average_subwords(vectors, dim)
            for layer, vectors in zip(layer_order, per_layer)
        }
        embeddings.append(InstanceEmbedding(instance_id=iid, layers=layers))
    return embeddings


class ProviderClient:
    """Thin HTTP client with retry on transport failures."""

    def __init__(self, base_url: str, timeout: float = 60.0, retries: int = 3):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = requests.Session()

    def _request(self, method: str, path: str, json_body=None):
        last = None
        for attempt in range(self.retries):
            try:
                resp = self._session.request(
                    method, self.base_url + path, json=json_body, timeout=self.timeout
                )
            except requests.RequestException as e:
                last = e
                time.sleep(0.2 * (attempt + 1))
                continue
            if resp.status_code >= 500:
                last = ProtocolError(f"{path}: server error {resp.status_code}")
                time.sleep(0.2 * (attempt + 1))
                continue
            if resp.status_code != 200:
                raise ProtocolError(
                    f"{path}: HTTP {resp.status_code}: {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError:
                raise ProtocolError(f"{path}: response is not JSON") from None
        raise TransportError(f"{self.base_url}{path}: giving up after {self.retries} attempts: {last}")

    def info(self) -> ProviderInfo:
        return ProviderInfo.from_payload(self._request("GET", "/info"))

    def embed(self, sentences, layers):
        body = {"layers": layers, "sentences": sentences}
        return self._request("POST", "/embed", json_body=body)


def fetch_embeddings(provider, instances, layers="all", batch_size: int = 32):
    """Fetch per-layer target-token embeddings for a batch of instances.

    ``provider`` is a base URL or a ProviderClient. Results preserve input
    order. ``layers`` is an explicit list of layer indices or "all".
    """
    client = provider if isinstance(provider, ProviderClient) else ProviderClient(provider)
    info = client.info()
    instances = list(instances)
    out = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        sentences = [
            {"tokens": list(inst.tokens), "target_index": inst.target_index}
            for inst in chunk
        ]
        payload = client.embed(sentences, layers)
        out.extend(
            parse_embed_response(payload, [inst.instance_id for inst in chunk], info)
        )
    return out


def write_cache(path, embeddings) -> None:
    """Serialize embeddings to the binary cache format (little-endian).

    Header: magic "CWSE", version u32, dim u32, layer_count u16,
    reserved u16, record_count u64. Each record: id_len u16, UTF-8 id,
    then layer_count x (layer_index u16, dim x f32). All records must
    share one layer-index set and one dimension.
    """
    embeddings = list(embeddings)
    if embeddings:
        layer_set = sorted(embeddings[0].layers)
        dim = embeddings[0].dim
    else:
        layer_set, dim = [], 0
    seen = set()
    chunks = [_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, dim, len(layer_set), 0, len(embeddings))]
    for e in embeddings:
        if e.instance_id in seen:
            raise CacheFormatError(f"duplicate instance_id {e.instance_id!r}")
        seen.add(e.instance_id)
        if sorted(e.layers) != layer_set:
            raise CacheFormatError(
                f"{e.instance_id !r}: layer set {sorted(e.layers)} != {layer_set}"
            )
        id_bytes = e.instance_id.encode("utf-8")
        chunks.append(_U16.pack(len(id_bytes)))
        chunks.append(id_bytes)
        for layer in layer_set:
            vec = np.ascontiguousarray(e.layers[layer], dtype="<f4")
            if vec.shape != (dim,):
                raise CacheFormatError(
                    f"{e.instance_id!r}: layer {layer} has dim {vec.shape}, want ({dim},)"
                )
            chunks.append(_U16.pack(layer))
            chunks.append(vec.tobytes())
    write_bytes_atomic(path, b"".join(chunks))


def read_cache(path):
    """Read a cache file back into a list of InstanceEmbedding.

    Validates magic, version, and declared counts; any truncation or
    trailing garbage fails the whole read (no partial results).
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CacheFormatError(f"{path}: shorter than a header")
    magic, version, dim, layer_count, reserved, record_count = _HEADER.unpack_from(data, 0)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    if reserved != 0:
        raise CacheFormatError(f"{path}: nonzero reserved field")
    offset = _HEADER.size
    vec_bytes = 4 * dim
    embeddings = []
    seen = set()
    for rec in range(record_count):
        try:
            (id_len,) = _U16.unpack_from(data, offset)
            offset += _U16.size
            if len(data) < offset + id_len:
                raise struct.error("id overruns file")
            instance_id = data[offset : offset + id_len].decode("utf-8")
            offset += id_len
            layers = {}
            for _ in range(layer_count):
                (layer_index,) = _U16.unpack_from(data, offset)
                offset += _U16.size
                if len(data) < offset + vec_bytes:
                    raise struct.error("vector overruns file")
                vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
                offset += vec_bytes
                if layer_index in layers:
                    raise CacheFormatError(
                        f"{path}: record {instance_id!r} repeats layer {layer_index}"
                    )
                layers[layer_index] = vec
        except (struct.error, UnicodeDecodeError) as e:
            raise CacheFormatError(f"{path}: truncated or corrupt at record {rec}: {e}") from None
        if instance_id in seen:
            raise CacheFormatError(f"{path}: duplicate instance_id {instance_id!r}")
        seen.add(instance_id)
        embeddings.append(InstanceEmbedding(instance_id=instance_id, layers=layers))
    if offset != len(data):
        raise CacheFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return embeddings


class EmbeddingCache:
    """In-memory index of InstanceEmbeddings by instance_id."""

    def __init__(self, embeddings):
        self.records = list(embeddings)
        self._by_id = {}
        for e in self.records:
            if e.instance_id in self._by_id:
                raise CacheFormatError(f"duplicate instance_id {e.instance_id!r}")
            self._by_id[e.instance_id] = e

    @classmethod
    def load(cls, path) -> "EmbeddingCache":
        return cls(read_cache(path))

    def __len__(self):
        return len(self.records)

    def __contains__(self, instance_id):
        return instance_id in self._by_id

    def __getitem__(self, instance_id) -> InstanceEmbedding:
        try:
            return self._by_id[instance_id]
        except KeyError:
            raise MissingEmbeddingError(
                f"no cached embedding for instance {instance_id!r}"
            ) from None

    def layer_indices(self) -> list[int]:
        return sorted(self.records[0].layers) if self.records else []
