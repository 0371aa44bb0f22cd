"""Forward-only TK term encoder.

Word embeddings get a sinusoidal positional encoding added, pass through a
stack of post-LN Transformer encoder layers, and are mixed back with the raw
embeddings through a scalar gate ``alpha``::

    out_i = emb_i * alpha + TF(emb + pe)_i * (1 - alpha)

Queries and passages use different positional offsets (0 and 500 by default)
so the two sequence types never share encodings.

Weights are either drawn from a seeded generator or loaded from an archive of
flat little-endian float32 tensors plus a JSON manifest. Nothing here trains.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .errors import ParseError

LN_EPS = 1e-6
WEIGHTS_FORMAT = "posbias-weights/1"


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 300
    n_layers: int = 2
    n_heads: int = 16
    head_size: int = 32
    ff_dim: int = 100
    alpha: float = 0.5
    query_offset: int = 0
    passage_offset: int = 500

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ValueError(f"embedding dimension must be even and >= 2, got {self.d}")
        if self.n_layers < 0 or self.n_heads < 1 or self.head_size < 1 or self.ff_dim < 1:
            raise ValueError("layer/head/feed-forward sizes must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.query_offset < 0 or self.passage_offset < 0:
            raise ValueError("positional offsets must be non-negative")

    @property
    def width(self) -> int:
        return self.n_heads * self.head_size

    @property
    def projected(self) -> bool:
        return self.width != self.d

    def offset_for(self, role: str) -> int:
        if role == "query":
            return self.query_offset
        if role == "passage":
            return self.passage_offset
        raise ValueError(f"role must be 'query' or 'passage', got {role!r}")

    def replace(self, **changes) -> "EncoderConfig":
        return EncoderConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**data)


def load_encoder_config(path) -> EncoderConfig:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e}", path) from None
    return EncoderConfig.from_dict(data)


def positional_encoding(length: int, d: int, offset: int = 0) -> np.ndarray:
    """Sinusoidal encodings for positions ``offset .. offset+length-1``.

    Column 2i holds sin(pos / 10000^(2i/d)), column 2i+1 the matching cosine.
    """
    if d % 2:
        raise ValueError(f"positional encoding needs an even dimension, got {d}")
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    inv = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)[None, :]
    angles = pos * inv
    pe = np.empty((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def _param_shapes(config: EncoderConfig) -> Dict[str, tuple]:
    w, ff = config.width, config.ff_dim
    shapes: Dict[str, tuple] = {}
    if config.n_layers and config.projected:
        shapes["in_proj.weight"] = (config.d, w)
        shapes["in_proj.bias"] = (w,)
    for layer in range(config.n_layers):
        pre = f"layers.{layer}."
        for name in ("q", "k", "v", "o"):
            shapes[pre + f"attn.{name}.weight"] = (w, w)
            shapes[pre + f"attn.{name}.bias"] = (w,)
        shapes[pre + "ln1.gain"] = (w,)
        shapes[pre + "ln1.bias"] = (w,)
        shapes[pre + "ff1.weight"] = (w, ff)
        shapes[pre + "ff1.bias"] = (ff,)
        shapes[pre + "ff2.weight"] = (ff, w)
        shapes[pre + "ff2.bias"] = (w,)
        shapes[pre + "ln2.gain"] = (w,)
        shapes[pre + "ln2.bias"] = (w,)
    if config.n_layers and config.projected:
        shapes["out_proj.weight"] = (w, config.d)
        shapes["out_proj.bias"] = (config.d,)
    return shapes


@dataclass(frozen=True)
class EncoderParams:
    config: EncoderConfig
    weights: Dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = _param_shapes(self.config)
        if set(expected) != set(self.weights):
            missing = sorted(set(expected) - set(self.weights))
            extra = sorted(set(self.weights) - set(expected))
            raise ValueError(f"weight names do not match config (missing={missing}, extra={extra})")
        frozen = {}
        for name, shape in expected.items():
            arr = np.array(self.weights[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite weights")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "weights", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]

    def with_alpha(self, alpha: float) -> "EncoderParams":
        return EncoderParams(self.config.replace(alpha=alpha), self.weights)


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Draw weights from N(0, 1/fan_in); biases zero, layer-norm gains one."""
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith(".gain"):
            weights[name] = np.ones(shape)
        elif name.endswith(".bias"):
            weights[name] = np.zeros(shape)
        else:
            weights[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
    return EncoderParams(config, weights)


def save_params(params: EncoderParams, directory) -> Path:
    """Write ``manifest.json`` and ``weights.bin`` (float32, little-endian) into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(out / "weights.bin", "wb") as f:
        for name, shape in _param_shapes(params.config).items():
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            f.write(arr.tobytes())
            entries.append({"name": name, "shape": list(shape), "offset": offset})
            offset += arr.size
    manifest = {"format": WEIGHTS_FORMAT, "config": params.config.to_dict(), "tensors": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_params(directory) -> EncoderParams:
    src = Path(directory)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid manifest JSON: {e}", src / "manifest.json") from None
    if manifest.get("format") != WEIGHTS_FORMAT:
        raise ParseError(f"unsupported weight format {manifest.get('format')!r}", src)
    flat = np.fromfile(src / "weights.bin", dtype="<f4")
    weights = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + size > flat.size:
            raise ParseError(f"tensor {entry['name']} runs past end of weights.bin", src)
        weights[entry["name"]] = flat[start : start + size].astype(np.float64).reshape(shape)
    return EncoderParams(EncoderConfig.from_dict(manifest["config"]), weights)


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _encoder_layer(h, w, pre, n_heads, head_size):
    m = h.shape[0]

    def proj(name):
        y = h @ w[pre + f"attn.{name}.weight"] + w[pre + f"attn.{name}.bias"]
        return y.reshape(m, n_heads, head_size).transpose(1, 0, 2)

    q, k, v = proj("q"), proj("k"), proj("v")
    att = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(head_size))
    ctx = (att @ v).transpose(1, 0, 2).reshape(m, n_heads * head_size)
    attn_out = ctx @ w[pre + "attn.o.weight"] + w[pre + "attn.o.bias"]
    h = _layer_norm(h + attn_out, w[pre + "ln1.gain"], w[pre + "ln1.bias"])
    ff = np.maximum(h @ w[pre + "ff1.weight"] + w[pre + "ff1.bias"], 0.0)
    ff = ff @ w[pre + "ff2.weight"] + w[pre + "ff2.bias"]
    return _layer_norm(h + ff, w[pre + "ln2.gain"], w[pre + "ln2.bias"])


def transformer_forward(x: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Apply the encoder stack to ``x`` (rows already carrying their positional encoding)."""
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise ValueError(f"expected input of shape (m, {cfg.d}), got {x.shape}")
    if cfg.n_layers == 0:
        return x.copy()
    w = params.weights
    h = x @ w["in_proj.weight"] + w["in_proj.bias"] if cfg.projected else x
    for layer in range(cfg.n_layers):
        h = _encoder_layer(h, w, f"layers.{layer}.", cfg.n_heads, cfg.head_size)
    if cfg.projected:
        h = h @ w["out_proj.weight"] + w["out_proj.bias"]
    return h


class EmbeddingTable:
    """Token -> vector lookup. Out-of-vocabulary tokens map to the zero vector."""

    def __init__(self, vocab: Sequence[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(vocab):
            raise ValueError("matrix must have one row per vocabulary entry")
        self.d = matrix.shape[1]
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self.index = {tok: k for k, tok in enumerate(vocab)}
        if len(self.index) != len(vocab):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.index)

    def __contains__(self, token):
        return token in self.index

    def lookup(self, tokens: Sequence[str]):
        """Return (m x d matrix, boolean OOV mask)."""
        rows = np.array([self.index.get(t, -1) for t in tokens], dtype=np.int64)
        oov = rows < 0
        out = np.zeros((len(tokens), self.d))
        out[~oov] = self.matrix[rows[~oov]]
        return out, oov


def load_embeddings(path, vocab: Optional[set] = None) -> EmbeddingTable:
    """Read ``token v1 ... vd`` lines; when ``vocab`` is given only those tokens are kept."""
    tokens: List[str] = []
    rows: List[np.ndarray] = []
    d = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                if not line.strip():
                    continue
                raise ParseError("expected a token followed by its vector", path, lineno)
            if d is None:
                d = len(parts) - 1
            elif len(parts) - 1 != d:
                raise ParseError(f"expected {d} values, got {len(parts) - 1}", path, lineno)
            if vocab is not None and parts[0] not in vocab:
                continue
            try:
                rows.append(np.array(parts[1:], dtype=np.float64))
            except ValueError:
                raise ParseError("non-numeric vector entry", path, lineno) from None
            tokens.append(parts[0])
    if d is None:
        raise ParseError("no embeddings found", path)
    return EmbeddingTable(tokens, np.vstack(rows) if rows else np.zeros((0, d)))


def _token_seed(seed: int, token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=str(seed).encode()).digest()
    return int.from_bytes(digest, "little")


def random_table(vocab: Iterable[str], d: int, seed: int, scale: float = 1.0) -> EmbeddingTable:
    """Standard-normal vectors (times ``scale``), each a pure function of (seed, token)."""
    vocab = sorted(set(vocab))
    matrix = np.empty((len(vocab), d))
    for k, tok in enumerate(vocab):
        matrix[k] = np.random.default_rng(_token_seed(seed, tok)).normal(0.0, scale, d)
    return EmbeddingTable(vocab, matrix)


@dataclass(frozen=True)
class ContextualizedSequence:
    vectors: np.ndarray = field(repr=False)
    tokens: tuple
    positions: tuple  # 1-based absolute positions within the sequence
    oov: tuple


def contextualize(
    tokens: Sequence[str], role: str, table: EmbeddingTable, params: EncoderParams
) -> ContextualizedSequence:
    cfg = params.config
    if len(tokens) == 0:
        raise ValueError("cannot contextualize an empty token list")
    if table.d != cfg.d:
        raise ValueError(f"embedding dimension {table.d} does not match encoder d={cfg.d}")
    offset = cfg.offset_for(role)
    emb, oov = table.lookup(tokens)
    alpha = cfg.alpha
    if alpha == 1.0:
        out = emb.copy()
    else:
        pe = positional_encoding(len(tokens), cfg.d, offset)
        out = emb * alpha + transformer_forward(emb + pe, params) * (1.0 - alpha)
    out.setflags(write=False)
    return ContextualizedSequence(
        out, tuple(tokens), tuple(range(1, len(tokens) + 1)), tuple(bool(x) for x in oov)
    )


def encode_passages(passages: Iterable, table: EmbeddingTable, params: EncoderParams) -> Iterator:
    """Yield (passage id, ContextualizedSequence) for each passage."""
    for p in passages:
        yield p.id, contextualize(p.tokens, "passage", table, params)
