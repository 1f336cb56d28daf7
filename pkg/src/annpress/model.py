"""Token-based feature compressor network.

An input vector x (d_in) is mapped to f(x) (d_out) by:

1. a compression token: one linear->relu->batchnorm block applied to x;
2. a bank of n learnable projection matrices, initialized as sparse random
   projections, giving n projected tokens;
3. a stack of transformer encoder stages over the (n+1)-token sequence,
   with reduced query/key width and 2x MLP expansion; the compression token
   is refreshed with a linear projection of x between stages;
4. a final linear head reading the compression token.

There is no position embedding anywhere; the token order carries no
information. All parameters live in a flat name->array dict so the trainer,
the gradient checker, and the checkpoint format share one representation.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

CHECKPOINT_MAGIC = b"CCST"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, truncated, or incompatible."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every field is serialized with checkpoints."""

    d_in: int
    d_out: int
    n_projections: int = 8
    stages: int = 2
    encoders_per_stage: tuple[int, ...] = (2, 2)
    heads: int = 4
    qk_dim: int | None = None
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoders_per_stage", tuple(int(n) for n in self.encoders_per_stage))
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError(f"dimensions must be positive, got d_in={self.d_in}, d_out={self.d_out}")
        if self.n_projections < 1:
            raise ValueError(f"n_projections must be >= 1, got {self.n_projections}")
        if self.stages < 1 or len(self.encoders_per_stage) != self.stages:
            raise ValueError(
                f"encoders_per_stage must list one count per stage: "
                f"stages={self.stages}, got {self.encoders_per_stage}"
            )
        if any(n < 1 for n in self.encoders_per_stage):
            raise ValueError(f"encoder counts must be positive, got {self.encoders_per_stage}")
        if self.heads < 1 or self.d_out % self.heads:
            raise ValueError(f"heads must divide d_out: d_out={self.d_out}, heads={self.heads}")
        if self.qk_dim is None:
            object.__setattr__(self, "qk_dim", max(1, self.v_dim // 2))
        if not 1 <= self.qk_dim <= self.v_dim:
            raise ValueError(f"qk_dim must be in [1, v_dim={self.v_dim}], got {self.qk_dim}")

    @property
    def v_dim(self) -> int:
        return self.d_out // self.heads

    @property
    def mlp_hidden(self) -> int:
        # Expansion ratio is fixed at 2.
        return 2 * self.d_out

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "d_out": self.d_out,
            "n_projections": self.n_projections,
            "stages": self.stages,
            "encoders_per_stage": list(self.encoders_per_stage),
            "heads": self.heads,
            "qk_dim": self.qk_dim,
            "bn_eps": self.bn_eps,
            "bn_momentum": self.bn_momentum,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoders_per_stage"] = tuple(d["encoders_per_stage"])
        return cls(**d)


def sparse_projection(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    """Ternary sparse random projection with sparsity s_p = sqrt(d_in).

    Entries are +/- sqrt(s_p / d_out) with probability 1/(2 s_p) each and 0
    with probability 1 - 1/s_p, so E[w^2] = 1/d_out and projections preserve
    squared distances in expectation.
    """
    s_p = np.sqrt(d_in)
    magnitude = np.sqrt(s_p / d_out)
    u = rng.random((d_in, d_out))
    return np.where(
        u < 1.0 / (2.0 * s_p), magnitude, np.where(u < 1.0 / s_p, -magnitude, 0.0)
    ).astype(np.float32)


def _uniform_fan(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(config: ModelConfig) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Draw all parameters and fresh batchnorm statistics, deterministic in config.seed."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}

    def linear(prefix: str, fan_in: int, fan_out: int):
        params[f"{prefix}.w"] = _uniform_fan((fan_in, fan_out), rng)
        params[f"{prefix}.b"] = np.zeros(fan_out, dtype=np.float32)

    def linear_abn(prefix: str, fan_in: int, fan_out: int):
        linear(prefix, fan_in, fan_out)
        params[f"{prefix}.gamma"] = np.ones(fan_out, dtype=np.float32)
        params[f"{prefix}.beta"] = np.zeros(fan_out, dtype=np.float32)
        stats[f"{prefix}.running_mean"] = np.zeros(fan_out, dtype=np.float32)
        stats[f"{prefix}.running_var"] = np.ones(fan_out, dtype=np.float32)

    for i in range(config.n_projections):
        params[f"proj.{i}"] = sparse_projection(config.d_in, config.d_out, rng)
    linear_abn("seed", config.d_in, config.d_out)
    linear("refresh", config.d_in, config.d_out)
    linear("head", config.d_out, config.d_out)
    for s, n_enc in enumerate(config.encoders_per_stage):
        for e in range(n_enc):
            prefix = f"enc.{s}.{e}"
            for h in range(config.heads):
                params[f"{prefix}.q.{h}"] = _uniform_fan((config.d_out, config.qk_dim), rng)
                params[f"{prefix}.k.{h}"] = _uniform_fan((config.d_out, config.qk_dim), rng)
                params[f"{prefix}.v.{h}"] = _uniform_fan((config.d_out, config.v_dim), rng)
            linear(f"{prefix}.attn_out", config.heads * config.v_dim, config.d_out)
            linear_abn(f"{prefix}.mlp1", config.d_out, config.mlp_hidden)
            linear_abn(f"{prefix}.mlp2", config.mlp_hidden, config.d_out)
    return params, stats


def project_tokens(params: dict[str, np.ndarray], config: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Apply the projection bank only: (batch, d_in) -> (batch, n, d_out)."""
    if x.ndim != 2 or x.shape[1] != config.d_in:
        raise ValueError(f"expected (batch, {config.d_in}) input, got shape {x.shape}")
    return np.stack([x @ params[f"proj.{i}"] for i in range(config.n_projections)], axis=1)


def forward(
    tape: Tape,
    config: ModelConfig,
    params: dict[str, Tensor],
    stats: dict[str, np.ndarray],
    x: np.ndarray,
    *,
    mode: str = "infer",
    update_running: bool | None = None,
    capture_attention: list | None = None,
) -> Tensor:
    """Full compressor forward pass on the given tape; returns (batch, d_out).

    `params` must already be tape tensors (wrap with `wrap_params`). In train
    mode batchnorm uses batch statistics and, unless `update_running` is
    False, folds them into `stats` in place. `capture_attention` collects
    every head's softmax weight matrix for inspection.
    """
    if update_running is None:
        update_running = mode == "train"
    x = np.asarray(x, dtype=tape.dtype)
    if x.ndim != 2 or x.shape[1] != config.d_in:
        raise ValueError(f"expected (batch, {config.d_in}) input, got shape {x.shape}")
    if mode == "train" and x.shape[0] < 2:
        raise ValueError("train mode needs a batch of at least 2 (batch norm)")
    xt = tape.tensor(x)
    n_tokens = config.n_projections + 1

    def linear(t: Tensor, prefix: str) -> Tensor:
        return ad.add(ad.matmul(t, params[f"{prefix}.w"]), params[f"{prefix}.b"])

    def linear_abn(t: Tensor, prefix: str) -> Tensor:
        return ad.batchnorm(
            ad.relu(linear(t, prefix)),
            params[f"{prefix}.gamma"],
            params[f"{prefix}.beta"],
            stats[f"{prefix}.running_mean"],
            stats[f"{prefix}.running_var"],
            mode=mode,
            eps=config.bn_eps,
            momentum=config.bn_momentum,
            update_running=update_running,
        )

    def encoder(seq: Tensor, prefix: str) -> Tensor:
        head_outs = []
        for h in range(config.heads):
            q = ad.matmul(seq, params[f"{prefix}.q.{h}"])
            k = ad.matmul(seq, params[f"{prefix}.k.{h}"])
            v = ad.matmul(seq, params[f"{prefix}.v.{h}"])
            logits = ad.scale(ad.matmul(q, ad.swap_last_axes(k)), 1.0 / np.sqrt(config.qk_dim))
            weights = ad.softmax_rows(logits)
            if capture_attention is not None:
                capture_attention.append(weights.data)
            head_outs.append(ad.matmul(weights, v))
        attended = linear(ad.concat_features(head_outs), f"{prefix}.attn_out")
        seq = ad.add(seq, attended)
        hidden = linear_abn(ad.flatten_tokens(seq), f"{prefix}.mlp1")
        restored = ad.unflatten_tokens(linear_abn(hidden, f"{prefix}.mlp2"), n_tokens)
        return ad.add(seq, restored)

    token = linear_abn(xt, "seed")
    projected = [ad.matmul(xt, params[f"proj.{i}"]) for i in range(config.n_projections)]
    seq = ad.concat_tokens([token] + projected)
    for s in range(config.stages):
        for e in range(config.encoders_per_stage[s]):
            seq = encoder(seq, f"enc.{s}.{e}")
        if s < config.stages - 1:
            refreshed = ad.add(ad.slice_token(seq, 0), linear(xt, "refresh"))
            others = [ad.slice_token(seq, i) for i in range(1, n_tokens)]
            seq = ad.concat_tokens([refreshed] + others)
    return linear(ad.slice_token(seq, 0), "head")


def wrap_params(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Register every parameter array as a leaf tensor on the tape."""
    return {name: tape.tensor(value) for name, value in params.items()}


def count_params(config: ModelConfig) -> dict[str, int]:
    """Exact per-part parameter inventory; `total` covers every trainable array."""
    def abn_extra(fan_out: int) -> int:
        return fan_out + 2 * fan_out  # bias + batchnorm affine

    n_encoders = sum(config.encoders_per_stage)
    attention_per_encoder = (
        config.heads * (2 * config.d_out * config.qk_dim + config.d_out * config.v_dim)
        + config.heads * config.v_dim * config.d_out
        + config.d_out
    )
    mlp_weights_per_encoder = (
        config.d_out * config.mlp_hidden + config.mlp_hidden * config.d_out
    )
    mlp_other_per_encoder = abn_extra(config.mlp_hidden) + abn_extra(config.d_out)
    counts = {
        "projection_bank": config.n_projections * config.d_in * config.d_out,
        "compression_module": config.d_in * config.d_out + abn_extra(config.d_out),
        "token_refresh": config.d_in * config.d_out + config.d_out,
        "head": config.d_out * config.d_out + config.d_out,
        "attention": n_encoders * attention_per_encoder,
        "mlp_weights": n_encoders * mlp_weights_per_encoder,
        "mlp_other": n_encoders * mlp_other_per_encoder,
        "mlp_weights_per_encoder": mlp_weights_per_encoder,
    }
    counts["total"] = (
        counts["projection_bank"]
        + counts["compression_module"]
        + counts["token_refresh"]
        + counts["head"]
        + counts["attention"]
        + counts["mlp_weights"]
        + counts["mlp_other"]
    )
    return counts


class CompressorNet:
    """A config plus parameter/statistics dicts, with inference and checkpoint I/O."""

    def __init__(
        self,
        config: ModelConfig,
        params: dict[str, np.ndarray] | None = None,
        stats: dict[str, np.ndarray] | None = None,
    ):
        if (params is None) != (stats is None):
            raise ValueError("provide both params and stats, or neither")
        if params is None:
            params, stats = init_params(config)
        self.config = config
        self.params = params
        self.stats = stats

    def compress(self, x: np.ndarray, *, batch_size: int = 1024) -> np.ndarray:
        """Infer-mode forward over arbitrarily many rows, float32 output.

        Uses running batchnorm statistics, so the result is independent of
        how rows are batched together.
        """
        x = np.asarray(x, dtype=np.float32)
        if x.shape[0] == 0:
            return np.zeros((0, self.config.d_out), dtype=np.float32)
        outs = []
        for lo in range(0, x.shape[0], batch_size):
            tape = Tape(np.float32)
            wrapped = wrap_params(tape, self.params)
            outs.append(forward(tape, self.config, wrapped, self.stats, x[lo : lo + batch_size]).data)
        return np.concatenate(outs, axis=0)

    def save(self, path: str) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path: str, *, expect_d_in: int | None = None) -> "CompressorNet":
        return load_checkpoint(path, expect_d_in=expect_d_in)


def save_checkpoint(model: CompressorNet, path: str) -> None:
    """Write magic, version, config JSON, name/shape/offset table, float32 payload, CRC-32."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(config_blob)))
    buf.write(config_blob)

    arrays = dict(model.params)
    arrays.update(model.stats)
    names = sorted(arrays)
    payload = io.BytesIO()
    table = struct.pack("<I", len(names))
    for name in names:
        value = np.ascontiguousarray(arrays[name], dtype="<f4")
        encoded = name.encode()
        table += struct.pack("<I", len(encoded)) + encoded
        table += struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape)
        table += struct.pack("<Q", payload.tell())
        payload.write(value.tobytes())
    buf.write(table)
    buf.write(struct.pack("<Q", payload.tell()))
    buf.write(payload.getvalue())
    blob = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(path: str, *, expect_d_in: int | None = None) -> CompressorNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a compressor checkpoint (bad magic)")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupt or truncated)")
    view = memoryview(blob)
    pos = 4
    (version,) = struct.unpack_from("<I", view, pos)
    pos += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (config_len,) = struct.unpack_from("<I", view, pos)
    pos += 4
    config = ModelConfig.from_dict(json.loads(bytes(view[pos : pos + config_len])))
    pos += config_len
    if expect_d_in is not None and config.d_in != expect_d_in:
        raise CheckpointError(
            f"{path}: checkpoint expects {config.d_in}-dim input, data has {expect_d_in} dims"
        )

    (n_entries,) = struct.unpack_from("<I", view, pos)
    pos += 4
    entries = []
    for _ in range(n_entries):
        (name_len,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos : pos + name_len]).decode()
        pos += name_len
        (rank,) = struct.unpack_from("<I", view, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", view, pos)
        pos += 4 * rank
        (offset,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        entries.append((name, shape, offset))
    (payload_len,) = struct.unpack_from("<Q", view, pos)
    pos += 8
    payload = view[pos : pos + payload_len]

    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        value = flat.reshape(shape).copy()
        if name.endswith((".running_mean", ".running_var")):
            stats[name] = value
        else:
            params[name] = value
    return CompressorNet(config, params, stats)
