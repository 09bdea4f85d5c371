"""Model families built from declarative configs.

Four kinds share one construction path:

* ``fcn``   - dense(256) -> relu -> dropout, repeated per ``dense_units``,
  then a softmax head over the raw representation vector.
* ``cnn``   - the vector reshaped to one channel, two conv blocks
  (conv1d -> batchnorm -> relu -> maxpool), dropout, flatten, then the same
  dense stack and head.
* ``finder`` - two parallel cnn trunks through flatten, each linearly
  projected to ``projection_dim``; the projections (optionally scaled by a
  learnable sigmoid gate) feed the divergence alignment loss, then are
  concatenated into a single dense softmax head.
* ``concat_fusion`` - the identical graph; only the training objective
  differs (no divergence term), so equal seeds give equal parameter sets.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import CheckpointFormatError, ConfigError, ContractError

FUSION_KINDS = ("finder", "concat_fusion")
ALL_KINDS = ("fcn", "cnn") + FUSION_KINDS

CKPT_MAGIC = b"FNDRCKPT"
CKPT_VERSION = 1


@dataclass
class ConvBlock:
    filters: int
    kernel: int
    pool: int


@dataclass
class ModelConfig:
    kind: str
    input_dims: list[int]
    n_classes: int
    dense_units: list[int] = field(default_factory=lambda: [256, 128, 64])
    conv_blocks: list[ConvBlock] = field(
        default_factory=lambda: [ConvBlock(256, 3, 2), ConvBlock(128, 3, 2)])
    projection_dim: int = 120
    dropout_conv: float = 0.3
    dropout_dense: float = 0.5
    padding: str = "same"
    gate_enabled: bool = False
    rd_normalization: str = "relu_eps"

    def __post_init__(self):
        self.conv_blocks = [b if isinstance(b, ConvBlock) else ConvBlock(**b)
                            for b in self.conv_blocks]
        self.validate()

    def validate(self) -> None:
        if self.kind not in ALL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {ALL_KINDS}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        want_views = 2 if self.kind in FUSION_KINDS else 1
        if len(self.input_dims) != want_views:
            raise ConfigError(
                f"kind {self.kind!r} takes exactly {want_views} input view(s), "
                f"got input_dims={self.input_dims}")
        if any(d <= 0 for d in self.input_dims):
            raise ConfigError(f"input_dims must be positive, got {self.input_dims}")
        for frac, name in ((self.dropout_conv, "dropout_conv"), (self.dropout_dense, "dropout_dense")):
            if not 0.0 <= frac < 1.0:
                raise ConfigError(f"{name} must be in [0,1), got {frac}")
        if self.padding not in ("same", "valid"):
            raise ConfigError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.rd_normalization not in ("relu_eps", "softmax"):
            raise ConfigError(f"rd_normalization must be 'relu_eps' or 'softmax', got {self.rd_normalization!r}")
        if self.projection_dim <= 0 or any(u <= 0 for u in self.dense_units):
            raise ConfigError("projection_dim and dense_units must be positive")
        for blk in self.conv_blocks:
            if blk.filters <= 0 or blk.kernel <= 0 or blk.pool <= 0:
                raise ConfigError(f"invalid conv block {blk}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def conv_output_length(dim: int, blocks: list[ConvBlock], padding: str) -> int:
    """Length after the conv/pool stack for a 1-channel input of width ``dim``."""
    length = dim
    for blk in blocks:
        if padding == "valid":
            if blk.kernel > length:
                raise ConfigError(
                    f"conv block kernel {blk.kernel} exceeds running length {length} "
                    f"(input dim {dim}, valid padding)")
            length = length - blk.kernel + 1
        length = length // blk.pool
        if length < 1:
            raise ConfigError(f"input dim {dim} collapses to zero length in conv stack")
    return length


@dataclass
class ForwardOutput:
    probs: Tensor                      # (batch, n_classes), rows sum to 1
    projections: tuple[Tensor, Tensor] | None  # fusion kinds only
    penultimate: Tensor                # features feeding the head


class Model:
    """A built network: named parameters, batchnorm states, train/eval mode."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor],
                 bn_states: dict[str, BatchNormState]):
        self.config = config
        self.params = params
        self.bn_states = bn_states
        self.mode = "train"

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "eval"
        return self

    # -- construction ------------------------------------------------------

    @staticmethod
    def build(config: ModelConfig, seed: int) -> "Model":
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        bn_states: dict[str, BatchNormState] = {}

        def glorot(shape, fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=shape).astype(np.float32)

        def add_dense(name, d_in, d_out):
            params[f"{name}.w"] = Tensor(glorot((d_in, d_out), d_in, d_out), requires_grad=True)
            params[f"{name}.b"] = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True)

        def add_trunk(prefix, dim):
            c_in = 1
            for i, blk in enumerate(config.conv_blocks):
                params[f"{prefix}.conv{i}.w"] = Tensor(
                    glorot((blk.filters, c_in, blk.kernel), c_in * blk.kernel, blk.filters * blk.kernel),
                    requires_grad=True)
                params[f"{prefix}.conv{i}.b"] = Tensor(np.zeros(blk.filters, dtype=np.float32), requires_grad=True)
                params[f"{prefix}.bn{i}.gamma"] = Tensor(np.ones(blk.filters, dtype=np.float32), requires_grad=True)
                params[f"{prefix}.bn{i}.beta"] = Tensor(np.zeros(blk.filters, dtype=np.float32), requires_grad=True)
                bn_states[f"{prefix}.bn{i}"] = BatchNormState(blk.filters)
                c_in = blk.filters
            return c_in * conv_output_length(dim, config.conv_blocks, config.padding)

        def add_dense_stack(prefix, d_in):
            for i, units in enumerate(config.dense_units):
                add_dense(f"{prefix}.dense{i}", d_in, units)
                d_in = units
            return d_in

        if config.kind == "fcn":
            width = add_dense_stack("fcn", config.input_dims[0])
            add_dense("head", width, config.n_classes)
        elif config.kind == "cnn":
            flat = add_trunk("branch0", config.input_dims[0])
            width = add_dense_stack("cnn", flat)
            add_dense("head", width, config.n_classes)
        else:  # finder / concat_fusion share the graph
            flats = []
            for v, dim in enumerate(config.input_dims):
                flats.append(add_trunk(f"branch{v}", dim))
            for v, flat in enumerate(flats):
                add_dense(f"branch{v}.proj", flat, config.projection_dim)
                if config.gate_enabled:
                    params[f"branch{v}.gate"] = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
            add_dense("head", 2 * config.projection_dim, config.n_classes)

        return Model(config, params, bn_states)

    # -- forward -----------------------------------------------------------

    def _dense(self, name: str, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def _trunk(self, prefix: str, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        batch = x.shape[0]
        h = ad.reshape(x, (batch, 1, x.shape[1]))
        for i in range(len(self.config.conv_blocks)):
            h = ad.conv1d(h, self.params[f"{prefix}.conv{i}.w"], self.params[f"{prefix}.conv{i}.b"],
                          padding=self.config.padding)
            h = ad.batchnorm1d(h, self.params[f"{prefix}.bn{i}.gamma"], self.params[f"{prefix}.bn{i}.beta"],
                               self.bn_states[f"{prefix}.bn{i}"], self.mode)
            h = ad.relu(h)
            h = ad.maxpool1d(h, self.config.conv_blocks[i].pool)
        if self.mode == "train" and self.config.dropout_conv > 0:
            h = ad.dropout(h, self.config.dropout_conv, rng)
        return ad.reshape(h, (batch, -1))

    def _dense_stack(self, prefix: str, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        h = x
        for i in range(len(self.config.dense_units)):
            h = ad.relu(self._dense(f"{prefix}.dense{i}", h))
            if self.mode == "train" and self.config.dropout_dense > 0:
                h = ad.dropout(h, self.config.dropout_dense, rng)
        return h

    def forward(self, views: list[Tensor], rng: np.random.Generator | None = None) -> ForwardOutput:
        """Run the network. ``rng`` drives dropout and is required in train mode
        when any dropout fraction is positive."""
        cfg = self.config
        if len(views) != len(cfg.input_dims):
            raise ContractError(
                f"model kind {cfg.kind!r} expects {len(cfg.input_dims)} view(s), got {len(views)}")
        for v, (t, dim) in enumerate(zip(views, cfg.input_dims)):
            if t.data.ndim != 2 or t.shape[1] != dim:
                raise ContractError(
                    f"view {v}: expected shape (batch, {dim}), got {t.shape}")
        needs_rng = self.mode == "train" and (cfg.dropout_conv > 0 or cfg.dropout_dense > 0)
        if needs_rng and rng is None:
            raise ContractError("train-mode forward needs an rng for dropout")

        if cfg.kind == "fcn":
            pen = self._dense_stack("fcn", views[0], rng)
            probs = ad.softmax(self._dense("head", pen))
            return ForwardOutput(probs, None, pen)
        if cfg.kind == "cnn":
            flat = self._trunk("branch0", views[0], rng)
            pen = self._dense_stack("cnn", flat, rng)
            probs = ad.softmax(self._dense("head", pen))
            return ForwardOutput(probs, None, pen)

        projections = []
        for v, view in enumerate(views):
            flat = self._trunk(f"branch{v}", view, rng)
            proj = self._dense(f"branch{v}.proj", flat)
            if cfg.gate_enabled:
                gate = ad.sigmoid(self.params[f"branch{v}.gate"])
                proj = ad.mul(proj, gate)
            projections.append(proj)
        pen = ad.concat(projections, axis=1)
        probs = ad.softmax(self._dense("head", pen))
        return ForwardOutput(probs, (projections[0], projections[1]), pen)

    # -- introspection -----------------------------------------------------

    def count_parameters(self) -> int:
        """Scalar parameter count, batchnorm affine included, running stats excluded."""
        return int(sum(t.size for t in self.params.values()))

    def trainable(self) -> dict[str, Tensor]:
        return self.params

    def state_snapshot(self) -> tuple[dict[str, np.ndarray], dict[str, BatchNormState]]:
        return ({k: t.data.copy() for k, t in self.params.items()},
                {k: s.copy() for k, s in self.bn_states.items()})

    def restore_snapshot(self, snap) -> None:
        data, states = snap
        for k, arr in data.items():
            self.params[k].assign_(arr)
        self.bn_states = {k: s.copy() for k, s in states.items()}

    # -- serialization -----------------------------------------------------

    def save(self, path) -> None:
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<I", CKPT_VERSION))
        cfg_bytes = json.dumps(self.config.to_dict(), sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(cfg_bytes)))
        buf.write(cfg_bytes)

        entries: list[tuple[str, np.ndarray, bool]] = []
        for name in sorted(self.params):
            entries.append((name, self.params[name].data, False))
        for name in sorted(self.bn_states):
            st = self.bn_states[name]
            entries.append((f"{name}.running_mean", st.running_mean, True))
            entries.append((f"{name}.running_var", st.running_var, True))

        buf.write(struct.pack("<I", len(entries)))
        for name, arr, is_buffer in entries:
            nb = name.encode("utf-8")
            buf.write(struct.pack("<I", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<B", 1 if is_buffer else 0))
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        payload = buf.getvalue()
        digest = hashlib.sha256(payload).digest()[:8]
        with open(path, "wb") as fh:
            fh.write(payload)
            fh.write(digest)

    @staticmethod
    def load(path) -> "Model":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < len(CKPT_MAGIC) + 8:
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        payload, digest = raw[:-8], raw[-8:]
        if payload[:len(CKPT_MAGIC)] != CKPT_MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint file")
        if hashlib.sha256(payload).digest()[:8] != digest:
            raise CheckpointFormatError(f"{path}: checksum mismatch (corrupt or truncated)")

        view = memoryview(payload)
        pos = len(CKPT_MAGIC)

        def take(n: int) -> memoryview:
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointFormatError(f"{path}: truncated checkpoint body")
            chunk = view[pos:pos + n]
            pos += n
            return chunk

        def take_u32() -> int:
            return struct.unpack("<I", take(4))[0]

        version = take_u32()
        if version != CKPT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
        cfg_len = take_u32()
        try:
            config = ModelConfig.from_dict(json.loads(bytes(take(cfg_len)).decode("utf-8")))
        except (ValueError, TypeError, ConfigError) as exc:
            raise CheckpointFormatError(f"{path}: bad embedded config ({exc})") from exc

        model = Model.build(config, seed=0)
        n_entries = take_u32()
        seen: set[str] = set()
        for _ in range(n_entries):
            name_len = take_u32()
            try:
                name = bytes(take(name_len)).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointFormatError(f"{path}: undecodable entry name") from exc
            is_buffer = struct.unpack("<B", take(1))[0] != 0
            ndim = take_u32()
            if ndim > 8:
                raise CheckpointFormatError(f"{path}: implausible ndim {ndim} for {name!r}")
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).copy()
            seen.add(name)
            if is_buffer:
                stem, _, field_name = name.rpartition(".")
                st = model.bn_states.get(stem)
                if st is None or field_name not in ("running_mean", "running_var"):
                    raise CheckpointFormatError(f"{path}: unknown buffer {name!r}")
                if getattr(st, field_name).shape != arr.shape:
                    raise CheckpointFormatError(f"{path}: buffer {name!r} shape mismatch")
                setattr(st, field_name, arr)
            else:
                if name not in model.params:
                    raise CheckpointFormatError(f"{path}: unknown parameter {name!r}")
                if model.params[name].data.shape != tuple(shape):
                    raise CheckpointFormatError(
                        f"{path}: parameter {name!r} shape {tuple(shape)} does not match config")
                model.params[name].assign_(arr)
        expected = set(model.params) | {f"{k}.{f}" for k in model.bn_states
                                        for f in ("running_mean", "running_var")}
        missing = expected - seen
        if missing:
            raise CheckpointFormatError(f"{path}: missing entries {sorted(missing)[:3]}")
        if pos != len(view):
            raise CheckpointFormatError(f"{path}: trailing garbage after entries")
        model.eval()
        return model
