"""The decoder network: embedding, pre-norm encoder layers, output head.

Two attention variants share everything else:

- ``unified``: one learnable logit matrix A_l and one memory matrix V_l per
  layer, shared by every head, with the code's sparse mask added before the
  softmax.
- ``vanilla``: per-head W^Q/W^K/W^V scaled dot-product attention, kept as a
  baseline and as the source of attention dumps for analysis.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from fnmatch import fnmatch
from pathlib import Path

import numpy as np

from uecct import tensor as T
from uecct.channel import LlrVector, postprocess, preprocess, standardize
from uecct.checkpoint import load_checkpoint, save_checkpoint
from uecct.config import ModelConfig
from uecct.errors import ConfigError, DataError
from uecct.gf2core import CodeSpec
from uecct.maskgen import NEG_INF, build_extended, build_mask, pad_mask
from uecct.registry import CodeRegistry
from uecct.tensor import ActiveIndex, Tensor

logger = logging.getLogger(__name__)

VARIANTS = ("unified", "vanilla")

# Named freeze selections for fine-tuning
FREEZE_PRESETS: dict[str, tuple[str, ...]] = {
    "memory": ("*.A_l", "*.V_l"),
    "encoder": ("embed", "layer*"),
    "head": ("head",),
}


# =============================================================================
# Instrumentation
# =============================================================================


@dataclass
class MacTally:
    """Multiply-accumulate counts of one or more forward passes, by component."""

    counts: dict[str, int] = field(default_factory=dict)

    def add(self, kind: str, amount: int) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + int(amount)

    def get(self, kind: str) -> int:
        return self.counts.get(kind, 0)

    @property
    def total(self) -> int:
        # attention.core_dense is the dense baseline count, not work done
        return sum(v for k, v in self.counts.items() if k != "attention.core_dense")


@dataclass
class AttentionRecorder:
    """Per-layer attention probabilities (B, H, N, cols) and, for vanilla, raw Q·Kᵀ."""

    attention: list[np.ndarray] = field(default_factory=list)
    scores: list[np.ndarray] = field(default_factory=list)


# =============================================================================
# Building blocks
# =============================================================================


def embed(features, W: Tensor) -> Tensor:
    """Row i of the output is x_i · W_i, i.e. diag(x) · W, for each sample."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.shape[-1] != W.shape[0]:
        raise DataError(f"embed: input length {x.shape[-1]} does not match W rows {W.shape[0]}")
    return x.reshape(x.shape + (1,)) * W


def split_heads(X: Tensor, heads: int) -> Tensor:
    """(B, N, H·d_k) -> (B, H, N, d_k)."""
    B, N, d_h = X.shape
    return X.reshape(B, N, heads, d_h // heads).transpose(0, 2, 1, 3)


def merge_heads(X: Tensor) -> Tensor:
    """(B, H, N, d_k) -> (B, N, H·d_k)."""
    B, H, N, d_k = X.shape
    return X.transpose(0, 2, 1, 3).reshape(B, N, H * d_k)


def unified_attention(
    X: Tensor,
    A_l: Tensor,
    V_l: Tensor,
    masks: np.ndarray | None = None,
    *,
    sparse: bool = True,
    macs: MacTally | None = None,
) -> tuple[Tensor, Tensor]:
    """softmax(A_l + M) · (V_lᵀ X_h) for every head h.

    ``X`` is (B, H, N, d_k); ``masks`` is a (B, N, d_l) additive stack, one
    padded mask per sample. The single attention matrix per sample is
    broadcast across heads. Returns the (B, H, N, d_k) output and the
    (B, 1, N, d_l) probabilities.
    """
    B, H, N, d_k = X.shape
    d_l = A_l.shape[1]
    if A_l.shape != (N, d_l) or V_l.shape != (N, d_l):
        raise DataError(f"unified_attention: A_l {A_l.shape} / V_l {V_l.shape} do not fit N={N}")
    if masks is None:
        masks = np.zeros((B, N, d_l))
    masks = np.asarray(masks, dtype=T.DTYPE)
    if masks.shape != (B, N, d_l):
        raise DataError(f"unified_attention: mask stack {masks.shape} does not match A_l {A_l.shape}")

    probs = T.softmax(A_l.reshape(1, 1, N, d_l), mask=masks[:, None, :, :])
    memory = T.matmul(T.transpose(V_l).reshape(1, 1, d_l, N), X)  # (B, H, d_l, d_k)

    if sparse:
        active = ActiveIndex.from_masks(masks)
        out = T.sparse_attend(probs, memory, active)
        core = len(active) * d_k * H
    else:
        out = T.matmul(probs, memory)
        core = B * N * d_l * d_k * H
    if macs is not None:
        macs.add("attention.memory", B * H * d_l * N * d_k)
        macs.add("attention.core", core)
        macs.add("attention.core_dense", B * N * d_l * d_k * H)
    return out, probs


def vanilla_mha(
    X: Tensor,
    Wq: Tensor,
    Wk: Tensor,
    Wv: Tensor,
    Wo: Tensor,
    *,
    key_mask: np.ndarray | None = None,
    macs: MacTally | None = None,
    recorder: AttentionRecorder | None = None,
) -> Tensor:
    """Scaled dot-product multi-head attention on (B, N, H·d_k) input.

    Projections are square per head: W^Q, W^K, W^V are (H, d_k, d_k).
    ``key_mask`` is an optional additive (B, N) mask over keys.
    """
    H, d_k, d_k2 = Wq.shape
    if d_k != d_k2 or Wk.shape != Wq.shape or Wv.shape != Wq.shape:
        raise DataError(f"vanilla_mha: projections must be (H, d_k, d_k), got {Wq.shape}, {Wk.shape}, {Wv.shape}")
    B, N, d_h = X.shape
    if d_h != H * d_k or Wo.shape != (d_h, d_h):
        raise DataError(f"vanilla_mha: input width {d_h} and Wo {Wo.shape} must equal H·d_k={H * d_k}")

    Xh = split_heads(X, H)
    Q, K, V = Xh @ Wq, Xh @ Wk, Xh @ Wv
    raw = T.matmul(Q, T.swapaxes(K, -1, -2))  # (B, H, N, N)
    mask = None if key_mask is None else np.asarray(key_mask, dtype=T.DTYPE)[:, None, None, :]
    probs = T.softmax(T.scale(raw, 1.0 / math.sqrt(d_k)), mask=mask)
    out = merge_heads(T.matmul(probs, V)) @ Wo

    if recorder is not None:
        recorder.attention.append(np.array(probs.data))
        recorder.scores.append(np.array(raw.data))
    if macs is not None:
        macs.add("attention.qkv", 3 * B * H * N * d_k * d_k)
        macs.add("attention.scores", B * H * N * N * d_k)
        macs.add("attention.core", B * H * N * N * d_k)
        macs.add("attention.core_dense", B * H * N * N * d_k)
        macs.add("attention.output", B * N * d_h * d_h)
    return out


def feed_forward(X: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return T.relu(X @ w1 + b1) @ w2 + b2


def encoder_layer(X: Tensor, params: dict[str, Tensor], attend) -> Tensor:
    """Pre-norm residual block.

    X1 = Attn(LN(X)) + X; X2 = FFN(LN(X1)) + X1. ``attend`` maps the
    normalized (B, N, d_h) input to the attention output of the same shape.
    """
    h = T.layer_norm(X, params["ln1.gamma"], params["ln1.beta"])
    X1 = attend(h) + X
    h2 = T.layer_norm(X1, params["ln2.gamma"], params["ln2.beta"])
    return feed_forward(h2, params["ffn.w1"], params["ffn.b1"], params["ffn.w2"], params["ffn.b2"]) + X1


# =============================================================================
# Model
# =============================================================================


class UecctModel:
    """Parameters plus per-code mask cache for a fixed (N_max, S_max) padding."""

    def __init__(
        self,
        config: ModelConfig,
        n_max: int,
        s_max: int,
        rng: np.random.Generator | None = None,
        code_names: Sequence[str] = (),
    ):
        if config.variant not in VARIANTS:
            raise ConfigError(f"Unknown model variant {config.variant!r}; expected one of {', '.join(VARIANTS)}")
        self.config = config
        self.n_max = n_max
        self.s_max = s_max
        self.seq_len = n_max + s_max
        self.d_l = config.d_l if config.d_l is not None else s_max
        if config.variant == "unified" and config.use_mask and self.d_l < s_max:
            raise ConfigError(f"model.d_l={self.d_l} is smaller than S_max={s_max}; the mask needs d_l >= S_max")
        self.code_names = list(code_names)
        self.params: dict[str, Tensor] = {}
        self._masks: dict[str, np.ndarray] = {}
        self._init_params(rng if rng is not None else np.random.default_rng(0))

    # -- parameters -----------------------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        N, d_h, d_f, d_l = self.seq_len, cfg.d_h, cfg.ffn_dim, self.d_l
        p = self.params

        def weight(name, shape, fan_in):
            p[name] = T.parameter(shape, rng, fan_in=fan_in, name=name)

        def zero(name, shape):
            p[name] = T.zeros(shape, name=name)

        weight("embed.W", (N, d_h), 1)
        for i in range(cfg.layers):
            pre = f"layer{i}."
            if cfg.variant == "unified":
                weight(pre + "A_l", (N, d_l), d_l)
                weight(pre + "V_l", (N, d_l), N)
            else:
                for proj in ("Wq", "Wk", "Wv"):
                    weight(pre + proj, (cfg.heads, cfg.d_k, cfg.d_k), cfg.d_k)
            weight(pre + "Wo", (d_h, d_h), d_h)
            weight(pre + "ffn.w1", (d_h, d_f), d_h)
            zero(pre + "ffn.b1", (d_f,))
            weight(pre + "ffn.w2", (d_f, d_h), d_f)
            zero(pre + "ffn.b2", (d_h,))
            for ln in ("ln1", "ln2"):
                p[pre + ln + ".gamma"] = T.ones((d_h,), name=pre + ln + ".gamma")
                zero(pre + ln + ".beta", (d_h,))
        weight("head.fc1.w", (d_h, 1), d_h)
        zero("head.fc1.b", (1,))
        weight("head.fc2.w", (N, self.n_max), N)
        zero("head.fc2.b", (self.n_max,))

    def layer_params(self, i: int) -> dict[str, Tensor]:
        pre = f"layer{i}."
        return {name[len(pre):]: t for name, t in self.params.items() if name.startswith(pre)}

    def trainable(self, freeze: Sequence[str] = ()) -> dict[str, Tensor]:
        """Parameters matched by none of the ``freeze`` patterns.

        A pattern matches a name exactly, as a dotted prefix (``layer0``) or
        as a glob (``*.A_l``).
        """
        patterns = [FREEZE_PRESETS.get(f, (f,)) for f in freeze]
        flat = [p for group in patterns for p in group]

        def frozen(name: str) -> bool:
            return any(name == p or name.startswith(p + ".") or fnmatch(name, p) for p in flat)

        return {name: t for name, t in self.params.items() if not frozen(name)}

    def parameter_count(self, freeze: Sequence[str] = ()) -> int:
        return sum(t.data.size for t in self.trainable(freeze).values())

    # -- masks ----------------------------------------------------------------

    def registry_for(self, code: CodeSpec) -> CodeRegistry:
        return CodeRegistry([code], n_max=self.n_max, s_max=self.s_max)

    def code_mask(self, code: CodeSpec) -> np.ndarray:
        """The code's padded (N, d_l) mask; all zeros when masking is off."""
        cached = self._masks.get(code.name)
        if cached is not None and cached.shape == (self.seq_len, self.d_l):
            return cached
        if not self.config.use_mask:
            values = np.zeros((self.seq_len, self.d_l))
        else:
            padded = pad_mask(build_mask(build_extended(code.H)), self.n_max, self.s_max).values
            values = np.full((self.seq_len, self.d_l), NEG_INF)
            values[:, : self.s_max] = padded
        values.setflags(write=False)
        self._masks[code.name] = values
        return values

    def mask_stack(self, codes: Sequence[CodeSpec]) -> np.ndarray:
        return np.stack([self.code_mask(c) for c in codes])

    def slot_active(self, codes: Sequence[CodeSpec]) -> np.ndarray:
        """(B, N) True at input slots a sample's code actually fills."""
        out = np.zeros((len(codes), self.seq_len), dtype=bool)
        for b, code in enumerate(codes):
            out[b, : code.n] = True
            out[b, self.n_max : self.n_max + code.m] = True
        return out

    def output_active(self, codes: Sequence[CodeSpec]) -> np.ndarray:
        """(B, n_max) True at the first n outputs of each sample."""
        out = np.zeros((len(codes), self.n_max), dtype=bool)
        for b, code in enumerate(codes):
            out[b, : code.n] = True
        return out

    # -- forward ----------------------------------------------------------------

    def forward(
        self,
        features: np.ndarray,
        codes: Sequence[CodeSpec],
        *,
        macs: MacTally | None = None,
        recorder: AttentionRecorder | None = None,
    ) -> Tensor:
        """Standardized (B, N) features -> (B, n_max) flip probabilities."""
        features = np.asarray(features, dtype=T.DTYPE)
        if features.ndim != 2 or features.shape[1] != self.seq_len:
            raise DataError(f"forward: expected (batch, {self.seq_len}) features, got {features.shape}")
        if len(codes) != features.shape[0]:
            raise DataError(f"forward: {len(codes)} codes for a batch of {features.shape[0]}")
        cfg = self.config
        B, N, d_h = features.shape[0], self.seq_len, cfg.d_h

        X = embed(features, self.params["embed.W"])
        if macs is not None:
            macs.add("embed", B * N * d_h)

        if cfg.variant == "unified":
            masks = self.mask_stack(codes)
        else:
            key_mask = np.where(self.slot_active(codes), 0.0, NEG_INF)

        for i in range(cfg.layers):
            lp = self.layer_params(i)
            if cfg.variant == "unified":

                def attend(h, lp=lp):
                    out, probs = unified_attention(
                        split_heads(h, cfg.heads),
                        lp["A_l"],
                        lp["V_l"],
                        masks,
                        sparse=cfg.sparse_kernel and cfg.use_mask,
                        macs=macs,
                    )
                    if recorder is not None:
                        recorder.attention.append(
                            np.broadcast_to(probs.data, (B, cfg.heads, N, self.d_l)).copy()
                        )
                    if macs is not None:
                        macs.add("attention.output", B * N * d_h * d_h)
                    return merge_heads(out) @ lp["Wo"]

            else:

                def attend(h, lp=lp):
                    return vanilla_mha(
                        h, lp["Wq"], lp["Wk"], lp["Wv"], lp["Wo"],
                        key_mask=key_mask, macs=macs, recorder=recorder,
                    )

            X = encoder_layer(X, lp, attend)
            if macs is not None:
                macs.add("ffn", 2 * B * N * d_h * cfg.ffn_dim)

        o = (X @ self.params["head.fc1.w"] + self.params["head.fc1.b"]).reshape(B, N)
        o = o @ self.params["head.fc2.w"] + self.params["head.fc2.b"]
        if macs is not None:
            macs.add("head", B * (N * d_h + N * self.n_max))
        return T.sigmoid(o)

    __call__ = forward

    # -- persistence ------------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_max": self.n_max,
            "s_max": self.s_max,
            "code_names": self.code_names,
        }

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        """Write every parameter under its dotted name plus the model metadata.

        Names are ``<owner>.<component>.<leaf>``: ``layer{i}.`` prefixes
        per-layer tensors, and the leaf is ``gamma``/``beta`` for layer
        norms or ``w``/``b`` for dense layers (``layer0.ln1.gamma``,
        ``head.fc1.w``). Attention weights carry no leaf (``layer0.A_l``).
        Freeze patterns match on dotted prefixes, so ``head.fc1`` covers
        both ``head.fc1.w`` and ``head.fc1.b``.
        """
        meta = self.metadata()
        if extra:
            meta.update(extra)
        return save_checkpoint(path, {k: t.data for k, t in self.params.items()}, meta)

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        problems = []
        missing = sorted(set(self.params) - set(arrays))
        extra = sorted(set(arrays) - set(self.params))
        if missing:
            problems.append(f"missing tensors: {', '.join(missing)}")
        if extra:
            problems.append(f"unexpected tensors: {', '.join(extra)}")
        for name, t in self.params.items():
            if name in arrays and arrays[name].shape != t.shape:
                problems.append(f"{name}: checkpoint {arrays[name].shape} vs model {t.shape}")
        if problems:
            raise DataError("Checkpoint does not fit the model:\n" + "\n".join(f"  - {p}" for p in problems))
        for name, t in self.params.items():
            t.data = np.array(arrays[name], dtype=T.DTYPE)
            t.grad = None
        self._masks.clear()

    @classmethod
    def load(cls, path: str | Path) -> tuple[UecctModel, dict]:
        arrays, meta = load_checkpoint(path)
        try:
            config = ModelConfig(**meta["config"])
            model = cls(config, int(meta["n_max"]), int(meta["s_max"]), code_names=meta.get("code_names", ()))
        except (KeyError, TypeError) as exc:
            raise DataError(f"Checkpoint {path} has malformed metadata: {exc}") from exc
        model.load_state(arrays)
        logger.info(
            "Loaded %s model from %s (N_max=%d, S_max=%d, %d parameters)",
            config.variant, path, model.n_max, model.s_max, model.parameter_count(),
        )
        return model, meta


# =============================================================================
# Decoding
# =============================================================================


def hard_flips(z_hat) -> np.ndarray:
    """1 where the flip probability is strictly above 0.5; 0.5 itself means no flip."""
    return (np.asarray(z_hat) > 0.5).astype(np.uint8)


def decode(model: UecctModel, code: CodeSpec, y) -> tuple[np.ndarray, np.ndarray]:
    """Run the full pipeline on one word (n,) or a batch (B, n).

    Returns the flip probabilities z_hat truncated to n and the decided
    codeword bits.
    """
    values = y.values if isinstance(y, LlrVector) else np.asarray(y, dtype=T.DTYPE)
    single = values.ndim == 1
    batch = values[None, :] if single else values
    std = standardize(model.registry_for(code), code, preprocess(code, batch))
    with T.no_grad():
        z_hat = model.forward(std.features, [code] * batch.shape[0]).data[:, : code.n]
    x_hat = postprocess(batch, 1.0 - 2.0 * hard_flips(z_hat))
    if single:
        return z_hat[0], x_hat[0]
    return z_hat, x_hat
