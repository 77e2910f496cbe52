"""The four network families.

* `GeneratorNet` - U-net with stride-2 conv encoder, transposed-conv
  decoder with skip concatenation, a pooled bottleneck embedding, and one
  dedicated linear head per attribute. The conditional-GAN noise source is
  dropout in the first decoder blocks: masks come from the training stream
  in train mode and from a per-call seed in eval mode.
* `DiscriminatorNet` - conditional patch discriminator over the channel
  concatenation of condition and candidate. With the default three
  stride-2 blocks (kernel 4, padding 1) plus a final kernel-3 valid conv,
  a 64x64 input yields a 6x6 logit map, each logit seeing a 38x38 patch.
* `FeatureNet` - small frozen conv stack used by the perceptual loss;
  weights are seed-initialized (optionally copied from a trained
  attribute predictor's trunk).
* `AttributePredictor` - conv trunk + per-attribute sigmoid outputs,
  trained separately on visible images and frozen during coupled training.

Generators use ReLU activations; discriminators use leaky ReLU (0.2).
Instance norm sits in every generator block except the first and last,
and in every discriminator block except the first.
"""

from __future__ import annotations

import numpy as np

from polvis.autograd import ShapeError, Tensor, concat
from polvis.config import ModelConfig
from polvis.nn import (
    Conv2d,
    ConvTranspose2d,
    InstanceNorm2d,
    Linear,
    Module,
    dropout,
    global_average_pool,
)


class GeneratorNet(Module):
    """Encoder-decoder translator with embedding and attribute heads.

    Encoder channels for base width b, depth D: b, 2b, ..., b*2^(D-1);
    the decoder mirrors them, with skip concatenation doubling the input
    channels of every block after the first. Condition spatial dims must
    be divisible by 2^D.
    """

    def __init__(self, in_ch: int, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        b, depth = cfg.gen_base, cfg.gen_depth
        enc_ch = [b * 2**i for i in range(depth)]
        self.depth = depth
        self.embed_dim = cfg.embed_dim
        self.n_attributes = cfg.n_attributes
        self.dropout_rate = cfg.dropout_rate
        self.dropout_blocks = cfg.dropout_blocks
        self.eval_dropout = cfg.eval_dropout

        self.enc = [
            Conv2d(in_ch if i == 0 else enc_ch[i - 1], enc_ch[i], 4, stride=2, padding=1, rng=rng, dtype=dtype)
            for i in range(depth)
        ]
        self.enc_norm = [
            InstanceNorm2d(enc_ch[i], dtype=dtype) if (cfg.gen_norm and i > 0) else None for i in range(depth)
        ]

        self.embed = Linear(enc_ch[-1], cfg.embed_dim, rng=rng, dtype=dtype)
        if cfg.attr_head_hidden > 0:
            self.attr_heads = [
                [Linear(cfg.embed_dim, cfg.attr_head_hidden, rng=rng, dtype=dtype),
                 Linear(cfg.attr_head_hidden, 1, rng=rng, dtype=dtype)]
                for _ in range(cfg.n_attributes)
            ]
        else:
            self.attr_heads = [Linear(cfg.embed_dim, 1, rng=rng, dtype=dtype) for _ in range(cfg.n_attributes)]

        dec_in = [enc_ch[-1]] + [2 * enc_ch[depth - 1 - i] for i in range(1, depth)]
        dec_out = [enc_ch[depth - 2 - i] for i in range(depth - 1)] + [1]
        self.dec = [
            ConvTranspose2d(dec_in[i], dec_out[i], 4, stride=2, padding=1, rng=rng, dtype=dtype)
            for i in range(depth)
        ]
        self.dec_norm = [
            InstanceNorm2d(dec_out[i], dtype=dtype) if (cfg.gen_norm and i < depth - 1) else None
            for i in range(depth)
        ]

    def forward(self, condition: Tensor, mode: str = "eval",
                rng: np.random.Generator = None, seed: int = 0):
        """Run the net; returns (synthesized image, embedding, attribute logits).

        Train mode draws dropout masks from `rng`; eval mode draws them
        from a generator seeded with `seed`, so identical seeds give
        bitwise identical outputs.
        """
        if condition.ndim != 4:
            raise ShapeError(f"expected NCHW condition, got {condition.shape}")
        h, w = condition.shape[2], condition.shape[3]
        if h % 2**self.depth or w % 2**self.depth:
            raise ShapeError(f"condition spatial dims {h}x{w} must be multiples of {2 ** self.depth}")
        if mode == "train":
            if rng is None:
                raise ValueError("train mode requires an rng for dropout")
            noise = rng
        elif mode == "eval":
            noise = np.random.Generator(np.random.PCG64(seed)) if self.eval_dropout else None
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

        skips = []
        x = condition
        for conv, norm in zip(self.enc, self.enc_norm):
            x = conv(x)
            if norm is not None:
                x = norm(x)
            x = x.relu()
            skips.append(x)

        z = self.embed(global_average_pool(x))
        if self.n_attributes and isinstance(self.attr_heads[0], list):
            logits = concat([h2(h1(z).relu()) for h1, h2 in self.attr_heads], axis=1)
        else:
            logits = concat([head(z) for head in self.attr_heads], axis=1)

        for i, (tconv, norm) in enumerate(zip(self.dec, self.dec_norm)):
            if i > 0:
                x = concat([x, skips[self.depth - 1 - i]], axis=1)
            x = tconv(x)
            if norm is not None:
                x = norm(x)
            if i == self.depth - 1:
                x = x.tanh()
            else:
                x = x.relu()
                if i < self.dropout_blocks and noise is not None:
                    x = dropout(x, self.dropout_rate, noise)
        return x, z, logits


class DiscriminatorNet(Module):
    """Conditional patch discriminator.

    Logit map side length for input size S with B stride-2 blocks:
    S / 2^B - 2 (the final conv is kernel 3, stride 1, no padding).
    """

    def __init__(self, cond_ch: int, cand_ch: int, cfg: ModelConfig,
                 rng: np.random.Generator, dtype=np.float32):
        b, blocks = cfg.disc_base, cfg.disc_blocks
        chans = [b * 2**i for i in range(blocks)]
        in_ch = cond_ch + cand_ch
        self.blocks = [
            Conv2d(in_ch if i == 0 else chans[i - 1], chans[i], 4, stride=2, padding=1, rng=rng, dtype=dtype)
            for i in range(blocks)
        ]
        self.norms = [
            InstanceNorm2d(chans[i], dtype=dtype) if (cfg.disc_norm and i > 0) else None for i in range(blocks)
        ]
        self.head = Conv2d(chans[-1], 1, 3, stride=1, padding=0, rng=rng, dtype=dtype)

    def forward(self, condition: Tensor, candidate: Tensor) -> Tensor:
        if condition.shape[0] != candidate.shape[0] or condition.shape[2:] != candidate.shape[2:]:
            raise ShapeError(
                f"condition {condition.shape} and candidate {candidate.shape} must share batch and spatial dims"
            )
        x = concat([condition, candidate], axis=1)
        for block, norm in zip(self.blocks, self.norms):
            x = block(x)
            if norm is not None:
                x = norm(x)
            x = x.leaky_relu(0.2)
        return self.head(x)

    __call__ = forward


class FeatureNet(Module):
    """Frozen three-block conv feature extractor for the perceptual loss.

    For input HxW the feature map is (4*base, H/8, W/8). Construction
    freezes the parameters; they stay immutable for the net's lifetime.
    """

    def __init__(self, in_ch: int, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        b = cfg.feature_base
        chans = [b, 2 * b, 4 * b]
        self.convs = [
            Conv2d(in_ch if i == 0 else chans[i - 1], chans[i], 3, stride=2, padding=1,
                   rng=rng, init="he", dtype=dtype)
            for i in range(3)
        ]
        self.freeze()

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = conv(x).relu()
        return x

    __call__ = forward

    def copy_trunk_from(self, predictor: "AttributePredictor") -> None:
        """Adopt the first three trunk blocks of a trained predictor."""
        for mine, theirs in zip(self.convs, predictor.trunk[:3]):
            if mine.weight.shape != theirs.weight.shape:
                raise ShapeError(
                    f"trunk mismatch: {mine.weight.shape} vs {theirs.weight.shape}; "
                    "feature_base must equal predictor_base to share weights"
                )
            mine.weight.data[...] = theirs.weight.data
            mine.bias.data[...] = theirs.bias.data


class AttributePredictor(Module):
    """Conv trunk + flatten + linear scores, one sigmoid output per attribute."""

    def __init__(self, in_ch: int, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        b = cfg.predictor_base
        chans = [b, 2 * b, 4 * b, 4 * b]
        self.input_hw = (cfg.image_size, cfg.image_size)
        self.trunk = [
            Conv2d(in_ch if i == 0 else chans[i - 1], chans[i], 3, stride=2, padding=1,
                   rng=rng, init="he", dtype=dtype)
            for i in range(4)
        ]
        feat_hw = cfg.image_size // 16
        self.head = Linear(chans[-1] * feat_hw * feat_hw, cfg.n_attributes, rng=rng, init="he", dtype=dtype)

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or (x.shape[2], x.shape[3]) != self.input_hw:
            raise ShapeError(f"predictor expects Nx?x{self.input_hw[0]}x{self.input_hw[1]} input, got {x.shape}")
        for conv in self.trunk:
            x = conv(x).relu()
        n = x.shape[0]
        return self.head(x.reshape(n, -1))

    def __call__(self, x: Tensor) -> Tensor:
        """Attribute probabilities in (0, 1)."""
        return self.logits(x).sigmoid()


def build_coupled_generators(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
    """Visible-branch (1-channel) and polarimetric-branch (3-channel) generators.

    The contrastive coupling needs equal embedding dimensions on both
    branches, so that is checked here at construction time.
    """
    g_vis = GeneratorNet(1, cfg, rng, dtype)
    g_pol = GeneratorNet(3, cfg, rng, dtype)
    if g_vis.embed_dim != g_pol.embed_dim:
        raise ShapeError(f"embedding dims differ: {g_vis.embed_dim} vs {g_pol.embed_dim}")
    return g_vis, g_pol
