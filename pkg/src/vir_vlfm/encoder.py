"""Two-stream toy ViT with bottleneck adapters and fused (cross-stream) adapters.

Both images share one set of backbone weights. The two streams travel stacked
along the batch axis (``[2B, n+1, d]``, image 1 first) so the shared blocks run
once; fused adapters split the stack, mix, and restack it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import LayerNorm, Linear, Module, Parameter, Tensor, ops
from .autodiff.nn import Attention


@dataclass
class EncoderConfig:
    image_size: int = 64
    patch: int = 8
    width: int = 64
    depth: int = 8
    heads: int = 4
    bottleneck: int = 16
    fused_every: int | None = 2
    alpha: float = 0.5
    adapters: bool = True
    fused_adapters: bool = True

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ValueError(f"image size {self.image_size} not divisible by patch {self.patch}")
        if self.fused_every is not None and self.fused_every < 1:
            raise ValueError("fused_every must be >= 1 or None")
        if self.bottleneck >= self.width:
            raise ValueError("adapter bottleneck must be narrower than the model width")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    def is_fused(self, block_index: int) -> bool:
        return (self.fused_adapters and self.fused_every is not None
                and (block_index + 1) % self.fused_every == 0)


class Adapter(Module):
    """``up(gelu(down(x))) + beta * x`` with ``up`` zero-initialized."""

    def __init__(self, d: int, d_b: int, beta: float, rng: np.random.Generator):
        super().__init__()
        self.beta = beta
        self.down = Parameter(rng.uniform(-1, 1, (d, d_b)) / np.sqrt(d))
        self.up = Parameter(np.zeros((d_b, d)))

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.gelu(x @ self.down) @ self.up
        return y + ops.scale(x, self.beta) if self.beta else y


class FusedAdapter(Module):
    """Dual-input, dual-output adapter mixing both streams through one projection."""

    def __init__(self, d: int, d_b: int, beta: float, rng: np.random.Generator):
        super().__init__()
        self.beta = beta
        self.down1 = Parameter(rng.uniform(-1, 1, (d, d_b)) / np.sqrt(d))
        self.down2 = Parameter(rng.uniform(-1, 1, (d, d_b)) / np.sqrt(d))
        self.mix = Parameter(rng.uniform(-1, 1, (2 * d_b, d_b)) / np.sqrt(2 * d_b))
        self.up1 = Parameter(np.zeros((d_b, d)))
        self.up2 = Parameter(np.zeros((d_b, d)))

    def __call__(self, x1: Tensor, x2: Tensor) -> tuple[Tensor, Tensor]:
        h = ops.concat([ops.gelu(x1 @ self.down1), ops.gelu(x2 @ self.down2)], axis=-1)
        joint = h @ self.mix
        y1, y2 = joint @ self.up1, joint @ self.up2
        if self.beta:
            y1 = y1 + ops.scale(x1, self.beta)
            y2 = y2 + ops.scale(x2, self.beta)
        return y1, y2


class PatchEmbed(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        fan_in = 3 * cfg.patch * cfg.patch
        self.proj = Linear(fan_in, cfg.width, rng)
        self.cls = Parameter(rng.normal(0, 0.02, cfg.width))
        self.pos = Parameter(rng.normal(0, 0.02, (cfg.tokens + 1, cfg.width)))

    def patches(self, images: np.ndarray) -> np.ndarray:
        """``[B, 3, H, W]`` -> ``[B, n, 3*r*r]``, patches in row-major grid order."""
        c = self.cfg
        if images.ndim != 4 or images.shape[1:] != (3, c.image_size, c.image_size):
            raise ValueError(f"expected images [B, 3, {c.image_size}, {c.image_size}], got {images.shape}")
        b, g, r = images.shape[0], c.grid, c.patch
        x = images.reshape(b, 3, g, r, g, r).transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(b, g * g, 3 * r * r)

    def __call__(self, images: np.ndarray) -> Tensor:
        tokens = self.proj(Tensor(self.patches(images)))
        cls = ops.expand(ops.reshape(self.cls, (1, -1)), tokens.shape[0])
        return ops.add(ops.concat([cls, tokens], axis=1), self.pos)


class Block(Module):
    """``x~ = LN(Adp1(MSA(LN(x))) + x)``, ``x = MLP(x~) + alpha*Adp2(x~)``.

    ``MLP(x~) = x~ + W2 gelu(W1 x~)`` carries its own residual, so with zero
    up-projections the block is exactly the adapter-free block.
    """

    def __init__(self, cfg: EncoderConfig, index: int, rng: np.random.Generator):
        super().__init__()
        d = cfg.width
        self.alpha = cfg.alpha
        self.fused = cfg.is_fused(index)
        self.ln1 = LayerNorm(d)
        self.attn = Attention(d, d, cfg.heads, rng)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, 4 * d, rng)
        self.fc2 = Linear(4 * d, d, rng)
        self.adp1 = self.adp2 = None
        if self.fused:
            self.fadp1 = FusedAdapter(d, cfg.bottleneck, 1.0, rng)
            self.fadp2 = FusedAdapter(d, cfg.bottleneck, 0.0, rng)
        elif cfg.adapters:
            self.adp1 = Adapter(d, cfg.bottleneck, 1.0, rng)
            self.adp2 = Adapter(d, cfg.bottleneck, 0.0, rng)

    def _pair(self, x: Tensor, fn) -> Tensor:
        half = x.shape[0] // 2
        y1, y2 = fn(x[:half], x[half:])
        return ops.concat([y1, y2], axis=0)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.attn(self.ln1(x))
        if self.fused:
            h = self._pair(h, self.fadp1)
        elif self.adp1 is not None:
            h = self.adp1(h)
        xt = self.ln2(h + x)
        out = xt + self.fc2(ops.gelu(self.fc1(xt)))
        if self.fused:
            out = out + ops.scale(self._pair(xt, self.fadp2), self.alpha)
        elif self.adp2 is not None:
            out = out + ops.scale(self.adp2(xt), self.alpha)
        return out


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, with_adapters: bool = True):
        super().__init__()
        self.cfg = cfg
        if not with_adapters:
            cfg = EncoderConfig(**{**cfg.__dict__, "adapters": False, "fused_adapters": False})
        self.embed = PatchEmbed(cfg, rng)
        self.depth = cfg.depth
        for i in range(cfg.depth):
            setattr(self, f"block{i}", Block(cfg, i, rng))
        self.fused_blocks = [i for i in range(cfg.depth) if getattr(self, f"block{i}").fused]

    def blocks(self) -> list[Block]:
        return [getattr(self, f"block{i}") for i in range(self.depth)]

    def encode_single(self, images: np.ndarray) -> Tensor:
        """Run each image through the blocks on its own; fused blocks are not allowed."""
        if self.fused_blocks:
            raise ValueError("encode_single on an encoder with fused blocks")
        x = self.embed(images)
        for blk in self.blocks():
            x = blk(x)
        return x

    def encode_pair(self, img1: np.ndarray, img2: np.ndarray) -> tuple[Tensor, Tensor]:
        b = img1.shape[0]
        x = self.embed(np.concatenate([img1, img2], axis=0))
        for blk in self.blocks():
            x = blk(x)
        return x[:b], x[b:]
