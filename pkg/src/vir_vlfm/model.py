"""Full change-captioning model and its frozen/trainable partition."""
from __future__ import annotations

import fnmatch
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import LayerNorm, Module, Parameter, Tensor, ops
from .autodiff import checkpoint as ckpt
from .bridge import Bridge, BridgeConfig
from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig
from .flow import ViewpointFlow
from .vocab import Vocabulary

# Parameters that train in the adapt phase; everything else is frozen there.
ADAPT_TRAINABLE = (
    "encoder.block*.adp*",
    "encoder.block*.fadp*",
    "flow.*",
    "bridge.emph.*",
    "bridge.proj.*",
    "decoder.instr_change",
)
# Parameters that exist only for pretraining and are dropped when adapting.
PRETRAIN_ONLY = ("text_prior.",)


class TextPrior(Module):
    """Bag-of-words caption encoder standing in for visual queries during pretraining.

    Each caption becomes ``K`` query-shaped vectors (mean word embedding plus a
    per-slot offset, layer-normed), so the decoder learns to read caption content
    from the projected prefix rather than ignoring it.
    """

    def __init__(self, vocab_size: int, slots: int, width: int, rng: np.random.Generator):
        super().__init__()
        self.words = Parameter(rng.normal(0, 0.02, (vocab_size, width)))
        self.slots = Parameter(rng.normal(0, 0.02, (slots, width)))
        self.ln = LayerNorm(width)

    def __call__(self, targets) -> Tensor:
        b, k = len(targets), self.slots.shape[0]
        bag = np.zeros((b, self.words.shape[0]))
        for i, t in enumerate(targets):
            body = t[:-1] if t and t[-1] == Vocabulary.eos else t
            for w in body:
                bag[i, w] += 1.0 / max(1, len(body))
        pooled = ops.reshape(Tensor(bag) @ self.words, (b, 1, -1))
        tiled = Tensor(np.ones((b, k, 1))) @ pooled  # [B, K, d]
        return self.ln(ops.add(tiled, ops.expand(self.slots, b)))


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    vocab_size: int = 42
    phase: str = "adapt"
    vrf: bool = True
    fusion: str = "add"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        return cls(encoder=EncoderConfig(**d.pop("encoder")), bridge=BridgeConfig(**d.pop("bridge")),
                   decoder=DecoderConfig(**d.pop("decoder")), **d)

    def pretrain_variant(self) -> "ModelConfig":
        """Same sizes, no adaptation modules."""
        enc = EncoderConfig(**{**asdict(self.encoder), "adapters": False, "fused_adapters": False})
        br = BridgeConfig(**{**asdict(self.bridge), "emphasis": False})
        return ModelConfig(enc, br, DecoderConfig(**asdict(self.decoder)), self.vocab_size,
                           "pretrain", False, self.fusion)


class VIRModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0x1A17])
        if cfg.decoder.prefix_len != 2 * cfg.bridge.queries:
            raise ValueError("decoder prefix length must be twice the query count")
        adapt = cfg.phase == "adapt"
        self.encoder = Encoder(cfg.encoder, rng, with_adapters=adapt)
        if adapt and cfg.vrf:
            self.flow = ViewpointFlow(cfg.encoder.width, rng, cfg.fusion)
        else:
            self.flow = None
        bcfg = cfg.bridge if adapt else BridgeConfig(**{**asdict(cfg.bridge), "emphasis": False})
        self.bridge = Bridge(bcfg, cfg.encoder.width, cfg.decoder.width, rng)
        self.decoder = Decoder(cfg.decoder, cfg.vocab_size, rng)
        if adapt:
            self.text_prior = None
        else:
            self.text_prior = TextPrior(cfg.vocab_size, cfg.bridge.queries, cfg.bridge.width, rng)

    # -- forward paths -----------------------------------------------------------

    def visual_features(self, img1: np.ndarray, img2: np.ndarray, return_flow: bool = False):
        x1, x2 = self.encoder.encode_pair(img1, img2)
        flows = None
        if self.flow is not None:
            x1, x2, flows = self.flow(x1, x2, return_flow=True)
        return (x1, x2, flows) if return_flow else (x1, x2)

    def prefix(self, img1: np.ndarray, img2: np.ndarray) -> Tensor:
        x1, x2 = self.visual_features(img1, img2)
        return self.bridge(x1, x2)

    def loss(self, img1: np.ndarray, img2: np.ndarray, targets) -> Tensor:
        return self.decoder.caption_loss(self.prefix(img1, img2), targets, "change")

    def logits(self, img1: np.ndarray, img2: np.ndarray, tokens: np.ndarray) -> Tensor:
        return self.decoder.logits(self.prefix(img1, img2), tokens, "change")

    # single-image pretraining: the image fills both prefix halves
    def single_prefix(self, images: np.ndarray) -> Tensor:
        q = self.bridge.qformer(self.encoder.encode_single(images))
        return self.bridge.project(q, q)

    def caption_loss_single(self, images: np.ndarray, targets) -> Tensor:
        return self.decoder.caption_loss(self.single_prefix(images), targets, "caption")

    def text_loss(self, targets) -> Tensor:
        """Change-caption loss with the prefix built from the caption's own bag of words."""
        if self.text_prior is None:
            raise ValueError("text_loss needs the pretraining text prior")
        q = self.text_prior(targets)
        return self.decoder.caption_loss(self.bridge.project(q, q), targets, "change")

    # -- partition -------------------------------------------------------------------

    def trainable_names(self) -> list[str]:
        return [n for n, p in self.named_parameters() if p.requires_grad]

    def set_adapt_partition(self) -> None:
        for name, p in self.named_parameters():
            p.requires_grad = is_adapt_trainable(name)

    # -- persistence ------------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        ckpt.save(path, self.state_dict())
        path.with_suffix(".json").write_text(json.dumps(self.cfg.to_json(), sort_keys=True, indent=2) + "\n")


def is_adapt_trainable(name: str) -> bool:
    return any(fnmatch.fnmatchcase(name, pat) for pat in ADAPT_TRAINABLE)


def load_model(path: str | Path, seed: int = 0) -> VIRModel:
    path = Path(path)
    cfg_path = path.with_suffix(".json")
    if not cfg_path.exists():
        raise FileNotFoundError(f"model config missing next to checkpoint: {cfg_path}")
    cfg = ModelConfig.from_json(json.loads(cfg_path.read_text()))
    model = VIRModel(cfg, seed)
    model.load_state_dict(ckpt.load(path), strict=True)
    return model


def frozen_bytes(model: VIRModel) -> bytes:
    """Serialized values of every adapt-frozen parameter, in name order."""
    state = {n: p.data for n, p in model.named_parameters() if not is_adapt_trainable(n)}
    return ckpt.encode(dict(sorted(state.items())))
