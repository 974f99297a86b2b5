"""Full model assembly: the two modality encoders feeding the cross-modal
block stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import RunConfig
from .cross_modal import CrossModalStack
from .encoders import (
    EncoderConfig,
    TextEncoderParams,
    VisionEncoderParams,
    patch_embed,
    token_embed,
)
from .nn import NamedTensors


@dataclass
class CrossModalModel:
    encoder_config: EncoderConfig
    vision_encoder: VisionEncoderParams
    text_encoder: TextEncoderParams
    stack: CrossModalStack

    @classmethod
    def create(cls, cfg: RunConfig, seed: int) -> "CrossModalModel":
        """Build a freshly initialized model; one seed fixes every parameter."""
        rng = np.random.default_rng(seed)
        enc_cfg = cfg.encoder_config()
        return cls(
            encoder_config=enc_cfg,
            vision_encoder=VisionEncoderParams.create(rng, enc_cfg),
            text_encoder=TextEncoderParams.create(rng, enc_cfg),
            stack=CrossModalStack.create(
                rng, cfg.feature_dim, cfg.num_heads, depth=cfg.depth,
                hidden_dim=cfg.hidden_dim, embed_dim=cfg.embed_dim,
                use_cross=cfg.use_cross, use_gate=cfg.use_gate,
            ),
        )

    def named_tensors(self) -> NamedTensors:
        yield from self.vision_encoder.named_tensors("vision_encoder")
        yield from self.text_encoder.named_tensors("text_encoder")
        yield from self.stack.named_tensors("stack")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_tensors())

    def embed(self, images: np.ndarray, token_ids: np.ndarray) -> tuple[Tensor, Tensor]:
        """Paired batch in, unit-norm (N, embed_dim) embeddings out."""
        vision = patch_embed(self.vision_encoder, self.encoder_config, images)
        text, mask = token_embed(self.text_encoder, self.encoder_config, token_ids)
        return self.stack.forward(vision, text, text_mask=mask)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite every parameter in place from checkpointed arrays."""
        for name, tensor in self.named_tensors():
            tensor.data[...] = arrays[name]
