"""Masked-language-model wrapper producing per-layer target-token vectors.

The encoder owns tokenization (model specific); it returns raw sub-word
vectors for the target token only and never averages or pools; those
steps belong to the client.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from transformers import AutoModel, AutoTokenizer


@dataclass(frozen=True)
class TargetVectors:
    """Per-layer sub-word vectors for one sentence's target token.

    ``truncated`` means the target token did not survive the model's
    position limit; ``per_layer`` is then a list of empty lists.
    """

    truncated: bool
    per_layer: list  # one list of dim-length float lists per requested layer


class MlmEncoder:
    def __init__(self, model_path: str, device: str = "cpu"):
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModel.from_pretrained(model_path)
        self.model.to(device)
        self.model.eval()
        self.device = device
        self.model_name = str(model_path)

    @property
    def dim(self) -> int:
        return self.model.config.hidden_size

    @property
    def n_layers(self) -> int:
        return self.model.config.num_hidden_layers

    @property
    def max_tokens(self) -> int:
        return self.model.config.max_position_embeddings

    def _pieces(self, token: str) -> list[str]:
        pieces = self.tokenizer.tokenize(token)
        return pieces if pieces else [self.tokenizer.unk_token]

    def encode(self, tokens, target_index: int, layers) -> TargetVectors:
        """Run the encoder on one sentence; pick out the target's pieces.

        Sentences longer than the position limit are truncated from the
        right; the result is flagged when the target token falls outside
        the kept window.
        """
        per_token = [self._pieces(t) for t in tokens]
        target_start = sum(len(p) for p in per_token[:target_index])
        target_end = target_start + len(per_token[target_index])
        content = [piece for pieces in per_token for piece in pieces]
        capacity = self.max_tokens - 2  # [CLS] and [SEP] always kept
        if len(content) > capacity:
            content = content[:capacity]
            if target_end > capacity:
                return TargetVectors(truncated=True, per_layer=[[] for _ in layers])
        pieces = [self.tokenizer.cls_token] + content + [self.tokenizer.sep_token]
        ids = torch.tensor(
            [self.tokenizer.convert_tokens_to_ids(pieces)], device=self.device
        )
        with torch.inference_mode():
            out = self.model(ids, output_hidden_states=True)
        hidden = out.hidden_states  # (n_layers + 1) tensors, [0] = embeddings
        lo, hi = 1 + target_start, 1 + target_end
        per_layer = [
            hidden[layer][0, lo:hi, :].cpu().double().tolist() for layer in layers
        ]
        return TargetVectors(truncated=False, per_layer=per_layer)
