"""Diffusion backends: a real diffusers-based pipeline with cross-attention
hooks, and a deterministic stub for CI machines without model weights.

Both produce the same capture shape: one score grid per prompt term for
every (pathway, timestep, layer, head), with word-piece grids already
summed per term so downstream stays tokenizer-agnostic.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

Slice = Tuple[str, int, int, int, np.ndarray]  # pathway, t, layer, head, (terms, h, w)


@dataclass
class Capture:
    slices: List[Slice]
    image: Optional[np.ndarray] = None  # (H, W, 3) uint8 when available
    notes: dict = field(default_factory=dict)


class StubBackend:
    """Synthetic attention with the structure of a real capture.

    Per term, attention concentrates around a statement-derived anchor
    point and drifts slightly over timesteps; grids are softmax-normalized
    per slice like genuine cross-attention columns. Deterministic in
    (seed, statement).
    """

    name = "stub"

    def __init__(self, timesteps: int = 2, heads: int = 2,
                 resolutions: Tuple[int, ...] = (8, 16, 32)):
        self.timesteps = timesteps
        self.heads = heads
        self.resolutions = resolutions

    def generate(self, statement: str, terms, steps: int, seed: int) -> Capture:
        digest = hashlib.sha256(statement.encode("utf-8")).digest()
        key = int.from_bytes(digest[:8], "little")
        rng = np.random.Generator(np.random.Philox(
            key=np.array([seed % 2**64, key], dtype=np.uint64)))
        anchors = rng.random((len(terms), 2)) * 0.6 + 0.2
        slices: List[Slice] = []
        for pathway in ("down", "up"):
            for t in range(self.timesteps):
                for layer, size in enumerate(self.resolutions):
                    for head in range(self.heads):
                        grids = np.empty((len(terms), size, size))
                        for k in range(len(terms)):
                            cx, cy = anchors[k] + 0.02 * t * rng.standard_normal(2)
                            ys, xs = (np.mgrid[0:size, 0:size] + 0.5) / size
                            logit = -18.0 * ((xs - cx) ** 2 + (ys - cy) ** 2)
                            logit += 0.15 * rng.standard_normal((size, size))
                            e = np.exp(logit - logit.max())
                            grids[k] = e / e.sum()
                        slices.append((pathway, t, layer, head, grids))
        image = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
        return Capture(slices=slices, image=image, notes={"backend": self.name})


class DiffusersBackend:
    """Stable Diffusion via huggingface diffusers with attention hooks.

    Imported lazily; construction fails with a clear message when the
    library or the model weights are unavailable.
    """

    name = "diffusers"

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:
            raise RuntimeError(
                "the live backend needs the 'live' extra (torch, diffusers, transformers)"
            ) from exc
        self._torch = torch
        self.model_id = model_id
        self.device = device
        self.pipeline = StableDiffusionPipeline.from_pretrained(
            model_id, torch_dtype=torch.float32)
        self.pipeline.to(device)

    # -- token bookkeeping ---------------------------------------------------

    def _piece_indices(self, prompt: str, term: str) -> List[int]:
        """Positions of the term's word pieces in the encoded prompt (after
        the start-of-sequence token)."""
        tokenizer = self.pipeline.tokenizer
        pieces = tokenizer.tokenize(prompt)
        want = tokenizer.tokenize(term)
        for start in range(len(pieces) - len(want) + 1):
            if pieces[start:start + len(want)] == want:
                return list(range(start + 1, start + 1 + len(want)))
        raise ValueError(f"term {term!r} not found in prompt {prompt!r}")

    # -- capture --------------------------------------------------------------

    def generate(self, statement: str, terms, steps: int, seed: int) -> Capture:
        torch = self._torch
        unet = self.pipeline.unet
        records = []  # (pathway, layer, head, probs (heads, hw, ctx)) per call
        layer_of = {}

        def classify(name: str) -> Optional[str]:
            if "down_blocks" in name:
                return "down"
            if "up_blocks" in name:
                return "up"
            return None  # mid block is skipped, matching the two-pathway sum

        hooks = []
        for name, module in unet.named_modules():
            # cross-attention modules carry separate text-keyed projections
            if name.endswith("attn2") and hasattr(module, "to_k"):
                pathway = classify(name)
                if pathway is None:
                    continue
                layer_of.setdefault(pathway, [])
                layer_of[pathway].append(name)

                def make_hook(pathway=pathway, name=name, module=module):
                    def hook(_mod, args, kwargs, _out):
                        hidden = args[0]
                        encoder = kwargs.get("encoder_hidden_states")
                        if encoder is None and len(args) > 1:
                            encoder = args[1]
                        if encoder is None:
                            return
                        with torch.no_grad():
                            q = module.head_to_batch_dim(module.to_q(hidden))
                            k = module.head_to_batch_dim(module.to_k(encoder))
                            probs = module.get_attention_scores(q, k, None)
                        records.append((pathway, name, probs.detach().cpu()))
                    return hook

                hooks.append(module.register_forward_hook(make_hook(), with_kwargs=True))

        term_pieces = [self._piece_indices(statement, term) for term in terms]
        generator = torch.Generator(device=self.device).manual_seed(seed)
        timestep_counter = {"n": 0}
        slices: List[Slice] = []

        def on_step_end(pipe, step, timestep, callback_kwargs):
            # drain the records captured during this denoising step
            layer_index = {p: {n: i for i, n in enumerate(layer_of.get(p, []))}
                           for p in ("down", "up")}
            for pathway, name, probs in records:
                heads = probs.shape[0]
                hw = probs.shape[1]
                size = int(math.isqrt(hw))
                if size * size != hw:
                    continue
                cond = probs[heads // 2:]  # conditional half of the CFG batch
                for head in range(cond.shape[0]):
                    grid_all = cond[head].T.reshape(-1, size, size).numpy()
                    grids = np.stack([
                        grid_all[pieces].sum(axis=0) for pieces in term_pieces
                    ])
                    slices.append((pathway, int(step), layer_index[pathway][name],
                                   head, np.maximum(grids, 0.0)))
            records.clear()
            timestep_counter["n"] += 1
            return {}

        try:
            result = self.pipeline(
                statement,
                num_inference_steps=steps,
                generator=generator,
                callback_on_step_end=on_step_end,
            )
        finally:
            for h in hooks:
                h.remove()

        image = np.asarray(result.images[0])
        return Capture(slices=slices, image=image,
                       notes={"backend": self.name, "model_id": self.model_id,
                              "steps_run": timestep_counter["n"]})
