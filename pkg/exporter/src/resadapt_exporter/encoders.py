"""Encoder registry.

"clip" / "clip:<model_id>" wraps a pretrained vision-language model via
transformers (weights must be available locally or downloadable).
"tiny-color" is a deterministic built-in toy encoder that aligns mean
pixel color with color words in the prompt text; it exists so the export
pipeline can be validated end to end on real image files without any
model download, and is not a substitute for a real encoder.
"""

import hashlib
import re

import numpy as np
from PIL import Image

from .errors import EncoderLoadFailure

_WORD_RE = re.compile(r"[a-z]+")

_COLOR_WORDS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 0.5),
    "pink": (1.0, 0.75, 0.8),
    "brown": (0.6, 0.4, 0.2),
    "gray": (0.5, 0.5, 0.5),
    "grey": (0.5, 0.5, 0.5),
}


class TinyColorEncoder:
    """Toy deterministic encoder: mean/std color statistics on the image
    side, color-word lookup plus hashed bag-of-words on the text side."""

    name = "tiny-color"
    dim = 16

    def encode_images(self, images) -> np.ndarray:
        out = np.zeros((len(images), self.dim), dtype=np.float32)
        for i, img in enumerate(images):
            small = img.convert("RGB").resize((32, 32), Image.BILINEAR)
            a = np.asarray(small, dtype=np.float32) / 255.0
            gray = a.mean(axis=2)
            out[i, 0:3] = a.mean(axis=(0, 1)) - 0.5
            out[i, 3:6] = a.std(axis=(0, 1))
            out[i, 6] = float(gray.mean()) - 0.5
            out[i, 7] = float(np.abs(np.diff(gray, axis=1)).mean())
            out[i, 15] = 0.25  # bias keeps every embedding non-degenerate
        return out

    def encode_texts(self, texts) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            words = _WORD_RE.findall(text.lower())
            rgbs = [_COLOR_WORDS[w] for w in words if w in _COLOR_WORDS]
            if rgbs:
                out[i, 0:3] = np.mean(rgbs, axis=0) - 0.5
            for w in words:
                h = int.from_bytes(
                    hashlib.blake2b(w.encode(), digest_size=4).digest(), "little")
                out[i, 8 + h % 7] += 0.05 if (h >> 3) % 2 == 0 else -0.05
            out[i, 15] = 0.25
        return out


class ClipEncoder:
    """Pretrained CLIP-style encoder via transformers."""

    def __init__(self, model_id: str):
        self.name = f"clip:{model_id}"
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor

            self._torch = torch
            self.model = CLIPModel.from_pretrained(model_id)
            self.model.eval()
            self.processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderLoadFailure(
                f"cannot load encoder {model_id!r}: {exc}") from exc
        self.dim = int(self.model.config.projection_dim)

    def _batches(self, items, size=32):
        for start in range(0, len(items), size):
            yield items[start:start + size]

    def encode_images(self, images) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for batch in self._batches(images):
                inputs = self.processor(images=list(batch), return_tensors="pt")
                feats = self.model.get_image_features(**inputs)
                chunks.append(feats.cpu().numpy().astype(np.float32))
        if not chunks:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.vstack(chunks)

    def encode_texts(self, texts) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for batch in self._batches(list(texts)):
                inputs = self.processor(text=list(batch), return_tensors="pt",
                                        padding=True, truncation=True)
                feats = self.model.get_text_features(**inputs)
                chunks.append(feats.cpu().numpy().astype(np.float32))
        if not chunks:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.vstack(chunks)


DEFAULT_CLIP_MODEL = "openai/clip-vit-base-patch16"


def get_encoder(identifier: str):
    ident = identifier.strip()
    if ident == TinyColorEncoder.name:
        return TinyColorEncoder()
    if ident == "clip":
        return ClipEncoder(DEFAULT_CLIP_MODEL)
    if ident.startswith("clip:"):
        return ClipEncoder(ident.split(":", 1)[1])
    raise EncoderLoadFailure(
        f"unknown encoder {identifier!r}; use 'tiny-color', 'clip', or 'clip:<model>'")
