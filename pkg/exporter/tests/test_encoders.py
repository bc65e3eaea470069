"""Encoder registry and the built-in toy encoder."""

import numpy as np
import pytest
from PIL import Image

from resadapt_exporter.encoders import TinyColorEncoder, get_encoder
from resadapt_exporter.errors import EncoderLoadFailure


def _solid(rgb, size=32):
    return Image.new("RGB", (size, size), rgb)


def _cos(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestTinyColor:
    def test_deterministic(self):
        enc = TinyColorEncoder()
        imgs = [_solid((200, 30, 30)), _solid((30, 30, 200))]
        a = enc.encode_images(imgs)
        b = enc.encode_images(imgs)
        assert np.array_equal(a, b)
        t1 = enc.encode_texts(["a photo of a red", "a photo of a blue"])
        t2 = enc.encode_texts(["a photo of a red", "a photo of a blue"])
        assert np.array_equal(t1, t2)

    def test_color_alignment(self):
        enc = TinyColorEncoder()
        imgs = enc.encode_images([_solid((230, 20, 20)), _solid((20, 230, 20)),
                                  _solid((20, 20, 230))])
        anchors = enc.encode_texts(["a photo of a red thing",
                                    "a photo of a green thing",
                                    "a photo of a blue thing"])
        for i in range(3):
            sims = [_cos(imgs[i], anchors[k]) for k in range(3)]
            assert int(np.argmax(sims)) == i

    def test_unknown_classes_get_distinct_anchors(self):
        enc = TinyColorEncoder()
        t = enc.encode_texts(["a photo of a wombat", "a photo of a quokka"])
        assert not np.array_equal(t[0], t[1])
        assert np.linalg.norm(t[0]) > 1e-6 and np.linalg.norm(t[1]) > 1e-6

    def test_embeddings_never_degenerate(self):
        enc = TinyColorEncoder()
        black = enc.encode_images([_solid((0, 0, 0))])
        assert np.linalg.norm(black[0]) > 1e-6


class TestRegistry:
    def test_tiny_color_lookup(self):
        assert isinstance(get_encoder("tiny-color"), TinyColorEncoder)

    def test_unknown_name(self):
        with pytest.raises(EncoderLoadFailure):
            get_encoder("resnet-900")

    def test_clip_load_failure_offline(self, monkeypatch):
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        monkeypatch.setenv("TRANSFORMERS_OFFLINE", "1")
        with pytest.raises(EncoderLoadFailure):
            get_encoder("clip:definitely/not-a-real-model-xyz")
