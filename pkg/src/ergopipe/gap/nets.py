"""Obfuscator/deobfuscator autoencoder and the keypoint-regression task network."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEAK = 0.1


class Model:
    """Parameter container with a ``forward`` over NCHW tensors."""

    def __init__(self):
        self.params: list[Tensor] = []

    def _param(self, arr: np.ndarray, name: str) -> Tensor:
        t = Tensor(arr, requires_grad=True, name=name)
        self.params.append(t)
        return t

    def __call__(self, x):
        return self.forward(x if isinstance(x, Tensor) else Tensor(x))

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def freeze(self):
        for p in self.params:
            p.requires_grad = False
            p.grad = None

    def unfreeze(self):
        for p in self.params:
            p.requires_grad = True

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def load_state(self, arrays):
        arrays = list(arrays)
        if len(arrays) != len(self.params):
            raise ValueError(f"expected {len(self.params)} arrays, got {len(arrays)}")
        for p, a in zip(self.params, arrays):
            if p.data.shape != np.shape(a):
                raise ValueError(f"shape mismatch for {p.name}: {p.data.shape} vs {np.shape(a)}")
            p.data = np.array(a, dtype=np.float64)


def _conv_init(rng: np.random.Generator, cout: int, cin: int, k: int = 3) -> np.ndarray:
    fan_in = cin * k * k
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))


class ConvAutoencoder(Model):
    """Two stride-2 encoder convolutions (8, 16 channels) and two upsample+conv decoder stages."""

    def __init__(self, seed: int = 0, channels: int = 1, width: tuple[int, int] = (8, 16)):
        super().__init__()
        rng = np.random.default_rng(seed)
        c1, c2 = width
        self.e1w = self._param(_conv_init(rng, c1, channels), "enc1.w")
        self.e1b = self._param(np.zeros(c1), "enc1.b")
        self.e2w = self._param(_conv_init(rng, c2, c1), "enc2.w")
        self.e2b = self._param(np.zeros(c2), "enc2.b")
        self.d1w = self._param(_conv_init(rng, c1, c2), "dec1.w")
        self.d1b = self._param(np.zeros(c1), "dec1.b")
        self.d2w = self._param(_conv_init(rng, channels, c1) * 0.5, "dec2.w")
        self.d2b = self._param(np.full(channels, 0.5), "dec2.b")

    def forward(self, x: Tensor) -> Tensor:
        h = ad.leaky_relu(ad.conv2d(x, self.e1w, self.e1b, stride=2), LEAK)
        h = ad.leaky_relu(ad.conv2d(h, self.e2w, self.e2b, stride=2), LEAK)
        h = ad.leaky_relu(ad.conv2d(ad.upsample2x(h), self.d1w, self.d1b), LEAK)
        h = ad.conv2d(ad.upsample2x(h), self.d2w, self.d2b)
        return ad.clamp(h, 0.0, 1.0)


class TaskNet(Model):
    """Keypoint regressor: two stride-2 convolutions then one dense layer to 2*K outputs."""

    def __init__(self, n_keypoints: int, image_size: int = 48, seed: int = 0, channels: int = 1):
        super().__init__()
        if image_size % 4:
            raise ValueError("image_size must be divisible by 4")
        rng = np.random.default_rng(seed)
        self.n_keypoints = n_keypoints
        self.c1w = self._param(_conv_init(rng, 8, channels), "conv1.w")
        self.c1b = self._param(np.zeros(8), "conv1.b")
        self.c2w = self._param(_conv_init(rng, 16, 8), "conv2.w")
        self.c2b = self._param(np.zeros(16), "conv2.b")
        n_in = 16 * (image_size // 4) ** 2
        self.fw = self._param(rng.normal(0.0, np.sqrt(1.0 / n_in), size=(2 * n_keypoints, n_in)), "fc.w")
        self.fb = self._param(np.full(2 * n_keypoints, 0.5), "fc.b")

    def forward(self, x: Tensor) -> Tensor:
        h = ad.leaky_relu(ad.conv2d(x, self.c1w, self.c1b, stride=2), LEAK)
        h = ad.leaky_relu(ad.conv2d(h, self.c2w, self.c2b, stride=2), LEAK)
        h = ad.reshape(h, (h.shape[0], -1))
        return ad.linear(h, self.fw, self.fb)


class Identity(Model):
    def forward(self, x: Tensor) -> Tensor:
        return x


class Constant(Model):
    """Outputs a fixed gray image regardless of input."""

    def __init__(self, level: float = 0.5):
        super().__init__()
        self.level = level

    def forward(self, x: Tensor) -> Tensor:
        return Tensor(np.full(x.shape, self.level))
