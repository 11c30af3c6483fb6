"""Network definitions: per-domain energy models, cross-domain translators,
and the temporal predictor used for frame sequences.

All parameters are float32 leaves initialized from named counter-based
streams, so two constructions with the same (seed, name) are identical.
Translators start as the exact identity map: every path that could perturb
the input ends in a zero-initialized layer, which keeps early training
stable at batch size 1.
"""

from __future__ import annotations

import numpy as np

from . import rng
from . import tensor as T
from .tensor import Tensor

__all__ = [
    "Net",
    "PointScorer",
    "ImageScorer",
    "ZeroScorer",
    "PointTranslator",
    "ImageTranslator",
    "TemporalPredictor",
    "EnergyModel",
    "build_scorer",
    "build_translator",
]


class Net:
    """Parameter bookkeeping shared by every network.

    ``params`` maps dotted names to requires_grad leaves; insertion order is
    the canonical parameter order for optimizers and checkpoints.
    """

    def __init__(self, name: str, seed: int, dtype=np.float32):
        self.name = name
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def _gaussian(self, local: str, shape: tuple, fan_in: int) -> Tensor:
        g = rng.init_stream(self.seed, f"{self.name}.{local}")
        arr = (g.standard_normal(size=shape) / np.sqrt(fan_in)).astype(self.dtype)
        return self._register(local, arr)

    def _zeros(self, local: str, shape: tuple) -> Tensor:
        return self._register(local, np.zeros(shape, dtype=self.dtype))

    def _ones(self, local: str, shape: tuple) -> Tensor:
        return self._register(local, np.ones(shape, dtype=self.dtype))

    def _register(self, local: str, arr: np.ndarray) -> Tensor:
        t = Tensor(arr, requires_grad=True)
        self.params[local] = t
        return t

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"{self.name}: state keys do not match parameters: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise T.ShapeError(f"{self.name}.{k}: expected {p.data.shape}, got {arr.shape}")
            p.data[...] = arr

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())


# ---------------------------------------------------------------------------
# Score functions f(x; theta)
# ---------------------------------------------------------------------------


class PointScorer(Net):
    """MLP score function for point clouds: (n, dim) -> (n,)."""

    def __init__(self, dim: int = 2, hidden: tuple = (128, 128), seed: int = 0, name: str = "score", dtype=np.float32):
        super().__init__(name, seed, dtype)
        self.dim = dim
        widths = (dim,) + tuple(hidden) + (1,)
        self.depth = len(widths) - 1
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            self._gaussian(f"w{i}", (fi, fo), fan_in=fi)
            self._zeros(f"b{i}", (fo,))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i in range(self.depth):
            h = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            if i < self.depth - 1:
                h = T.leaky_relu(h, 0.2)
        return h.reshape(h.shape[0])


class ImageScorer(Net):
    """Convolutional score function for NCHW images: (n, C, H, W) -> (n,).

    Defaults are desk scale; passing widths=(64, 128, 256, 512),
    filters=(3, 4, 4, 4), strides=(1, 2, 2, 2), dense=100 reproduces the
    published still-image architecture, and widths=(64, 128, 256),
    filters=(5, 3, 3), strides=(2, 2, 1), dense=10 the per-frame one.
    """

    def __init__(
        self,
        in_shape: tuple = (1, 16, 16),
        widths: tuple = (32, 64, 128),
        filters: tuple = (5, 3, 3),
        strides: tuple = (2, 2, 1),
        dense: int = 64,
        seed: int = 0,
        name: str = "score",
        dtype=np.float32,
    ):
        if not (len(widths) == len(filters) == len(strides)):
            raise ValueError("widths, filters, strides must have equal length")
        super().__init__(name, seed, dtype)
        self.in_shape = tuple(in_shape)
        self.filters = tuple(filters)
        self.strides = tuple(strides)
        self.pads = tuple(k // 2 for k in filters)
        c, h, w = in_shape
        chans = (c,) + tuple(widths)
        for i, (ci, co, k) in enumerate(zip(chans[:-1], chans[1:], filters)):
            self._gaussian(f"conv{i}.w", (co, ci, k, k), fan_in=ci * k * k)
            self._zeros(f"conv{i}.b", (co,))
            h = (h + 2 * self.pads[i] - k) // strides[i] + 1
            w = (w + 2 * self.pads[i] - k) // strides[i] + 1
            if h <= 0 or w <= 0:
                raise T.ShapeError(f"{name}: spatial size collapsed at conv{i}")
        self.flat = chans[-1] * h * w
        self._gaussian("fc0.w", (self.flat, dense), fan_in=self.flat)
        self._zeros("fc0.b", (dense,))
        self._gaussian("fc1.w", (dense, 1), fan_in=dense)
        self._zeros("fc1.b", (1,))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i in range(len(self.filters)):
            h = T.conv2d(
                h,
                self.params[f"conv{i}.w"],
                self.params[f"conv{i}.b"],
                stride=self.strides[i],
                pad=self.pads[i],
            )
            h = T.leaky_relu(h, 0.2)
        h = h.reshape(h.shape[0], self.flat)
        h = T.leaky_relu(h @ self.params["fc0.w"] + self.params["fc0.b"], 0.2)
        out = h @ self.params["fc1.w"] + self.params["fc1.b"]
        return out.reshape(out.shape[0])


class ZeroScorer(Net):
    """f(x) = 0 with no parameters.

    Under a zero score the energy reduces to the reference term alone, so
    Langevin dynamics must sample the reference Gaussian: the basis of the
    sampler stationarity check.
    """

    def __init__(self, name: str = "zero", dtype=np.float32):
        super().__init__(name, seed=0, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return Tensor(np.zeros(x.shape[0], dtype=x.dtype))


# ---------------------------------------------------------------------------
# Energy model
# ---------------------------------------------------------------------------


class EnergyModel:
    """Energy over data space: E(x) = -f(x) + ||x||^2 / (2 s^2).

    ``scorer`` provides the learnable f; ``reference_scale`` is s, the
    standard deviation of the Gaussian reference distribution.
    """

    def __init__(self, scorer: Net, reference_scale: float):
        if reference_scale <= 0:
            raise ValueError(f"reference_scale must be positive, got {reference_scale}")
        self.scorer = scorer
        self.reference_scale = float(reference_scale)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.scorer.params

    def score(self, x: Tensor) -> Tensor:
        """Per-sample f(x): (n, ...) -> (n,)."""
        return self.scorer.forward(x)

    def energy_each(self, x: Tensor) -> Tensor:
        """Per-sample energies: (n, ...) -> (n,)."""
        axes = tuple(range(1, x.ndim))
        ref = T.sq_norm(x, axis=axes) * (1.0 / (2.0 * self.reference_scale**2))
        return T.neg(self.score(x)) + ref

    def energy_sum(self, x: Tensor) -> Tensor:
        """Total energy of a batch; the scalar Langevin differentiates."""
        return self.energy_each(x).sum()

    def energy_values(self, x: np.ndarray) -> np.ndarray:
        """Per-sample energies in eval mode (no tape, plain arrays in/out)."""
        return self.energy_each(Tensor(np.asarray(x))).data


# ---------------------------------------------------------------------------
# Translators
# ---------------------------------------------------------------------------


class PointTranslator(Net):
    """Residual MLP mapping point clouds between domains: (n, d) -> (n, d).

    Each block adds a two-layer correction whose output layer starts at
    zero, so the whole map is the identity at initialization.
    """

    def __init__(self, dim: int = 2, hidden: int = 64, blocks: int = 2, seed: int = 0, name: str = "gen", dtype=np.float32):
        super().__init__(name, seed, dtype)
        self.dim = dim
        self.blocks = blocks
        for i in range(blocks):
            self._gaussian(f"block{i}.w0", (dim, hidden), fan_in=dim)
            self._zeros(f"block{i}.b0", (hidden,))
            self._zeros(f"block{i}.w1", (hidden, dim))
            self._zeros(f"block{i}.b1", (dim,))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i in range(self.blocks):
            inner = T.leaky_relu(h @ self.params[f"block{i}.w0"] + self.params[f"block{i}.b0"], 0.2)
            h = h + (inner @ self.params[f"block{i}.w1"] + self.params[f"block{i}.b1"])
        return h


class ImageTranslator(Net):
    """Residual encoder/decoder for NCHW images, identity at initialization.

    Layout: 7x7 stem, strided 3x3 downsample, ``blocks`` residual blocks,
    transposed 3x3 upsample, 7x7 output projection. The output projection
    and every residual block's second conv start at zero and the whole stack
    sits under a global input skip, so the initial map is exactly x -> x.
    Per-channel affines stand in for instance norm at batch size 1
    (statistics frozen at identity, learnable gain/bias kept). Passing
    base=64, blocks=9 reproduces the published translator layout.
    """

    def __init__(self, in_shape: tuple = (1, 16, 16), base: int = 16, blocks: int = 2, seed: int = 0, name: str = "gen", dtype=np.float32):
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise T.ShapeError(f"{name}: spatial dims must be even for down/upsample, got {in_shape}")
        super().__init__(name, seed, dtype)
        self.in_shape = tuple(in_shape)
        self.base = base
        self.blocks = blocks
        self._gaussian("enc0.w", (base, c, 7, 7), fan_in=c * 49)
        self._zeros("enc0.b", (base,))
        self._ones("enc0.gain", (base,))
        self._zeros("enc0.bias", (base,))
        self._gaussian("enc1.w", (2 * base, base, 3, 3), fan_in=base * 9)
        self._zeros("enc1.b", (2 * base,))
        self._ones("enc1.gain", (2 * base,))
        self._zeros("enc1.bias", (2 * base,))
        for i in range(blocks):
            self._gaussian(f"res{i}.w0", (2 * base, 2 * base, 3, 3), fan_in=2 * base * 9)
            self._zeros(f"res{i}.b0", (2 * base,))
            self._ones(f"res{i}.gain0", (2 * base,))
            self._zeros(f"res{i}.bias0", (2 * base,))
            self._zeros(f"res{i}.w1", (2 * base, 2 * base, 3, 3))
            self._zeros(f"res{i}.b1", (2 * base,))
            self._ones(f"res{i}.gain1", (2 * base,))
            self._zeros(f"res{i}.bias1", (2 * base,))
        self._gaussian("dec0.w", (2 * base, base, 3, 3), fan_in=2 * base * 9)
        self._zeros("dec0.b", (base,))
        self._ones("dec0.gain", (base,))
        self._zeros("dec0.bias", (base,))
        self._zeros("dec1.w", (c, base, 7, 7))
        self._zeros("dec1.b", (c,))

    def _affine(self, h: Tensor, tag: str) -> Tensor:
        return T.channel_affine(h, self.params[f"{tag}.gain"], self.params[f"{tag}.bias"])

    def forward(self, x: Tensor) -> Tensor:
        p = self.params
        h = T.conv2d(x, p["enc0.w"], p["enc0.b"], stride=1, pad=3)
        h = T.leaky_relu(self._affine(h, "enc0"), 0.2)
        h = T.conv2d(h, p["enc1.w"], p["enc1.b"], stride=2, pad=1)
        h = T.leaky_relu(self._affine(h, "enc1"), 0.2)
        for i in range(self.blocks):
            inner = T.conv2d(h, p[f"res{i}.w0"], p[f"res{i}.b0"], stride=1, pad=1)
            inner = T.leaky_relu(
                T.channel_affine(inner, p[f"res{i}.gain0"], p[f"res{i}.bias0"]), 0.2
            )
            inner = T.conv2d(inner, p[f"res{i}.w1"], p[f"res{i}.b1"], stride=1, pad=1)
            inner = T.channel_affine(inner, p[f"res{i}.gain1"], p[f"res{i}.bias1"])
            h = h + inner
        h = T.conv2d_transpose(h, p["dec0.w"], p["dec0.b"], stride=2, pad=1, out_pad=1)
        h = T.leaky_relu(self._affine(h, "dec0"), 0.2)
        delta = T.conv2d(h, p["dec1.w"], p["dec1.b"], stride=1, pad=3)
        return x + delta


class TemporalPredictor(Net):
    """Predicts the next frame from the k previous ones.

    ``forward(context, last)`` takes the k past frames stacked along
    channels, (n, k*C, H, W), plus the most recent frame (n, C, H, W), and
    returns last + correction(context). The correction's output conv starts
    at zero, so the initial prediction is a frame hold.
    """

    def __init__(self, in_shape: tuple = (1, 16, 16), k: int = 2, base: int = 16, seed: int = 0, name: str = "pred", dtype=np.float32):
        super().__init__(name, seed, dtype)
        c = in_shape[0]
        self.in_shape = tuple(in_shape)
        self.k = int(k)
        self._gaussian("conv0.w", (base, k * c, 3, 3), fan_in=k * c * 9)
        self._zeros("conv0.b", (base,))
        self._gaussian("conv1.w", (base, base, 3, 3), fan_in=base * 9)
        self._zeros("conv1.b", (base,))
        self._zeros("conv2.w", (c, base, 3, 3))
        self._zeros("conv2.b", (c,))

    def forward(self, context: Tensor, last: Tensor) -> Tensor:
        p = self.params
        if context.shape[1] != self.k * self.in_shape[0]:
            raise T.ShapeError(
                f"{self.name}: context has {context.shape[1]} channels, expected {self.k * self.in_shape[0]}"
            )
        h = T.leaky_relu(T.conv2d(context, p["conv0.w"], p["conv0.b"], stride=1, pad=1), 0.2)
        h = T.leaky_relu(T.conv2d(h, p["conv1.w"], p["conv1.b"], stride=1, pad=1), 0.2)
        delta = T.conv2d(h, p["conv2.w"], p["conv2.b"], stride=1, pad=1)
        return last + delta


# ---------------------------------------------------------------------------
# Factories keyed by data shape
# ---------------------------------------------------------------------------


def build_scorer(shape: tuple, seed: int, name: str, dtype=np.float32, **kwargs) -> Net:
    """Scorer for samples of ``shape``: (d,) -> point MLP, (C,H,W) -> conv net."""
    if len(shape) == 1:
        return PointScorer(dim=shape[0], seed=seed, name=name, dtype=dtype, **kwargs)
    if len(shape) == 3:
        return ImageScorer(in_shape=shape, seed=seed, name=name, dtype=dtype, **kwargs)
    raise T.ShapeError(f"no scorer for sample shape {shape}")


def build_translator(shape: tuple, seed: int, name: str, dtype=np.float32, **kwargs) -> Net:
    """Translator for samples of ``shape``; identity map at initialization."""
    if len(shape) == 1:
        return PointTranslator(dim=shape[0], seed=seed, name=name, dtype=dtype, **kwargs)
    if len(shape) == 3:
        return ImageTranslator(in_shape=shape, seed=seed, name=name, dtype=dtype, **kwargs)
    raise T.ShapeError(f"no translator for sample shape {shape}")
