"""Small sequential conv/fc classifiers and float checkpoints."""

from __future__ import annotations

import json

import numpy as np

from . import autograd as ag
from .autograd import Tensor

__all__ = [
    "Conv2dLayer",
    "LinearLayer",
    "ReluLayer",
    "MaxPoolLayer",
    "FlattenLayer",
    "Model",
    "build_model",
    "desk_arch",
    "save_checkpoint",
    "load_checkpoint",
]


class Conv2dLayer:
    kind = "conv"

    def __init__(self, name: str, in_ch: int, out_ch: int, k: int, stride: int = 1,
                 padding: int = 1, rng: np.random.Generator | None = None):
        self.name = name
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.padding = stride, padding
        fan_in = in_ch * k * k
        if rng is None:
            w = np.zeros((out_ch, in_ch, k, k), dtype=np.float32)
        else:
            w = ag.kaiming_uniform((out_ch, in_ch, k, k), fan_in, rng)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.w, self.b, self.stride, self.padding)

    def spec(self) -> dict:
        return {"kind": self.kind, "name": self.name, "in_ch": self.in_ch,
                "out_ch": self.out_ch, "k": self.k, "stride": self.stride,
                "padding": self.padding}


class LinearLayer:
    kind = "linear"

    def __init__(self, name: str, in_f: int, out_f: int, rng: np.random.Generator | None = None):
        self.name = name
        self.in_f, self.out_f = in_f, out_f
        if rng is None:
            w = np.zeros((out_f, in_f), dtype=np.float32)
        else:
            w = ag.kaiming_uniform((out_f, in_f), in_f, rng)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_f, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.w, self.b)

    def spec(self) -> dict:
        return {"kind": self.kind, "name": self.name, "in_f": self.in_f, "out_f": self.out_f}


class ReluLayer:
    kind = "relu"

    def __call__(self, x: Tensor) -> Tensor:
        return ag.relu(x)

    def spec(self) -> dict:
        return {"kind": self.kind}


class MaxPoolLayer:
    kind = "maxpool"

    def __init__(self, k: int = 2):
        self.k = k

    def __call__(self, x: Tensor) -> Tensor:
        return ag.maxpool2d(x, self.k)

    def spec(self) -> dict:
        return {"kind": self.kind, "k": self.k}


class FlattenLayer:
    kind = "flatten"

    def __call__(self, x: Tensor) -> Tensor:
        return ag.flatten(x)

    def spec(self) -> dict:
        return {"kind": self.kind}


class Model:
    """Ordered layer pipeline; trainable layers are the conv/linear ones."""

    def __init__(self, layers: list):
        self.layers = layers

    def forward(self, x: np.ndarray) -> Tensor:
        t = Tensor(x)
        for layer in self.layers:
            t = layer(t)
        return t

    def trainable(self) -> list:
        return [l for l in self.layers if l.kind in ("conv", "linear")]

    def params(self) -> list[Tensor]:
        out = []
        for l in self.trainable():
            out.extend([l.w, l.b])
        return out

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()

    def arch(self) -> list[dict]:
        return [l.spec() for l in self.layers]

    def weights_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for l in self.trainable():
            out[f"{l.name}.w"] = l.w.data.copy()
            out[f"{l.name}.b"] = l.b.data.copy()
        return out

    def load_weights(self, weights: dict[str, np.ndarray]) -> None:
        for l in self.trainable():
            l.w.data = np.asarray(weights[f"{l.name}.w"], dtype=np.float32).copy()
            l.b.data = np.asarray(weights[f"{l.name}.b"], dtype=np.float32).copy()


def build_model(arch: list[dict], rng: np.random.Generator | None = None) -> Model:
    layers = []
    for spec in arch:
        kind = spec["kind"]
        if kind == "conv":
            layers.append(Conv2dLayer(spec["name"], spec["in_ch"], spec["out_ch"],
                                      spec["k"], spec["stride"], spec["padding"], rng))
        elif kind == "linear":
            layers.append(LinearLayer(spec["name"], spec["in_f"], spec["out_f"], rng))
        elif kind == "relu":
            layers.append(ReluLayer())
        elif kind == "maxpool":
            layers.append(MaxPoolLayer(spec["k"]))
        elif kind == "flatten":
            layers.append(FlattenLayer())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return Model(layers)


def desk_arch(image_size: int = 12, in_ch: int = 1, classes: int = 10,
              conv1_filters: int = 8, conv2_filters: int = 16, kernel: int = 3) -> list[dict]:
    """conv-relu-conv-relu-pool-fc, sized to train in seconds on a CPU."""
    pad = kernel // 2
    pooled = image_size // 2
    if image_size % 2:
        raise ValueError("image_size must be even for 2x2 pooling")
    return [
        {"kind": "conv", "name": "conv1", "in_ch": in_ch, "out_ch": conv1_filters,
         "k": kernel, "stride": 1, "padding": pad},
        {"kind": "relu"},
        {"kind": "conv", "name": "conv2", "in_ch": conv1_filters, "out_ch": conv2_filters,
         "k": kernel, "stride": 1, "padding": pad},
        {"kind": "relu"},
        {"kind": "maxpool", "k": 2},
        {"kind": "flatten"},
        {"kind": "linear", "name": "fc", "in_f": conv2_filters * pooled * pooled,
         "out_f": classes},
    ]


def save_checkpoint(model: Model, path: str, meta: dict | None = None) -> None:
    payload = {f"weights/{k}": v for k, v in model.weights_dict().items()}
    payload["arch"] = np.frombuffer(json.dumps(model.arch()).encode(), dtype=np.uint8)
    payload["meta"] = np.frombuffer(json.dumps(meta or {}).encode(), dtype=np.uint8)
    np.savez(path, **payload)


def load_checkpoint(path: str) -> tuple[Model, dict]:
    with np.load(path) as z:
        arch = json.loads(bytes(z["arch"]).decode())
        meta = json.loads(bytes(z["meta"]).decode())
        weights = {k[len("weights/"):]: z[k] for k in z.files if k.startswith("weights/")}
    model = build_model(arch)
    model.load_weights(weights)
    return model, meta
