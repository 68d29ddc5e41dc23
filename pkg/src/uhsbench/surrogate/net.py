"""U-shaped convolutional encoder-decoder assembled from the layer
primitives, with hand-written reverse-mode gradients.

Composition (levels L, base width W, widths W*2^l per level):

    encoder level l : two 3x3 conv + relu at width W*2^l (skip saved),
                      then a stride-2 3x3 conv + relu to width W*2^(l+1)
    bottleneck      : two 3x3 conv + relu at width W*2^L
    decoder level l : nearest 2x upsample, 3x3 conv + relu down to W*2^l,
                      concat with the skip, two 3x3 conv + relu
    head            : 1x1 conv to one channel, then sigmoid (saturation
                      targets, output in (0,1)) or tanhshrink (pressure)

Downsampling by strided convolution and upsampling by nearest-neighbour +
convolution avoid checkerboard artifacts and keep the gradients simple.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..utils import json_line, read_json_line, require, rng_from_seed
from .layers import (
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    tanhshrink_backward,
    tanhshrink_forward,
    upsample2_backward,
    upsample2_forward,
)

HEADS = ("sigmoid", "tanhshrink")
NET_SUFFIX = ".net"


@dataclass(frozen=True)
class NetSpec:
    levels: int = 3
    base_width: int = 16
    in_channels: int = 5
    head: str = "sigmoid"

    def __post_init__(self):
        require(self.levels >= 1, "need at least one down/upsampling level")
        require(self.base_width >= 1, "base width must be positive")
        require(self.head in HEADS, f"head must be one of {HEADS}")

    def width(self, level: int) -> int:
        return self.base_width * 2 ** level

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _conv_shapes(spec: NetSpec) -> list[tuple[str, int, int, int]]:
    """(name, out_channels, in_channels, kernel) for every convolution in
    execution order; parameter keys are '<name>_w' and '<name>_b'."""
    shapes = []
    c_in = spec.in_channels
    for l in range(spec.levels):
        w = spec.width(l)
        shapes.append((f"enc{l}_c1", w, c_in, 3))
        shapes.append((f"enc{l}_c2", w, w, 3))
        shapes.append((f"down{l}", spec.width(l + 1), w, 3))
        c_in = spec.width(l + 1)
    wl = spec.width(spec.levels)
    shapes.append(("bot_c1", wl, wl, 3))
    shapes.append(("bot_c2", wl, wl, 3))
    for l in reversed(range(spec.levels)):
        w = spec.width(l)
        shapes.append((f"up{l}", w, spec.width(l + 1), 3))
        shapes.append((f"dec{l}_c1", w, 2 * w, 3))
        shapes.append((f"dec{l}_c2", w, w, 3))
    shapes.append(("head", 1, spec.base_width, 1))
    return shapes


def init_params(spec: NetSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in) weights and biases; deterministic in seed.

    This sub-unit-gain scheme keeps the unnormalized conv stack contractive
    at every width: He-scale inits sit just above unit per-layer gain here,
    and a few coherent optimizer steps then blow the activations up
    exponentially with depth until the head saturates and the gradient
    dies. The 1x1 head starts at zero so the first output sits at the
    neutral activation point (0.5 for sigmoid, 0 for tanhshrink)."""
    rng = rng_from_seed(seed)
    params: dict[str, np.ndarray] = {}
    for name, c_out, c_in, k in _conv_shapes(spec):
        bound = 1.0 / np.sqrt(c_in * k * k)
        if name == "head":
            params[f"{name}_w"] = np.zeros((c_out, c_in, k, k))
        else:
            params[f"{name}_w"] = rng.uniform(-bound, bound, (c_out, c_in, k, k))
        params[f"{name}_b"] = rng.uniform(-bound, bound, c_out)
    return params


def check_input_stack(x, spec: NetSpec) -> np.ndarray:
    """Validate a (N, C, H, W) input batch against the architecture."""
    x = np.asarray(x, dtype=np.float64)
    require(x.ndim == 4, f"expected a 4D (N, C, H, W) batch, got shape {x.shape}")
    require(x.shape[1] == spec.in_channels,
            f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    div = 2 ** spec.levels
    require(x.shape[2] % div == 0 and x.shape[3] % div == 0,
            f"input resolution {x.shape[2:]}, must be divisible by {div}")
    require(bool(np.all(np.isfinite(x))), "non-finite values in input batch")
    return x


def forward(params: dict, spec: NetSpec, x: np.ndarray, need_cache: bool = False):
    """Run the net; returns (output (N, H, W), caches or None)."""
    tape = [] if need_cache else None

    def conv_relu(name, h, stride=1, pad=1):
        h, c_cache = conv2d_forward(h, params[f"{name}_w"], params[f"{name}_b"],
                                    stride=stride, pad=pad)
        h, mask = relu_forward(h)
        if tape is not None:
            tape.append((name, c_cache, mask))
        return h

    h = x
    skips = []
    for l in range(spec.levels):
        h = conv_relu(f"enc{l}_c1", h)
        h = conv_relu(f"enc{l}_c2", h)
        skips.append(h)
        h = conv_relu(f"down{l}", h, stride=2)
    h = conv_relu("bot_c1", h)
    h = conv_relu("bot_c2", h)
    for l in reversed(range(spec.levels)):
        h, up_shape = upsample2_forward(h)
        if tape is not None:
            tape.append((f"_upsample{l}", up_shape, None))
        h = conv_relu(f"up{l}", h)
        h = np.concatenate([h, skips[l]], axis=1)
        if tape is not None:
            tape.append((f"_concat{l}", spec.width(l), None))
        h = conv_relu(f"dec{l}_c1", h)
        h = conv_relu(f"dec{l}_c2", h)
    h, head_cache = conv2d_forward(h, params["head_w"], params["head_b"], stride=1, pad=0)
    if spec.head == "sigmoid":
        out, act_cache = sigmoid_forward(h)
    else:
        out, act_cache = tanhshrink_forward(h)
    if tape is not None:
        tape.append(("_head", head_cache, act_cache))
    return out[:, 0, :, :], tape


def backward(params: dict, spec: NetSpec, tape: list, grad_out: np.ndarray
             ) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse-mode pass; returns (parameter gradients, input gradient)."""
    grads = {k: None for k in params}
    g = grad_out[:, None, :, :]
    skip_grads: dict[int, np.ndarray] = {}
    i = len(tape) - 1

    name, head_cache, act_cache = tape[i]
    i -= 1
    if spec.head == "sigmoid":
        g = sigmoid_backward(g, act_cache)
    else:
        g = tanhshrink_backward(g, act_cache)
    g, grads["head_w"], grads["head_b"] = conv2d_backward(g, head_cache)

    def conv_relu_back(entry, g):
        name, c_cache, mask = entry
        g = relu_backward(g, mask)
        g, gw, gb = conv2d_backward(g, c_cache)
        grads[f"{name}_w"] = gw
        grads[f"{name}_b"] = gb
        return g

    for l in range(spec.levels):
        g = conv_relu_back(tape[i], g); i -= 1   # dec{l}_c2
        g = conv_relu_back(tape[i], g); i -= 1   # dec{l}_c1
        name, w, _ = tape[i]; i -= 1             # _concat{l}
        skip_grads[l] = g[:, w:, :, :]
        g = g[:, :w, :, :]
        g = conv_relu_back(tape[i], g); i -= 1   # up{l}
        name, up_shape, _ = tape[i]; i -= 1      # _upsample{l}
        g = upsample2_backward(g, up_shape)
    g = conv_relu_back(tape[i], g); i -= 1       # bot_c2
    g = conv_relu_back(tape[i], g); i -= 1       # bot_c1
    for l in reversed(range(spec.levels)):
        g = conv_relu_back(tape[i], g); i -= 1   # down{l}
        g = g + skip_grads[l]
        g = conv_relu_back(tape[i], g); i -= 1   # enc{l}_c2
        g = conv_relu_back(tape[i], g); i -= 1   # enc{l}_c1
    return grads, g


def loss_and_grads(params: dict, spec: NetSpec, x: np.ndarray, target: np.ndarray,
                   l2: float = 0.0) -> tuple[float, dict[str, np.ndarray]]:
    """MAE loss (plus optional L2 on weights, not biases) and its gradients."""
    require(x.shape[0] > 0, "empty batch")
    from .layers import mae_loss

    pred, tape = forward(params, spec, x, need_cache=True)
    data_loss, grad_pred = mae_loss(pred, target)
    if not np.isfinite(data_loss):
        raise ValueError(
            f"non-finite loss on batch: pred range [{pred.min()}, {pred.max()}]")
    grads, _ = backward(params, spec, tape, grad_pred)
    loss = data_loss
    if l2 > 0.0:
        for k, v in params.items():
            if k.endswith("_w"):
                loss += 0.5 * l2 * float((v * v).sum())
                grads[k] = grads[k] + l2 * v
    return loss, grads


def save_params(params: dict, spec: NetSpec, path, extra: dict | None = None) -> None:
    """`.net` checkpoint: JSON shape manifest line + little-endian binary64
    tensors in manifest order."""
    names = sorted(params)
    manifest = {
        "format": "uhs-net",
        "version": 1,
        "spec": spec.to_dict(),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    if extra:
        manifest["extra"] = extra
    with open(path, "wb") as f:
        f.write(json_line(manifest))
        for n in names:
            f.write(np.ascontiguousarray(params[n], "<f8").tobytes())


def load_params(path) -> tuple[dict[str, np.ndarray], NetSpec, dict]:
    with open(path, "rb") as f:
        manifest = read_json_line(f)
        require(manifest.get("format") == "uhs-net" and manifest.get("version") == 1,
                f"{path}: not a version-1 uhs-net checkpoint")
        spec = NetSpec.from_dict(manifest["spec"])
        params = {}
        for t in manifest["tensors"]:
            shape = tuple(t["shape"])
            n = int(np.prod(shape))
            raw = f.read(8 * n)
            require(len(raw) == 8 * n, f"{path}: truncated tensor {t['name']}")
            params[t["name"]] = np.frombuffer(raw, "<f8").reshape(shape).copy()
    return params, spec, manifest.get("extra", {})
