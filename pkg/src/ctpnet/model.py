"""CTP-Net: character texture stream, image texture stream and the
forgery localization decoder, assembled from the engine ops."""
from __future__ import annotations

import dataclasses
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .engine import (
    RunningStats,
    Tensor,
    add,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    no_grad,
    pool2d,
    relu,
    softmax_channels,
)

FORGED = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
# kernel 2, zero pad 1 on the bottom/right: stride-1 pooling that keeps H x W
SAME_POOL_PAD = (0, 1, 0, 1)
# kernel 4, stride 2, pad 1: exact x2 upsampling
DECONV_K, DECONV_STRIDE, DECONV_PAD = 4, 2, 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Every width/depth the architecture leaves open.

    ITS transpose layers T1..T5 sit after FEB1, FEB2, FEB3, DDB1, DDB2; since
    feature-enhanced blocks keep their width, T1/T2 must emit the width of
    FEB2/FEB3 and T5 must emit ``fusion_channels``.
    """

    input_size: Tuple[int, int] = (64, 64)
    cts_channels: Tuple[int, ...] = (16, 16, 32, 32, 32, 32)
    feb_layers: Tuple[int, ...] = (3, 3, 3)
    feb_channels: Tuple[int, ...] = (16, 16, 32)
    ddb_layers: int = 3
    ddb_growth: int = 8
    its_transpose_channels: Tuple[int, ...] = (16, 32, 32, 32, 32)
    fln_deconv_channels: Tuple[int, ...] = (32, 16, 16)
    fln_transpose_channels: Tuple[int, ...] = (32, 16)
    fusion_channels: int = 32

    def __post_init__(self) -> None:
        for name in (
            "input_size",
            "cts_channels",
            "feb_layers",
            "feb_channels",
            "its_transpose_channels",
            "fln_deconv_channels",
            "fln_transpose_channels",
        ):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    @classmethod
    def desk(cls, input_size: int = 64) -> "ModelConfig":
        return cls(input_size=(input_size, input_size))

    @classmethod
    def tiny(cls, input_size: int = 64) -> "ModelConfig":
        return cls(
            input_size=(input_size, input_size),
            cts_channels=(8, 8, 16, 16, 32, 32),
            feb_layers=(2, 2, 2),
            feb_channels=(8, 8, 16),
            ddb_layers=2,
            ddb_growth=8,
            its_transpose_channels=(8, 16, 16, 24, 32),
            fln_deconv_channels=(16, 16, 8),
            fln_transpose_channels=(16, 16),
            fusion_channels=32,
        )

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        # the training resolution used at full scale; widths remain our choice
        return cls(
            input_size=(512, 512),
            cts_channels=(64, 64, 128, 128, 256, 256),
            feb_channels=(32, 32, 64),
            its_transpose_channels=(32, 64, 128, 192, 256),
            ddb_layers=4,
            ddb_growth=32,
            fln_deconv_channels=(128, 64, 32),
            fln_transpose_channels=(128, 64),
            fusion_channels=256,
        )

    def validate(self) -> None:
        lengths = {
            "input_size": 2,
            "cts_channels": 6,
            "feb_layers": 3,
            "feb_channels": 3,
            "its_transpose_channels": 5,
            "fln_deconv_channels": 3,
            "fln_transpose_channels": 2,
        }
        for name, n in lengths.items():
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} needs {n} values, got {getattr(self, name)}")
        ints = [
            *self.input_size,
            *self.cts_channels,
            *self.feb_layers,
            *self.feb_channels,
            *self.its_transpose_channels,
            *self.fln_deconv_channels,
            *self.fln_transpose_channels,
            self.ddb_layers,
            self.ddb_growth,
            self.fusion_channels,
        ]
        if min(ints) < 1:
            raise ConfigError("all config values must be positive")
        h, w = self.input_size
        if h % 8 or w % 8:
            raise ConfigError(f"input size {h}x{w} must be divisible by 8")
        if self.cts_channels[-1] != self.fusion_channels:
            raise ConfigError("last CTS width must equal fusion_channels")
        if self.its_transpose_channels[-1] != self.fusion_channels:
            raise ConfigError("last ITS transpose width must equal fusion_channels")
        t = self.its_transpose_channels
        if t[0] != self.feb_channels[1] or t[1] != self.feb_channels[2]:
            raise ConfigError("T1/T2 widths must equal the widths of FEB2/FEB3")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor


@dataclass
class BNParams:
    gamma: Tensor
    beta: Tensor
    stats: RunningStats


@dataclass
class ConvUnit:
    """3x3 conv -> BN -> ReLU."""

    conv: ConvParams
    bn: BNParams


@dataclass
class TransposeParams:
    bn: BNParams
    conv: ConvParams


@dataclass
class CTSParams:
    convs: List[ConvParams]


@dataclass
class ITSParams:
    stem: ConvUnit
    febs: List[List[ConvUnit]]
    ddbs: List[List[ConvUnit]]
    transposes: List[TransposeParams]


@dataclass
class FLNParams:
    deconvs: List[ConvParams]
    dense: List[List[ConvUnit]]
    transposes: List[TransposeParams]
    head: ConvParams


class _Registry:
    """Creates parameters in declaration order with fan-in scaled normal init."""

    def __init__(self, rng: np.random.Generator, dtype) -> None:
        self.rng = rng
        self.dtype = dtype
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.stats: "OrderedDict[str, RunningStats]" = OrderedDict()

    def _add(self, name: str, arr: np.ndarray) -> Tensor:
        t = Tensor(arr.astype(self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def conv(self, name: str, cin: int, cout: int, k: int) -> ConvParams:
        std = np.sqrt(2.0 / (cin * k * k))
        w = self.rng.standard_normal((cout, cin, k, k)) * std
        return ConvParams(self._add(f"{name}.weight", w), self._add(f"{name}.bias", np.zeros(cout)))

    def deconv(self, name: str, cin: int, cout: int) -> ConvParams:
        # each output pixel receives cin * (k / stride)^2 taps
        fan_in = cin * (DECONV_K // DECONV_STRIDE) ** 2
        w = self.rng.standard_normal((cin, cout, DECONV_K, DECONV_K)) * np.sqrt(2.0 / fan_in)
        return ConvParams(self._add(f"{name}.weight", w), self._add(f"{name}.bias", np.zeros(cout)))

    def bn(self, name: str, c: int) -> BNParams:
        gamma = self._add(f"{name}.gamma", np.ones(c))
        beta = self._add(f"{name}.beta", np.zeros(c))
        stats = RunningStats.fresh(c, self.dtype, BN_MOMENTUM)
        self.stats[name] = stats
        return BNParams(gamma, beta, stats)

    def unit(self, name: str, cin: int, cout: int) -> ConvUnit:
        return ConvUnit(self.conv(f"{name}.conv", cin, cout, 3), self.bn(f"{name}.bn", cout))

    def transpose(self, name: str, cin: int, cout: int) -> TransposeParams:
        return TransposeParams(self.bn(f"{name}.bn", cin), self.conv(f"{name}.conv", cin, cout, 1))


class CTPNet:
    """Parameters plus forward passes. ``training`` selects batch-norm mode."""

    def __init__(
        self,
        config: ModelConfig,
        cts: CTSParams,
        its: ITSParams,
        fln: FLNParams,
        params: "OrderedDict[str, Tensor]",
        stats: "OrderedDict[str, RunningStats]",
    ) -> None:
        self.config = config
        self.cts, self.its, self.fln = cts, its, fln
        self.params = params
        self.stats = stats
        self.training = True

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def train(self) -> "CTPNet":
        self.training = True
        return self

    def eval(self) -> "CTPNet":
        self.training = False
        return self

    def forward(self, image: Tensor) -> Tensor:
        """Logits (N, 2, H, W)."""
        fused = fuse(cts_forward(self, image), its_forward(self, image))
        return fln_forward(self, fused)

    __call__ = forward

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then running statistics, in declaration order."""
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.params.items():
            out[name] = p.data
        for name, s in self.stats.items():
            out[f"{name}.running_mean"] = s.mean
            out[f"{name}.running_var"] = s.var
        return out


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> CTPNet:
    """Deterministically initialize every parameter from ``seed``."""
    config.validate()
    reg = _Registry(np.random.default_rng(seed), dtype)
    c = config

    cts_in = (3,) + c.cts_channels[:-1]
    cts = CTSParams([reg.conv(f"cts.conv{i + 1}", cin, cout, 3) for i, (cin, cout) in enumerate(zip(cts_in, c.cts_channels))])

    stem = reg.unit("its.stem", 3, c.feb_channels[0])
    febs = [
        [reg.unit(f"its.feb{b + 1}.layer{i + 1}", width, width) for i in range(n)]
        for b, (n, width) in enumerate(zip(c.feb_layers, c.feb_channels))
    ]
    t = c.its_transpose_channels
    transposes = [
        reg.transpose("its.t1", c.feb_channels[0], t[0]),
        reg.transpose("its.t2", c.feb_channels[1], t[1]),
        reg.transpose("its.t3", c.feb_channels[2], t[2]),
    ]
    ddbs = []
    width = t[2]
    for d in range(2):
        ddbs.append(_dense_units(reg, f"its.ddb{d + 1}", width, c.ddb_layers, c.ddb_growth))
        transposes.append(reg.transpose(f"its.t{d + 4}", width + c.ddb_layers * c.ddb_growth, t[d + 3]))
        width = t[d + 3]
    its = ITSParams(stem, febs, ddbs, transposes)

    deconvs, dense, fln_t = [], [], []
    width = c.fusion_channels
    for i in range(3):
        deconvs.append(reg.deconv(f"fln.deconv{i + 1}", width, c.fln_deconv_channels[i]))
        width = c.fln_deconv_channels[i]
        if i < 2:
            dense.append(_dense_units(reg, f"fln.dense{i + 1}", width, c.ddb_layers, c.ddb_growth))
            fln_t.append(reg.transpose(f"fln.t{i + 1}", width + c.ddb_layers * c.ddb_growth, c.fln_transpose_channels[i]))
            width = c.fln_transpose_channels[i]
    head = reg.conv("fln.head", width, 2, 1)
    fln = FLNParams(deconvs, dense, fln_t, head)
    return CTPNet(config, cts, its, fln, reg.params, reg.stats)


def _dense_units(reg: _Registry, name: str, c0: int, layers: int, growth: int) -> List[ConvUnit]:
    return [reg.unit(f"{name}.layer{i + 1}", c0 + i * growth, growth) for i in range(layers)]


def _check_divisible(image: Tensor) -> None:
    if image.ndim != 4:
        raise ValueError(f"expected an (N, C, H, W) image batch, got shape {image.shape}")
    h, w = image.shape[2:]
    if h % 8 or w % 8:
        raise ValueError(f"image size {h}x{w} must be divisible by 8")


def _bn(x: Tensor, p: BNParams, train: bool) -> Tensor:
    return batch_norm(x, p.gamma, p.beta, BN_EPS, train, p.stats)


def conv_unit(x: Tensor, unit: ConvUnit, train: bool, dilation: int = 1) -> Tensor:
    y = conv2d(x, unit.conv.weight, unit.conv.bias, stride=1, dilation=dilation, padding=dilation)
    return relu(_bn(y, unit.bn, train))


def cts_forward(model: CTPNet, image: Tensor) -> Tensor:
    """Six 3x3 conv+ReLU layers; max-pool after each but the third.

    The first two pools have stride 1 (resolution kept), the last three stride 2.
    """
    _check_divisible(image)
    x = image
    for i, conv in enumerate(model.cts.convs):
        x = relu(conv2d(x, conv.weight, conv.bias, stride=1, padding=1))
        if i < 2:
            x = pool2d(x, "max", 2, 1, SAME_POOL_PAD)
        elif i > 2:
            x = pool2d(x, "max", 2, 2)
    return x


def feature_enhanced_block(f0: Tensor, units: Sequence[ConvUnit], train: bool, n: Optional[int] = None) -> Tensor:
    """f_i = H_i(f_{i-1} + f_{i-2}) for i = 1..n with f_{-1} = 0, so f_1 = H_1(f_0)."""
    if n is not None and n != len(units):
        raise ValueError(f"block has {len(units)} layers, expected n={n}")
    if not units:
        raise ValueError("feature-enhanced block needs n >= 1")
    prev2: Optional[Tensor] = None
    prev = f0
    for unit in units:
        inp = prev if prev2 is None else add(prev, prev2)
        out = conv_unit(inp, unit, train)
        if out.shape != f0.shape:
            raise ValueError(f"feature-enhanced layer changed shape {f0.shape} -> {out.shape}")
        prev2, prev = prev, out
    return prev


def dense_block(f0: Tensor, units: Sequence[ConvUnit], train: bool, dilation: int = 1) -> Tensor:
    """Each layer sees the channel concatenation of the block input and all earlier outputs."""
    feats = [f0]
    for unit in units:
        inp = feats[0] if len(feats) == 1 else concat(feats)
        feats.append(conv_unit(inp, unit, train, dilation))
    return concat(feats)


def dilated_dense_block(f0: Tensor, units: Sequence[ConvUnit], train: bool) -> Tensor:
    return dense_block(f0, units, train, dilation=2)


def transpose_layer(f: Tensor, params: TransposeParams, pool_mode: str, train: bool) -> Tensor:
    """BN -> ReLU -> 1x1 conv -> pool (``max_s1`` keeps size, ``avg_s2`` halves it)."""
    x = relu(_bn(f, params.bn, train))
    x = conv2d(x, params.conv.weight, params.conv.bias)
    if pool_mode == "max_s1":
        return pool2d(x, "max", 2, 1, SAME_POOL_PAD)
    if pool_mode == "avg_s2":
        h, w = x.shape[2:]
        if h % 2 or w % 2:
            raise ValueError(f"avg_s2 transpose layer needs even spatial size, got {h}x{w}")
        return pool2d(x, "avg", 2, 2)
    raise ValueError(f"unknown pool mode {pool_mode!r}")


def its_forward(model: CTPNet, image: Tensor) -> Tensor:
    _check_divisible(image)
    its, train = model.its, model.training
    x = conv_unit(image, its.stem, train)
    modes = ("max_s1", "max_s1", "avg_s2")
    for units, tparams, mode in zip(its.febs, its.transposes[:3], modes):
        x = transpose_layer(feature_enhanced_block(x, units, train), tparams, mode, train)
    for units, tparams in zip(its.ddbs, its.transposes[3:]):
        x = transpose_layer(dilated_dense_block(x, units, train), tparams, "avg_s2", train)
    return x


def fuse(cts_feat: Tensor, its_feat: Tensor) -> Tensor:
    if cts_feat.shape != its_feat.shape:
        raise ValueError(f"cannot fuse {cts_feat.shape} with {its_feat.shape}")
    return add(cts_feat, its_feat)


def fln_forward(model: CTPNet, fused: Tensor) -> Tensor:
    """deconv -> dense -> T(max_s1), twice, then deconv -> 1x1 conv to 2 logits."""
    fln, train = model.fln, model.training
    x = fused
    for i, dc in enumerate(fln.deconvs):
        x = relu(conv_transpose2d(x, dc.weight, dc.bias, DECONV_STRIDE, DECONV_PAD))
        if i < 2:
            x = dense_block(x, fln.dense[i], train)
            x = transpose_layer(x, fln.transposes[i], "max_s1", train)
    return conv2d(x, fln.head.weight, fln.head.bias)


def predict_mask(model: CTPNet, image: Tensor) -> Tuple[np.ndarray, np.ndarray]:
    """Forged-class probability map (N, H, W) and its strict > 0.5 mask."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            prob = softmax_channels(model.forward(image)).data[:, FORGED]
    finally:
        model.training = was_training
    return prob, (prob > 0.5).astype(np.uint8)
