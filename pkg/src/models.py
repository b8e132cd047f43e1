"""
Redes do pipeline.

DenseRegNet: tronco encoder-decoder (estilo U-Net, com skips) compartilhado e
duas cabeças densas disjuntas, cada uma com a sequência
Conv3x3 -> GroupNorm -> ReLU -> upsample bilinear x2 -> Conv3x3 (linear).
O decoder termina em H/2; o upsample das cabeças devolve a resolução de entrada.

LocNet: hourglass leve de 4 níveis que recebe apenas (C_sin, C_cos) e devolve
um mapa de picos em (0, 1).
"""
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from src.core.config import read_json, write_json
from src.core.errors import ChannelMismatchError, CheckpointError, DataIOError, PaddingError, ShapeError
from src.fields import FieldStack
from src.numcore import (Tensor, bilinear_upsample, concat, conv2d, group_norm, max_pool2d, parameter, relu,
                         sigmoid, take_channels)
from src.repositories.checkpoint_repository import CheckpointRepository

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
#  Configurações
# ---------------------------------------------------------------------------

@dataclass
class DenseRegNetConfig:
    in_channels: int = 3
    encoder_levels: int = 4
    base_channels: int = 32
    head_mid_channels: int = 32
    groupnorm_groups: int = 8
    separate_head: bool = True
    regress_theta: bool = True

    def validate(self) -> None:
        if self.in_channels not in (3, 4):
            raise ValueError(f"in_channels deve ser 3 (RGB) ou 4 (RGB-D): {self.in_channels}")
        if self.encoder_levels < 1:
            raise ValueError(f"encoder_levels deve ser >= 1: {self.encoder_levels}")
        if self.base_channels % self.groupnorm_groups != 0:
            raise ValueError(f"base_channels ({self.base_channels}) não divisível por groupnorm_groups "
                             f"({self.groupnorm_groups})")
        if self.head_mid_channels % self.groupnorm_groups != 0:
            raise ValueError(f"head_mid_channels ({self.head_mid_channels}) não divisível por groupnorm_groups "
                             f"({self.groupnorm_groups})")


@dataclass
class LocNetConfig:
    levels: int = 4
    base_channels: int = 16
    groupnorm_groups: int = 4

    def validate(self) -> None:
        if self.levels < 1:
            raise ValueError(f"levels deve ser >= 1: {self.levels}")
        if self.base_channels not in (16, 32):
            raise ValueError(f"base_channels do LocNet deve ser 16 ou 32: {self.base_channels}")
        if self.base_channels % self.groupnorm_groups != 0:
            raise ValueError("base_channels do LocNet não divisível por groupnorm_groups")


# ---------------------------------------------------------------------------
#  Camadas
# ---------------------------------------------------------------------------

class Module:
    """Contêiner de parâmetros e submódulos com nomes hierárquicos ('trunk.enc0.conv.weight')."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()

    def add_parameter(self, name: str, tensor: Tensor) -> Tensor:
        self._params[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = OrderedDict(self.named_parameters())
        missing = [k for k in own if k not in state]
        if missing:
            raise CheckpointError(f"Checkpoint sem parâmetros esperados: {missing[:5]}")
        for name, p in own.items():
            arr = state[name]
            if arr.shape != p.shape:
                raise CheckpointError(f"Forma incompatível em '{name}': {arr.shape} != {p.shape}")
            p.data = np.asarray(arr, dtype=p.data.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Conv2dLayer(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.padding = kernel // 2
        self.weight = self.add_parameter("weight", parameter(
            rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel))))
        self.bias = self.add_parameter("bias", parameter(np.zeros(out_channels)))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class GroupNormLayer(Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.groups = groups
        self.gamma = self.add_parameter("gamma", parameter(np.ones(channels)))
        self.beta = self.add_parameter("beta", parameter(np.zeros(channels)))

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta)


class ConvBlock(Module):
    """Conv3x3 -> GroupNorm -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int, groups: int, rng: np.random.Generator):
        super().__init__()
        self.conv = self.add_module("conv", Conv2dLayer(in_channels, out_channels, 3, rng))
        self.norm = self.add_module("norm", GroupNormLayer(out_channels, groups))

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.norm(self.conv(x)))


class DenseHead(Module):
    """Conv3x3 -> GroupNorm -> ReLU -> upsample bilinear x2 -> Conv3x3 linear."""

    def __init__(self, in_channels: int, mid_channels: int, out_channels: int, groups: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = self.add_module("conv1", Conv2dLayer(in_channels, mid_channels, 3, rng))
        self.norm = self.add_module("norm", GroupNormLayer(mid_channels, groups))
        self.conv2 = self.add_module("conv2", Conv2dLayer(mid_channels, out_channels, 3, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(bilinear_upsample(relu(self.norm(self.conv1(x))), 2))


def _check_divisible(x: Tensor, levels: int, op: str) -> None:
    factor = 2 ** levels
    h, w = x.shape[2], x.shape[3]
    for dim, size in (("H", h), ("W", w)):
        if size % factor != 0:
            pad = factor - size % factor
            raise PaddingError(op, dim, f"múltiplo de {factor}", size,
                               f"{op}: {dim}={size} não é divisível por 2^{levels}={factor}; "
                               f"preencha (padding) a entrada com mais {pad} px")


# ---------------------------------------------------------------------------
#  Redes
# ---------------------------------------------------------------------------

class UNetTrunk(Module):
    """
    Encoder de `levels` max-pools com skips. Devolve features em H/2 quando
    `output_stride2` (DenseRegNet) ou em H (LocNet).
    """

    def __init__(self, in_channels: int, channels: List[int], groups: int, rng: np.random.Generator,
                 output_stride2: bool):
        super().__init__()
        self.levels = len(channels) - 1
        self.output_stride2 = output_stride2
        self.enc = []
        prev = in_channels
        for i, c in enumerate(channels):
            self.enc.append(self.add_module(f"enc{i}", ConvBlock(prev, c, groups, rng)))
            prev = c
        self.dec = {}
        last = 1 if output_stride2 else 0
        for i in range(self.levels - 1, last - 1, -1):
            self.dec[i] = self.add_module(f"dec{i}", ConvBlock(prev + channels[i], channels[i], groups, rng))
            prev = channels[i]
        self.out_channels = prev

    def __call__(self, x: Tensor) -> Tensor:
        skips = []
        y = x
        for i, block in enumerate(self.enc):
            if i > 0:
                y = max_pool2d(y, 2, 2)
            y = block(y)
            skips.append(y)
        for i in sorted(self.dec, reverse=True):
            y = bilinear_upsample(y, 2)
            y = self.dec[i](concat([y, skips[i]]))
        return y


class DenseRegNet(Module):
    def __init__(self, config: DenseRegNetConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        base = config.base_channels
        channels = [min(base * 2 ** i, base * 4) for i in range(config.encoder_levels + 1)]
        self.trunk = self.add_module("trunk", UNetTrunk(
            config.in_channels, channels, config.groupnorm_groups, rng, output_stride2=True))
        feat, mid, g = self.trunk.out_channels, config.head_mid_channels, config.groupnorm_groups
        self.center_head: Optional[DenseHead] = None
        self.angle_head: Optional[DenseHead] = None
        self.shared_head: Optional[DenseHead] = None
        if config.regress_theta and not config.separate_head:
            self.shared_head = self.add_module("shared_head", DenseHead(feat, mid, 4, g, rng))
        else:
            self.center_head = self.add_module("center_head", DenseHead(feat, mid, 2, g, rng))
            if config.regress_theta:
                self.angle_head = self.add_module("angle_head", DenseHead(feat, mid, 2, g, rng))

    def __call__(self, x: Tensor) -> Dict[str, Tensor]:
        if x.ndim != 4:
            raise ShapeError("DenseRegNet", "ndim", 4, x.ndim)
        if x.shape[1] != self.config.in_channels:
            raise ChannelMismatchError("DenseRegNet", "C", self.config.in_channels, x.shape[1],
                                       f"Modelo espera {self.config.in_channels} canais, imagem tem {x.shape[1]}")
        _check_divisible(x, self.config.encoder_levels, "DenseRegNet")
        features = self.trunk(x)
        if self.shared_head is not None:
            out = self.shared_head(features)
            names = ("c_sin", "c_cos", "d_sin", "d_cos")
            return {n: take_channels(out, i, i + 1) for i, n in enumerate(names)}
        center = self.center_head(features)
        outputs = {"c_sin": take_channels(center, 0, 1), "c_cos": take_channels(center, 1, 2)}
        if self.angle_head is not None:
            angle = self.angle_head(features)
            outputs["d_sin"] = take_channels(angle, 0, 1)
            outputs["d_cos"] = take_channels(angle, 1, 2)
        return outputs


class LocNet(Module):
    def __init__(self, config: LocNetConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        channels = [config.base_channels] * (config.levels + 1)
        self.trunk = self.add_module("trunk", UNetTrunk(2, channels, config.groupnorm_groups, rng,
                                                        output_stride2=False))
        self.out = self.add_module("out", Conv2dLayer(self.trunk.out_channels, 1, 3, rng))

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 2:
            raise ChannelMismatchError("LocNet", "C", 2, x.shape[1] if x.ndim == 4 else x.shape,
                                       "LocNet recebe apenas os planos (C_sin, C_cos)")
        _check_divisible(x, self.config.levels, "LocNet")
        return self.out(self.trunk(x))

    def __call__(self, x: Tensor) -> Tensor:
        return sigmoid(self.logits(x))


def build_dense_reg_net(config: DenseRegNetConfig, seed: int = 0) -> DenseRegNet:
    model = DenseRegNet(config, np.random.default_rng(seed))
    logger.debug(f"DenseRegNet construído: {model.parameter_count()} parâmetros")
    return model


def build_loc_net(config: LocNetConfig, seed: int = 0) -> LocNet:
    model = LocNet(config, np.random.default_rng(seed))
    logger.debug(f"LocNet construído: {model.parameter_count()} parâmetros")
    return model


def as_batch(image: Union[np.ndarray, Tensor]) -> Tensor:
    """C x H x W ou N x C x H x W -> Tensor N x C x H x W sem gradiente."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim == 3:
        data = data[None]
    return Tensor(data)


def forward_regression(model: DenseRegNet, image: Union[np.ndarray, Tensor]) -> FieldStack:
    """Predição dos quatro planos para uma única imagem (planos H x W)."""
    x = as_batch(image)
    if x.shape[0] != 1:
        raise ShapeError("forward_regression", "N", 1, x.shape[0])
    out = model(x)
    plane = lambda key: out[key].data[0, 0].astype(np.float64) if key in out else None
    return FieldStack(plane("c_sin"), plane("c_cos"), plane("d_sin"), plane("d_cos"))


# ---------------------------------------------------------------------------
#  Persistência (CDN3 + sidecar JSON da configuração)
# ---------------------------------------------------------------------------

MODEL_KINDS = {"dense_reg_net": (DenseRegNetConfig, build_dense_reg_net), "loc_net": (LocNetConfig, build_loc_net)}


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(model: Module, path: Union[str, Path], extra: Optional[Dict[str, np.ndarray]] = None,
                    metadata: Optional[dict] = None) -> Path:
    kind = "dense_reg_net" if isinstance(model, DenseRegNet) else "loc_net"
    tensors = model.state_dict()
    for name, arr in (extra or {}).items():
        tensors[name] = np.asarray(arr)
    CheckpointRepository.save(path, tensors)
    write_json(sidecar_path(path), {"kind": kind, "config": asdict(model.config), **(metadata or {})})
    return Path(path)


def load_checkpoint(path: Union[str, Path], expected_kind: Optional[str] = None
                    ) -> Tuple[Module, "OrderedDict[str, np.ndarray]"]:
    """Reconstrói o modelo a partir do sidecar e carrega os pesos; devolve também os tensores extras."""
    side = sidecar_path(path)
    if not side.exists():
        raise DataIOError(f"Configuração do checkpoint não encontrada: {side}")
    meta = read_json(side)
    kind = meta.get("kind")
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"Tipo de modelo desconhecido no sidecar: {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"Checkpoint {path} é '{kind}', esperado '{expected_kind}'")
    config_cls, builder = MODEL_KINDS[kind]
    try:
        config = config_cls(**meta["config"])
    except TypeError as e:
        raise CheckpointError(f"Configuração incompatível no sidecar {side}: {e}") from e
    model = builder(config)
    tensors = CheckpointRepository.load(path)
    model.load_state_dict(tensors)
    own = set(name for name, _ in model.named_parameters())
    extras = OrderedDict((k, v) for k, v in tensors.items() if k not in own)
    return model, extras
