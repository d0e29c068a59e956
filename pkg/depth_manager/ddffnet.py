"""
Réseau encodeur-décodeur de depth-from-focus

Encodeur : les 13 convolutions et 5 poolings d'un VGG16 (sans couches
entièrement connectées), chaque convolution suivie d'une BatchNorm et d'un ReLU.
Décodeur : miroir de l'encodeur ; l'upsampling dépend de la variante :
    UNPOOL  unpooling 2×2 avec les indices du pooling correspondant
    BL      interpolation bilinéaire ×2
    UPCONV  up-convolution 4×4 de pas 2, initialisée en bilinéaire
    CC1-3   UPCONV + concaténation de conv1_2 (CC1), conv2_2 (CC2), conv3_3 (CC3)
La pile est repliée dans la dimension batch : le tronc produit une carte par
tranche, puis la couche Score (1×1 sur les S tranches) régresse la disparité.

Largeurs du décodeur (avant multiplicateur de largeur, + skip éventuel) :
    étage 5 : up 512 | 512→512, 512→512, 512→512
    étage 4 : up 512 | 512→512, 512→512, 512→256
    étage 3 : up 256 | 256(+256)→256, 256→256, 256→128
    étage 2 : up 128 | 128(+128)→128, 128→64
    étage 1 : up 64  | 64(+64)→64, 64→1 (sans BN ni ReLU)
"""
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import DFLF_PATTERN_LENGTH, NETWORK_VARIANTS, SPATIAL_MULTIPLE
from .exceptions import ParameterError, ShapeError
from .lightfield_core import LightField

logger = logging.getLogger(__name__)

# Équivalent PyTorch d'une moyenne glissante de momentum 0.9
BN_MOMENTUM = 0.1

# (largeur, nombre de convolutions) par étage de l'encodeur
ENCODER_STAGES = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))

# étage -> (largeur d'upsampling, [(nom, entrée, sortie)])
DECODER_STAGES = OrderedDict([
    (5, (512, [("conv5_3_D", 512, 512), ("conv5_2_D", 512, 512), ("conv5_1_D", 512, 512)])),
    (4, (512, [("conv4_3_D", 512, 512), ("conv4_2_D", 512, 512), ("conv4_1_D", 512, 256)])),
    (3, (256, [("conv3_3_D", 256, 256), ("conv3_2_D", 256, 256), ("conv3_1_D", 256, 128)])),
    (2, (128, [("conv2_2_D", 128, 128), ("conv2_1_D", 128, 64)])),
    (1, (64, [("conv1_2_D", 64, 64), ("conv1_1_D", 64, 1)])),
])

SKIP_STAGES = {"CC1": (1,), "CC2": (1, 2), "CC3": (1, 2, 3)}

# Étages suivis d'un dropout après le pooling et précédés d'un dropout avant l'upsampling
DROPOUT_STAGES = (3, 4, 5)

# Indices des couches de `features` d'un vgg16_bn torchvision, dans l'ordre de l'encodeur
VGG16_BN_CONV_INDICES = (0, 3, 7, 10, 14, 17, 20, 24, 27, 30, 34, 37, 40)


@dataclass(frozen=True)
class NetworkSpec:
    variant: str
    stack_size: int
    input_channels: int = 3
    width_multiplier: float = 1.0
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.variant not in NETWORK_VARIANTS:
            raise ParameterError(f"Variante inconnue : {self.variant} (attendu : {', '.join(NETWORK_VARIANTS)})")
        if self.stack_size < 1:
            raise ParameterError(f"stack_size doit être ≥ 1 (reçu {self.stack_size})")
        if self.input_channels < 1:
            raise ParameterError(f"input_channels doit être ≥ 1 (reçu {self.input_channels})")
        if not 0 < self.width_multiplier <= 1 or int(64 * self.width_multiplier) < 1:
            raise ParameterError(f"width_multiplier doit être dans [1/64, 1] (reçu {self.width_multiplier})")
        if not 0 <= self.dropout_p < 1:
            raise ParameterError(f"dropout_p doit être dans [0, 1[ (reçu {self.dropout_p})")

    def width(self, channels: int) -> int:
        return max(1, int(channels * self.width_multiplier))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        return cls(
            variant=str(data["variant"]),
            stack_size=int(data["stack_size"]),
            input_channels=int(data.get("input_channels", 3)),
            width_multiplier=float(data.get("width_multiplier", 1.0)),
            dropout_p=float(data.get("dropout_p", 0.5)),
        )


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(OrderedDict([
            ("conv", nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)),
            ("bn", nn.BatchNorm2d(out_channels, momentum=BN_MOMENTUM)),
            ("relu", nn.ReLU(inplace=True)),
        ]))


def bilinear_kernel(channels: int, size: int = 4) -> torch.Tensor:
    """Poids (canaux, canaux, size, size) d'une up-convolution équivalente à l'interpolation bilinéaire"""
    factor = (size + 1) // 2
    center = factor - 1 if size % 2 == 1 else factor - 0.5
    og = torch.arange(size, dtype=torch.float32)
    filt_1d = 1 - torch.abs(og - center) / factor
    filt = filt_1d[:, None] * filt_1d[None, :]
    weight = torch.zeros(channels, channels, size, size)
    for c in range(channels):
        weight[c, c] = filt
    return weight


class DDFFNet(nn.Module):

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.force_dropout = False
        self.skip_stages = SKIP_STAGES.get(spec.variant, ())

        self.register_buffer("input_mean", torch.zeros(spec.input_channels))
        self.register_buffer("input_std", torch.ones(spec.input_channels))

        in_channels = spec.input_channels
        for stage, (width, n_convs) in enumerate(ENCODER_STAGES, start=1):
            for i in range(1, n_convs + 1):
                self.add_module(f"conv{stage}_{i}", ConvBNReLU(in_channels, spec.width(width)))
                in_channels = spec.width(width)

        for stage, (up_width, convs) in DECODER_STAGES.items():
            channels = spec.width(up_width)
            if spec.variant == "BL":
                self.add_module(f"up{stage}", nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False))
            elif spec.variant != "UNPOOL":
                self.add_module(f"up{stage}", nn.ConvTranspose2d(channels, channels, kernel_size=4, stride=2, padding=1))
            for j, (name, cin, cout) in enumerate(convs):
                cin = spec.width(cin)
                if j == 0 and stage in self.skip_stages:
                    cin += spec.width(ENCODER_STAGES[stage - 1][0])
                if name == "conv1_1_D":
                    self.add_module(name, nn.Conv2d(cin, 1, kernel_size=3, padding=1))
                else:
                    self.add_module(name, ConvBNReLU(cin, spec.width(cout)))

        self.score = nn.Conv2d(spec.stack_size, 1, kernel_size=1)
        self._init_weights()

    def _init_weights(self):
        for module in self.modules():
            if isinstance(module, nn.ConvTranspose2d):
                module.weight.data.copy_(bilinear_kernel(module.in_channels, module.kernel_size[0]))
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_out", nonlinearity="relu")
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        nn.init.constant_(self.score.weight, 1.0 / self.spec.stack_size)
        nn.init.zeros_(self.score.bias)

    def set_input_normalization(self, mean: Sequence[float], std: Sequence[float]):
        self.input_mean.copy_(torch.as_tensor(mean, dtype=torch.float32))
        self.input_std.copy_(torch.as_tensor(std, dtype=torch.float32).clamp(min=1e-6))

    def _dropout(self, x: torch.Tensor) -> torch.Tensor:
        return F.dropout(x, p=self.spec.dropout_p, training=self.training or self.force_dropout)

    def trunk(self, x: torch.Tensor) -> torch.Tensor:
        """(N, C, H, W) -> (N, 1, H, W), H et W multiples de 32"""
        skips, switches, sizes = {}, {}, {}
        for stage, (_, n_convs) in enumerate(ENCODER_STAGES, start=1):
            for i in range(1, n_convs + 1):
                x = getattr(self, f"conv{stage}_{i}")(x)
            skips[stage] = x
            sizes[stage] = x.shape[-2:]
            if self.spec.variant == "UNPOOL":
                x, switches[stage] = F.max_pool2d(x, kernel_size=2, stride=2, return_indices=True)
            else:
                x = F.max_pool2d(x, kernel_size=2, stride=2)
            if stage in DROPOUT_STAGES:
                x = self._dropout(x)

        for stage, (_, convs) in DECODER_STAGES.items():
            if stage in DROPOUT_STAGES:
                x = self._dropout(x)
            if self.spec.variant == "UNPOOL":
                x = F.max_unpool2d(x, switches[stage], kernel_size=2, stride=2, output_size=sizes[stage])
            else:
                x = getattr(self, f"up{stage}")(x)
            if stage in self.skip_stages:
                x = torch.cat([x, skips[stage]], dim=1)
            for name, _, _ in convs:
                x = getattr(self, name)(x)
        return x

    def _slice_maps(self, batch: torch.Tensor) -> torch.Tensor:
        """(B, S, H, W, C) -> cartes par tranche (B, S, H, W)"""
        if batch.ndim != 5:
            raise ShapeError(f"Entrée (B, S, H, W, C) attendue, reçu {tuple(batch.shape)}")
        n_batch, n_slices, height, width, channels = batch.shape
        if n_slices != self.spec.stack_size:
            raise ShapeError(f"Pile de {n_slices} tranches pour un réseau à S={self.spec.stack_size}")
        if channels != self.spec.input_channels:
            raise ShapeError(f"{channels} canaux pour un réseau à {self.spec.input_channels}")

        x = batch.permute(0, 1, 4, 2, 3).reshape(n_batch * n_slices, channels, height, width)
        x = (x - self.input_mean[None, :, None, None]) / self.input_std[None, :, None, None]

        pad_h = (-height) % SPATIAL_MULTIPLE
        pad_w = (-width) % SPATIAL_MULTIPLE
        top, left = pad_h // 2, pad_w // 2
        padding = (left, pad_w - left, top, pad_h - top)
        if pad_h or pad_w:
            mode = "reflect" if pad_h < height and pad_w < width else "replicate"
            x = F.pad(x, padding, mode=mode)

        maps = self.trunk(x)
        maps = maps.reshape(n_batch, n_slices, height + pad_h, width + pad_w)
        return maps[:, :, top:top + height, left:left + width]

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        """(B, S, H, W, C) -> disparité (B, H, W)"""
        maps = self._slice_maps(batch)
        # Score après recadrage : conv 1×1, identique avant ou après
        return self.score(maps)[:, 0]


def build_network(spec: NetworkSpec, seed: Optional[int] = None) -> DDFFNet:
    if seed is not None:
        torch.manual_seed(seed)
    model = DDFFNet(spec)
    n_params = sum(p.numel() for p in model.parameters())
    logger.debug(f"Réseau {spec.variant} construit : {n_params} paramètres")
    return model


def _as_batch(batch: Any) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch.to(torch.float32)
    return torch.as_tensor(np.asarray(batch), dtype=torch.float32)


def forward(model: DDFFNet, batch: Any, force_dropout: bool = False) -> np.ndarray:
    """Inférence (B, S, H, W, C) -> (B, H, W) : BatchNorm en statistiques glissantes, dropout coupé"""
    model.eval()
    model.force_dropout = force_dropout
    try:
        with torch.no_grad():
            output = model(_as_batch(batch))
    finally:
        model.force_dropout = False
    return output.numpy()


def slice_score_maps(model: DDFFNet, stack: Any) -> np.ndarray:
    """Cartes (S, H, W) produites par le tronc pour chaque tranche, avant la couche Score"""
    stack = _as_batch(stack)
    if stack.ndim == 4:
        stack = stack[None]
    model.eval()
    with torch.no_grad():
        maps = model._slice_maps(stack)
    return maps[0].numpy()


# =============================================================================
# ENTRÉE DFLF (sous-ouvertures en guise de pile)
# =============================================================================

def default_dflf_pattern(grid_u: int = 9, grid_v: int = 9) -> List[Tuple[int, int]]:
    """
    Centre, extrémités de la ligne et de la colonne centrales, 4 coins,
    voisins horizontaux du centre. Sur 9×9 : (4, 4), (0, 4), (8, 4), (4, 0),
    (4, 8), (0, 0), (0, 8), (8, 0), (8, 8), (5, 4), (3, 4).
    """
    if grid_u < 3 or grid_v < 3:
        raise ParameterError(f"Grille {grid_u}×{grid_v} trop petite pour le motif DFLF")
    cu, cv = (grid_u - 1) // 2, (grid_v - 1) // 2
    last_u, last_v = grid_u - 1, grid_v - 1
    return [
        (cu, cv),
        (0, cv), (last_u, cv), (cu, 0), (cu, last_v),
        (0, 0), (0, last_v), (last_u, 0), (last_u, last_v),
        (cu + 1, cv), (cu - 1, cv),
    ]


def _validate_pattern(pattern: Sequence[Tuple[int, int]], grid_u: int, grid_v: int) -> List[Tuple[int, int]]:
    pattern = [(int(u), int(v)) for u, v in pattern]
    if len(pattern) != DFLF_PATTERN_LENGTH:
        raise ParameterError(f"Le motif DFLF compte {DFLF_PATTERN_LENGTH} sous-ouvertures (reçu {len(pattern)})")
    if len(set(pattern)) != len(pattern):
        raise ParameterError(f"Sous-ouvertures dupliquées dans le motif : {pattern}")
    outside = [p for p in pattern if not (0 <= p[0] < grid_u and 0 <= p[1] < grid_v)]
    if outside:
        raise ParameterError(f"Sous-ouvertures hors de la grille {grid_u}×{grid_v} : {outside}")
    return pattern


def dflf_input(lightfield: LightField, pattern: Optional[Sequence[Tuple[int, int]]] = None) -> np.ndarray:
    """Pseudo-pile (11, H, W, C) des sous-ouvertures du motif, dans l'ordre du motif"""
    intr = lightfield.intrinsics
    if pattern is None:
        pattern = default_dflf_pattern(intr.grid_u, intr.grid_v)
    pattern = _validate_pattern(pattern, intr.grid_u, intr.grid_v)
    return np.stack([lightfield.samples[u, v] for u, v in pattern]).astype(np.float64)


# =============================================================================
# POIDS PRÉ-ENTRAÎNÉS
# =============================================================================

def load_encoder_weights(model: DDFFNet, path: str) -> int:
    """
    Charge les 13 convolutions (et BatchNorm) d'un state dict `vgg16_bn`
    torchvision (clés `features.<i>.*`) dans l'encodeur. Retourne le nombre
    de tenseurs copiés.
    """
    if model.spec.width_multiplier != 1.0 or model.spec.input_channels != 3:
        raise ParameterError("Les poids VGG16 ne s'appliquent qu'à width_multiplier=1 et 3 canaux")
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    state = {k[len("features."):] if k.startswith("features.") else k: v for k, v in state.items()}

    names = [f"conv{stage}_{i}" for stage, (_, n) in enumerate(ENCODER_STAGES, start=1) for i in range(1, n + 1)]
    copied = 0
    with torch.no_grad():
        for name, index in zip(names, VGG16_BN_CONV_INDICES):
            block = getattr(model, name)
            targets = {
                f"{index}.weight": block.conv.weight, f"{index}.bias": block.conv.bias,
                f"{index + 1}.weight": block.bn.weight, f"{index + 1}.bias": block.bn.bias,
                f"{index + 1}.running_mean": block.bn.running_mean, f"{index + 1}.running_var": block.bn.running_var,
            }
            for key, target in targets.items():
                if key not in state:
                    raise ShapeError(f"Clé {key} absente des poids {path}")
                if tuple(state[key].shape) != tuple(target.shape):
                    raise ShapeError(f"{key} : {tuple(state[key].shape)} ≠ {tuple(target.shape)}")
                target.copy_(state[key])
                copied += 1
    logger.info(f"📥 Encodeur initialisé depuis {path} ({copied} tenseurs)")
    return copied
