"""
Entraînement du réseau : perte L2 masquée, découpage en patchs, boucle SGD
"""
import copy
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from .config import MAX_MISSING_FRACTION, PATCH_SIZE, PATCH_STRIDE, TRAINING_DEFAULTS
from .ddffnet import DDFFNet, NetworkSpec
from .exceptions import ParameterError, ShapeError, TrainingDivergedError
from .lightfield_core import DisparityMap

logger = logging.getLogger(__name__)


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    seed: int
    learning_rate: float = TRAINING_DEFAULTS["learning_rate"]
    momentum: float = TRAINING_DEFAULTS["momentum"]
    batch_size: int = TRAINING_DEFAULTS["batch_size"]
    lr_decay: float = TRAINING_DEFAULTS["lr_decay"]
    decay_epochs: int = TRAINING_DEFAULTS["decay_epochs"]
    weight_decay: float = TRAINING_DEFAULTS["weight_decay"]
    epochs: int = TRAINING_DEFAULTS["epochs"]
    validation_fraction: float = TRAINING_DEFAULTS["validation_fraction"]

    def __post_init__(self):
        positives = {
            "learning_rate": self.learning_rate, "momentum": self.momentum, "batch_size": self.batch_size,
            "lr_decay": self.lr_decay, "decay_epochs": self.decay_epochs, "epochs": self.epochs,
        }
        invalid = [name for name, value in positives.items() if not value > 0]
        if invalid:
            raise ParameterError(f"Paramètres d'entraînement non positifs : {', '.join(invalid)}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay doit être ≥ 0 (reçu {self.weight_decay})")
        if not 0 <= self.validation_fraction < 1:
            raise ParameterError(f"validation_fraction doit être dans [0, 1[ (reçu {self.validation_fraction})")

    def learning_rate_at(self, epoch: int) -> float:
        """lr × lr_decay^(epoch // decay_epochs), epoch en base 0"""
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_epochs)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], seed: int) -> "TrainConfig":
        known = {k: v for k, v in data.items() if k in TRAINING_DEFAULTS}
        return cls(seed=seed, **known)


@dataclass
class PatchSet:
    """
    Patchs (N, S, taille, taille, C), disparités et masques (N, taille, taille),
    provenance (indice de pile, haut, gauche) de chaque patch.
    """
    stacks: np.ndarray
    disparities: np.ndarray
    masks: np.ndarray
    provenance: List[Tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.stacks) == len(self.disparities) == len(self.masks) == len(self.provenance)):
            raise ShapeError("PatchSet : longueurs incohérentes")

    def __len__(self) -> int:
        return len(self.provenance)

    @property
    def stack_ids(self) -> List[int]:
        return sorted({p[0] for p in self.provenance})

    def select(self, stack_ids: Sequence[int]) -> "PatchSet":
        keep = [i for i, p in enumerate(self.provenance) if p[0] in set(stack_ids)]
        return PatchSet(self.stacks[keep], self.disparities[keep], self.masks[keep],
                        [self.provenance[i] for i in keep])

    @classmethod
    def concatenate(cls, parts: Sequence["PatchSet"]) -> "PatchSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros((0, 1, 1, 1, 1), np.float32), np.zeros((0, 1, 1)), np.zeros((0, 1, 1), bool), [])
        return cls(
            np.concatenate([p.stacks for p in parts]),
            np.concatenate([p.disparities for p in parts]),
            np.concatenate([p.masks for p in parts]),
            [prov for p in parts for prov in p.provenance],
        )


@dataclass
class TrainedModel:
    spec: NetworkSpec
    model: DDFFNet
    metadata: Dict[str, Any] = field(default_factory=dict)
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def parameters(self) -> Dict[str, torch.Tensor]:
        return dict(self.model.state_dict())

    @property
    def normalization(self) -> Dict[str, List[float]]:
        return {
            "input_mean": self.model.input_mean.tolist(),
            "input_std": self.model.input_std.tolist(),
        }


# =============================================================================
# PERTE
# =============================================================================

def weight_regularizer(model: Optional[nn.Module]) -> torch.Tensor:
    """Σ‖W‖² sur les poids des convolutions (BatchNorm et biais exclus)"""
    if model is None:
        return torch.tensor(0.0)
    terms = [
        (m.weight ** 2).sum() for m in model.modules()
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d))
    ]
    return torch.stack(terms).sum() if terms else torch.tensor(0.0)


def masked_l2_terms(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor,
                    model: Optional[nn.Module] = None) -> Tuple[torch.Tensor, torch.Tensor, int]:
    """(terme de données, régularisation, nombre de pixels valides)"""
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ShapeError(f"Perte : pred {tuple(pred.shape)}, cible {tuple(target.shape)}, masque {tuple(mask.shape)}")
    mask = mask.to(torch.bool)
    residual = torch.where(mask, pred - target, torch.zeros_like(pred))
    n_valid = int(mask.sum())
    data = (residual ** 2).sum() / max(n_valid, 1)
    return data, weight_regularizer(model), n_valid


def masked_l2_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor,
                   model: Optional[nn.Module] = None, lam: float = 0.0) -> torch.Tensor:
    """Moyenne de (pred − cible)² sur les pixels valides + λ·Σ‖W‖²"""
    data, reg, n_valid = masked_l2_terms(pred, target, mask, model)
    if n_valid == 0:
        logger.warning("⚠️  Aucun pixel valide dans le batch : seule la régularisation contribue")
    return data + lam * reg


# =============================================================================
# PATCHS
# =============================================================================

def patch_offsets(dim: int, size: int, stride: int) -> List[int]:
    """0, stride, 2·stride… plus un dernier décalage calé sur dim − size"""
    if dim < size:
        raise ParameterError(f"Image de {dim} pixels plus petite que le patch ({size})")
    if stride < 1:
        raise ParameterError(f"stride doit être ≥ 1 (reçu {stride})")
    offsets = list(range(0, dim - size + 1, stride))
    if offsets[-1] != dim - size:
        offsets.append(dim - size)
    return offsets


def crop_patches(stack: Any, disparity: DisparityMap, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE,
                 max_missing: float = MAX_MISSING_FRACTION, stack_index: int = 0) -> PatchSet:
    """
    Découpe une pile (S, H, W, C) et sa disparité en patchs couvrant toute
    l'image ; les patchs avec plus de `max_missing` de disparité manquante sont écartés.
    """
    slices = np.asarray(getattr(stack, "slices", stack))
    if slices.ndim != 4:
        raise ShapeError(f"Pile (S, H, W, C) attendue, reçu {slices.shape}")
    if slices.shape[1:3] != disparity.shape:
        raise ShapeError(f"Pile {slices.shape[1:3]} et disparité {disparity.shape} de tailles différentes")

    rows = patch_offsets(slices.shape[1], size, stride)
    cols = patch_offsets(slices.shape[2], size, stride)
    stacks, disparities, masks, provenance = [], [], [], []
    for top in rows:
        for left in cols:
            window = (slice(top, top + size), slice(left, left + size))
            mask = disparity.mask[window]
            if 1.0 - mask.mean() > max_missing:
                continue
            stacks.append(slices[:, window[0], window[1]].astype(np.float32))
            disparities.append(disparity.values[window].astype(np.float32))
            masks.append(mask.copy())
            provenance.append((stack_index, top, left))

    logger.debug(f"Pile {stack_index} : {len(provenance)}/{len(rows) * len(cols)} patchs retenus")
    if not provenance:
        return PatchSet(np.zeros((0,) + (slices.shape[0], size, size, slices.shape[3]), np.float32),
                        np.zeros((0, size, size), np.float32), np.zeros((0, size, size), bool), [])
    return PatchSet(np.stack(stacks), np.stack(disparities), np.stack(masks), provenance)


# =============================================================================
# BOUCLE D'ENTRAÎNEMENT
# =============================================================================

def split_by_stack(patches: PatchSet, fraction: float, seed: int) -> Tuple[PatchSet, PatchSet]:
    """Réserve round(fraction · n) piles entières pour la validation (au moins une pile reste en entraînement)"""
    ids = patches.stack_ids
    n_val = min(int(round(fraction * len(ids))), len(ids) - 1)
    order = np.random.default_rng(seed).permutation(ids)
    val_ids = sorted(int(i) for i in order[:n_val])
    train_ids = [i for i in ids if i not in val_ids]
    return patches.select(train_ids), patches.select(val_ids)


def _tensors(patches: PatchSet) -> TensorDataset:
    return TensorDataset(
        torch.as_tensor(patches.stacks, dtype=torch.float32),
        torch.as_tensor(patches.disparities, dtype=torch.float32),
        torch.as_tensor(patches.masks, dtype=torch.bool),
    )


def _evaluate(model: DDFFNet, patches: PatchSet, batch_size: int) -> float:
    """Terme de données moyen (pondéré par les pixels valides), en mode inférence"""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for x, target, mask in DataLoader(_tensors(patches), batch_size=batch_size, shuffle=False):
            data, _, n_valid = masked_l2_terms(model(x), target, mask)
            total += float(data) * n_valid
            count += n_valid
    return total / count if count else math.nan


def _check_parameters(model: nn.Module, epoch: int):
    for name, param in model.named_parameters():
        if not torch.all(torch.isfinite(param)):
            raise TrainingDivergedError(f"Paramètre {name} non fini après l'epoch {epoch}")


def train(model: DDFFNet, dataset: PatchSet, cfg: TrainConfig) -> TrainedModel:
    """
    SGD avec momentum ; lr multiplié par lr_decay toutes les decay_epochs.
    Les piles de validation sont tirées avec la seed ; le modèle retenu est
    celui de meilleure perte de validation (de meilleure perte d'entraînement
    sans validation). Ordre des données, dropout et initialisation sont
    reproductibles pour une seed donnée.
    """
    train_set, val_set = split_by_stack(dataset, cfg.validation_fraction, cfg.seed)
    if not len(train_set):
        raise ParameterError("Aucun patch d'entraînement")
    logger.info(f"🏋️  Entraînement : {len(train_set)} patchs ({len(train_set.stack_ids)} piles), "
                f"validation : {len(val_set)} patchs ({len(val_set.stack_ids)} piles)")

    torch.manual_seed(cfg.seed)
    random.seed(cfg.seed)

    channel_axes = (0, 1, 2, 3)
    model.set_input_normalization(train_set.stacks.mean(axis=channel_axes), train_set.stacks.std(axis=channel_axes))

    generator = torch.Generator().manual_seed(cfg.seed)
    loader = DataLoader(_tensors(train_set), batch_size=cfg.batch_size, shuffle=True,
                        generator=generator, num_workers=0)
    # la régularisation λ·Σ‖W‖² est dans la perte, pas dans l'optimiseur
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=0.0)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=cfg.decay_epochs, gamma=cfg.lr_decay)

    history: List[Dict[str, float]] = []
    best_state, best_score, best_epoch = None, math.inf, -1

    for epoch in range(cfg.epochs):
        model.train()
        lr = optimizer.param_groups[0]["lr"]
        data_sum, valid_sum, reg_value = 0.0, 0, 0.0

        for step, (x, target, mask) in enumerate(loader):
            data, reg, n_valid = masked_l2_terms(model(x), target, mask, model)
            if n_valid == 0:
                logger.warning(f"⚠️  Epoch {epoch}, batch {step} : aucun pixel valide")
            loss = data + cfg.weight_decay * reg
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"Perte non finie à l'epoch {epoch}, batch {step} (lr={lr:g}, données={float(data)}, "
                    f"régularisation={float(reg)})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            data_sum += float(data) * n_valid
            valid_sum += n_valid
            reg_value = float(reg)

        _check_parameters(model, epoch)
        train_loss = data_sum / valid_sum if valid_sum else math.nan
        val_loss = _evaluate(model, val_set, cfg.batch_size) if len(val_set) else math.nan
        if len(val_set) and not math.isfinite(val_loss):
            raise TrainingDivergedError(f"Perte de validation non finie à l'epoch {epoch} ({val_loss})")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "lr": lr, "regularizer": reg_value})
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs} - perte {train_loss:.6f} - validation {val_loss:.6f} "
                    f"- lr {lr:.2e} - régularisation {reg_value:.2f}")

        score = val_loss if len(val_set) else train_loss
        if score < best_score or best_state is None:
            best_state, best_score, best_epoch = copy.deepcopy(model.state_dict()), score, epoch
        scheduler.step()

    model.load_state_dict(best_state)
    model.eval()
    metadata = {
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "final_loss": history[-1]["train_loss"],
        "best_epoch": best_epoch,
        "best_score": best_score,
        "validation_stacks": val_set.stack_ids,
        "train_config": cfg.to_dict(),
    }
    logger.info(f"✅ Entraînement terminé : meilleure epoch {best_epoch + 1} (score {best_score:.6f})")
    return TrainedModel(model.spec, model, metadata, history)
