"""
Métriques d'évaluation : erreurs quadratiques, erreurs relatives, précision δ,
BadPix, bumpiness, et recalage par moindres carrés des profondeurs Lytro.

Le masque d'évaluation est celui de la vérité terrain : les prédictions sont
denses, leur propre masque est ignoré.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .config import ACCURACY_BASE, BUMPINESS_CLAMP, DEFAULT_TAUS
from .exceptions import DegenerateError, DomainError, ParameterError, ShapeError
from .lightfield_core import (
    CameraIntrinsics,
    DepthMap,
    DisparityMap,
    depth_from_disparity,
)

logger = logging.getLogger(__name__)

MapLike = Union[DisparityMap, DepthMap]

SCALAR_FIELDS = (
    "mse", "rms", "log_rms", "abs_rel", "sqr_rel",
    "accuracy_d1", "accuracy_d2", "accuracy_d3", "bumpiness",
)


@dataclass
class MetricsReport:
    mse: float = math.nan
    rms: float = math.nan
    log_rms: float = math.nan
    abs_rel: float = math.nan
    sqr_rel: float = math.nan
    accuracy_d1: float = math.nan
    accuracy_d2: float = math.nan
    accuracy_d3: float = math.nan
    badpix: Dict[float, float] = field(default_factory=dict)
    bumpiness: float = math.nan
    valid_pixel_count: int = 0
    clamped_pixels: int = 0

    @property
    def empty(self) -> bool:
        return self.valid_pixel_count == 0

    def to_record(self) -> Dict[str, float]:
        """Enregistrement plat (une colonne par métrique et par τ)"""
        record = {name: getattr(self, name) for name in SCALAR_FIELDS}
        for tau, value in sorted(self.badpix.items()):
            record[f"badpix_{tau:g}"] = value
        record["valid_pixel_count"] = self.valid_pixel_count
        record["clamped_pixels"] = self.clamped_pixels
        return record

    def to_text(self) -> str:
        return "\n".join(f"{key}={value}" for key, value in self.to_record().items())


# =============================================================================
# OUTILS
# =============================================================================

def _check_pair(pred: MapLike, gt: MapLike):
    if type(pred) is not type(gt):
        raise DomainError(f"Prédiction {type(pred).__name__} et vérité {type(gt).__name__} de natures différentes")
    if pred.shape != gt.shape:
        raise ShapeError(f"Prédiction {pred.shape} et vérité {gt.shape} de tailles différentes")


def _evaluation_mask(pred: MapLike, gt: MapLike) -> np.ndarray:
    return gt.mask & np.isfinite(pred.values)


def _derivative(values: np.ndarray, axis: int) -> np.ndarray:
    # différences centrées, unilatérales aux bords
    if values.shape[axis] < 2:
        return np.zeros_like(values)
    return np.gradient(values, axis=axis)


def _fill_from_nearest(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pixels hors masque remplacés par le pixel valide le plus proche"""
    if mask.all():
        return values
    _, (rows, cols) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return values[rows, cols]


def hessian_norm(delta: np.ndarray) -> np.ndarray:
    """Norme de Frobenius de la hessienne 2×2 de delta, par pixel"""
    dy = _derivative(delta, 0)
    dx = _derivative(delta, 1)
    dyy = _derivative(dy, 0)
    dyx = _derivative(dy, 1)
    dxy = _derivative(dx, 0)
    dxx = _derivative(dx, 1)
    return np.sqrt(dxx ** 2 + dxy ** 2 + dyx ** 2 + dyy ** 2)


def _badpix(abs_error: np.ndarray, tau: float) -> float:
    return float(100.0 * np.mean(abs_error > tau))


# =============================================================================
# OPÉRATIONS
# =============================================================================

def compute_metrics(pred: MapLike, gt: MapLike, taus: Sequence[float] = DEFAULT_TAUS) -> MetricsReport:
    """Les huit métriques sur les pixels valides de la vérité terrain"""
    _check_pair(pred, gt)
    mask = _evaluation_mask(pred, gt)
    report = MetricsReport(valid_pixel_count=int(mask.sum()))
    if report.empty:
        logger.warning("⚠️  Aucun pixel valide : rapport vide")
        return report

    p = pred.values[mask]
    g = gt.values[mask]
    error = p - g
    abs_error = np.abs(error)

    report.mse = float(np.mean(error ** 2))
    report.rms = math.sqrt(report.mse)
    report.badpix = {float(tau): _badpix(abs_error, tau) for tau in taus}

    positive = (p > 0) & (g > 0)
    report.clamped_pixels = int(np.sum((p <= 0) & (g > 0)))
    if positive.any():
        pp, gp = p[positive], g[positive]
        report.log_rms = float(np.sqrt(np.mean((np.log(pp) - np.log(gp)) ** 2)))
        report.abs_rel = float(np.mean(np.abs(pp - gp) / gp))
        report.sqr_rel = float(np.mean((pp - gp) ** 2 / gp))
        ratio = np.maximum(pp / gp, gp / pp)
        report.accuracy_d1 = float(100.0 * np.mean(ratio < ACCURACY_BASE))
        report.accuracy_d2 = float(100.0 * np.mean(ratio < ACCURACY_BASE ** 2))
        report.accuracy_d3 = float(100.0 * np.mean(ratio < ACCURACY_BASE ** 3))

    delta = _fill_from_nearest(pred.values - gt.values, mask)
    bumps = np.minimum(BUMPINESS_CLAMP, hessian_norm(delta)) * 100.0
    report.bumpiness = float(np.mean(bumps[mask]))
    return report


def badpix_curve(pred: MapLike, gt: MapLike, tau_grid: Sequence[float]) -> List[Tuple[float, float]]:
    """(τ, BadPix %) pour chaque τ ; la série décroît au sens large"""
    taus = [float(t) for t in tau_grid]
    if not taus or any(t <= 0 for t in taus) or any(b <= a for a, b in zip(taus, taus[1:])):
        raise ParameterError(f"La grille de τ doit être positive et strictement croissante : {taus}")
    _check_pair(pred, gt)
    mask = _evaluation_mask(pred, gt)
    if not mask.any():
        return [(t, math.nan) for t in taus]
    abs_error = np.abs(pred.values[mask] - gt.values[mask])
    return [(t, _badpix(abs_error, t)) for t in taus]


def lytro_rescale(pred_depth: DepthMap, gt_depth: DepthMap) -> Tuple[float, DepthMap]:
    """
    Facteur d'échelle k* minimisant Σ(k·pred − gt)² sur les pixels valides des
    deux cartes : k* = Σ pred·gt / Σ pred².
    """
    _check_pair(pred_depth, gt_depth)
    joint = pred_depth.mask & gt_depth.mask
    p = pred_depth.values[joint]
    g = gt_depth.values[joint]
    denominator = float(np.dot(p, p))
    if denominator == 0.0:
        raise DegenerateError("Recalage impossible : Σ pred² = 0 sur les pixels valides")
    k_star = float(np.dot(p, g)) / denominator
    return k_star, DepthMap(k_star * pred_depth.values, pred_depth.mask)


def depth_error(pred_disp: DisparityMap, gt_disp: DisparityMap, intr: CameraIntrinsics,
                taus: Sequence[float] = DEFAULT_TAUS) -> MetricsReport:
    """
    Métriques en mètres : les deux disparités sont converties en profondeur ;
    seuls les pixels où les deux disparités sont > 0 sont évalués.
    """
    _check_pair(pred_disp, gt_disp)
    joint = gt_disp.mask & np.isfinite(pred_disp.values) & (pred_disp.values > 0) & (gt_disp.values > 0)
    pred_values = np.zeros(pred_disp.shape)
    gt_values = np.zeros(gt_disp.shape)
    if joint.any():
        pred_values[joint] = depth_from_disparity(pred_disp.values[joint], intr)
        gt_values[joint] = depth_from_disparity(gt_disp.values[joint], intr)
    return compute_metrics(DepthMap(pred_values, joint), DepthMap(gt_values, joint), taus)
