"""
Depth-from-focus classique : mesure de netteté par tranche puis argmax sur la pile

Sert de référence non apprise et d'oracle sur les scènes synthétiques.
Toutes les convolutions répliquent les bords (mode 'nearest').
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .config import DEFAULT_FOCUS_MEASURE, DEFAULT_FOCUS_WINDOW, FOCUS_MEASURES, SHARPNESS_FLOOR
from .exceptions import DomainError, ParameterError, ShapeError
from .lightfield_core import DisparityMap
from .refocus import FocalStack

logger = logging.getLogger(__name__)

# Poids Rec. 601 de la luminance
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# En dessous, la pile est considérée uniforme : aucune normalisation possible
ABSOLUTE_SHARPNESS_EPS = 1e-12


@dataclass(frozen=True)
class SharpnessVolume:
    values: np.ndarray
    focus_disparities: Tuple[float, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[0] != len(self.focus_disparities):
            raise ShapeError(f"Volume de netteté {values.shape} pour {len(self.focus_disparities)} disparités")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("Les scores de netteté doivent être finis et positifs")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "focus_disparities", tuple(float(d) for d in self.focus_disparities))


def luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim != 3:
        raise ShapeError(f"Image (hauteur, largeur[, canaux]) attendue, reçu {image.shape}")
    if image.shape[2] == 3:
        return image @ LUMA_WEIGHTS
    return image.mean(axis=2)


def _modified_laplacian(gray: np.ndarray) -> np.ndarray:
    # |2I(x) − I(x−1) − I(x+1)| + |2I(y) − I(y−1) − I(y+1)|
    stencil = [-1.0, 2.0, -1.0]
    d2x = ndimage.correlate1d(gray, stencil, axis=1, mode="nearest")
    d2y = ndimage.correlate1d(gray, stencil, axis=0, mode="nearest")
    return np.abs(d2x) + np.abs(d2y)


def _tenengrad(gray: np.ndarray) -> np.ndarray:
    # Sobel 3×3 : Gx² + Gy²
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return gx ** 2 + gy ** 2


def sharpness_map(image: np.ndarray, measure: str = DEFAULT_FOCUS_MEASURE,
                  window: int = DEFAULT_FOCUS_WINDOW) -> np.ndarray:
    """
    Mesure de netteté par pixel, agrégée sur une fenêtre carrée `window`.

    - modified-laplacian : somme sur la fenêtre de |∂²I/∂x²| + |∂²I/∂y²| (stencil [-1, 2, -1])
    - laplacian-variance : variance locale du laplacien 5 points
    - tenengrad : somme sur la fenêtre du carré du gradient de Sobel
    (les sommes sont des moyennes de boîte, ce qui ne change pas l'argmax)
    """
    if int(window) != window or window < 1 or window % 2 == 0:
        raise ParameterError(f"La fenêtre doit être un entier impair ≥ 1 (reçu {window})")
    if measure not in FOCUS_MEASURES:
        raise ParameterError(f"Mesure de netteté inconnue : {measure} (attendu : {', '.join(FOCUS_MEASURES)})")
    gray = luminance(image)
    if not np.all(np.isfinite(gray)):
        raise DomainError("sharpness_map : image non finie")

    if measure == "modified-laplacian":
        return ndimage.uniform_filter(_modified_laplacian(gray), size=window, mode="nearest")
    if measure == "tenengrad":
        return ndimage.uniform_filter(_tenengrad(gray), size=window, mode="nearest")

    lap = ndimage.laplace(gray, mode="nearest")
    mean = ndimage.uniform_filter(lap, size=window, mode="nearest")
    mean_sq = ndimage.uniform_filter(lap ** 2, size=window, mode="nearest")
    return np.clip(mean_sq - mean ** 2, 0.0, None)


def sharpness_volume(stack: FocalStack, measure: str = DEFAULT_FOCUS_MEASURE,
                     window: int = DEFAULT_FOCUS_WINDOW) -> SharpnessVolume:
    values = np.stack([sharpness_map(s, measure, window) for s in stack.slices])
    return SharpnessVolume(values, stack.focus_disparities)


def argmax_disparity(stack: FocalStack, measure: str = DEFAULT_FOCUS_MEASURE,
                     window: int = DEFAULT_FOCUS_WINDOW, floor: float = SHARPNESS_FLOOR) -> DisparityMap:
    """
    Disparité de la tranche la plus nette en chaque pixel.

    Les égalités vont à la disparité la plus grande (la plus proche). Les
    pixels dont la netteté maximale, normalisée par le maximum du volume,
    reste sous `floor` sont invalides.
    """
    if stack.size < 2:
        raise ParameterError(f"argmax_disparity demande au moins 2 tranches (reçu {stack.size})")
    volume = sharpness_volume(stack, measure, window)
    disparities = np.asarray(volume.focus_disparities)

    # tri stable du plus proche au plus lointain : argmax garde le premier maximum
    order = np.argsort(-disparities, kind="stable")
    best = order[np.argmax(volume.values[order], axis=0)]
    values = disparities[best]

    peak = volume.values.max()
    if peak < ABSOLUTE_SHARPNESS_EPS:
        logger.debug("Pile sans texture : tous les pixels sont invalides")
        return DisparityMap(np.zeros(values.shape), np.zeros(values.shape, dtype=bool))
    valid = volume.values.max(axis=0) / peak >= floor
    return DisparityMap(values, valid)
