"""
Modèle de données des light-fields 4D et géométrie disparité / profondeur

Conventions :
- indexation des sous-ouvertures en base 0, centre de grille ((grid_u-1)/2, (grid_v-1)/2)
  (le centre (5, 5) d'une grille 9×9 en base 1 devient (4, 4))
- u est l'axe horizontal de la grille (associé à x), v l'axe vertical (associé à y)
- les échantillons sont rangés (u, v, y, x, canal), valeurs dans [0, 1]
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .config import (
    BASELINE_M_PER_PX,
    DISTORTION,
    FOCAL_LENGTH_PX,
    MAIN_LENS,
    PRINCIPAL_POINT,
    RAW_GRID_SIZE,
    WORKING_GRID_SIZE,
)
from .exceptions import DomainError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class MainLens:
    """Paramètres de la lentille principale (pixels) et rayon d'une image microlentille"""
    F_x: float
    F_y: float
    C_x: float
    C_y: float
    r_m: float

    def to_dict(self) -> Dict[str, float]:
        return {"F_x": self.F_x, "F_y": self.F_y, "C_x": self.C_x, "C_y": self.C_y, "r_m": self.r_m}


@dataclass(frozen=True)
class MicrolensIntrinsics:
    focal_length_px: float
    c_x: float
    c_y: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """
    Calibration de la caméra plénoptique.

    `distortion` est conservé tel quel : les sous-ouvertures consommées sont
    déjà corrigées par la toolbox de calibration.
    """
    focal_length_px: float
    baseline_m_per_px: float
    grid_u: int
    grid_v: int
    center_u: Optional[float] = None
    center_v: Optional[float] = None
    principal_point: Tuple[float, float] = (0.0, 0.0)
    main_lens: Optional[MainLens] = None
    distortion: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.center_u is None:
            object.__setattr__(self, "center_u", (self.grid_u - 1) / 2.0)
        if self.center_v is None:
            object.__setattr__(self, "center_v", (self.grid_v - 1) / 2.0)
        if not np.isfinite(self.focal_length_px) or self.focal_length_px <= 0:
            raise DomainError(f"focal_length_px doit être > 0 (reçu {self.focal_length_px})")
        if not np.isfinite(self.baseline_m_per_px) or self.baseline_m_per_px <= 0:
            raise DomainError(f"baseline_m_per_px doit être > 0 (reçu {self.baseline_m_per_px})")
        if int(self.grid_u) < 1 or int(self.grid_v) < 1:
            raise DomainError(f"Grille de sous-ouvertures invalide : {self.grid_u}×{self.grid_v}")
        if self.main_lens is not None:
            derived = microlens_intrinsics(self.main_lens).focal_length_px
            if abs(derived - self.focal_length_px) > 0.1:
                raise DomainError(
                    f"focal_length_px={self.focal_length_px} incohérent avec la lentille principale "
                    f"(F_x / 2r_m = {derived:.3f})"
                )

    @property
    def focal_baseline(self) -> float:
        """Produit baseline·f, numérateur de la conversion profondeur ↔ disparité"""
        return self.baseline_m_per_px * self.focal_length_px

    def with_grid(self, grid_u: int, grid_v: int) -> "CameraIntrinsics":
        """Même caméra, autre grille (centre recalculé)"""
        return replace(self, grid_u=grid_u, grid_v=grid_v, center_u=None, center_v=None)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "focal_length_px": self.focal_length_px,
            "baseline_m_per_px": self.baseline_m_per_px,
            "grid_u": int(self.grid_u),
            "grid_v": int(self.grid_v),
            "center_u": self.center_u,
            "center_v": self.center_v,
            "principal_point": list(self.principal_point),
            "main_lens": self.main_lens.to_dict() if self.main_lens else None,
            "distortion": dict(self.distortion),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CameraIntrinsics":
        main = data.get("main_lens")
        return cls(
            focal_length_px=float(data["focal_length_px"]),
            baseline_m_per_px=float(data["baseline_m_per_px"]),
            grid_u=int(data["grid_u"]),
            grid_v=int(data["grid_v"]),
            center_u=data.get("center_u"),
            center_v=data.get("center_v"),
            principal_point=tuple(data.get("principal_point", (0.0, 0.0))),
            main_lens=MainLens(**main) if main else None,
            distortion=dict(data.get("distortion") or {}),
        )


def lytro_intrinsics(grid: int = WORKING_GRID_SIZE) -> CameraIntrinsics:
    """Intrinsèques publiés de la Lytro ILLUM, sur une grille carrée `grid`×`grid`"""
    return CameraIntrinsics(
        focal_length_px=FOCAL_LENGTH_PX,
        baseline_m_per_px=BASELINE_M_PER_PX,
        grid_u=grid,
        grid_v=grid,
        principal_point=PRINCIPAL_POINT,
        main_lens=MainLens(**MAIN_LENS),
        distortion=dict(DISTORTION),
    )


@dataclass(frozen=True)
class LightField:
    samples: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        samples = np.asarray(self.samples).view()
        if samples.ndim != 5:
            raise ShapeError(f"Un light-field est indexé (u, v, y, x, canal), reçu {samples.ndim} axes")
        expected = (self.intrinsics.grid_u, self.intrinsics.grid_v)
        if samples.shape[:2] != expected:
            raise ShapeError(f"Grille {samples.shape[:2]} différente des intrinsèques {expected}")
        if not np.all(np.isfinite(samples)):
            raise DomainError("Le light-field contient des valeurs non finies")
        if samples.size and (samples.min() < 0.0 or samples.max() > 1.0):
            raise DomainError("Les échantillons du light-field doivent être dans [0, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def height(self) -> int:
        return self.samples.shape[2]

    @property
    def width(self) -> int:
        return self.samples.shape[3]

    @property
    def channels(self) -> int:
        return self.samples.shape[4]


def _validated_map(values: np.ndarray, mask: Optional[np.ndarray], kind: str) -> Tuple[np.ndarray, np.ndarray]:
    values = np.array(values, dtype=np.float64, copy=True)
    if values.ndim != 2:
        raise ShapeError(f"{kind} : tableau 2D attendu, reçu {values.shape}")
    if mask is None:
        mask = np.isfinite(values) & (values > 0)
    mask = np.array(mask, dtype=bool, copy=True)
    if mask.shape != values.shape:
        raise ShapeError(f"{kind} : masque {mask.shape} ≠ valeurs {values.shape}")
    if not np.all(np.isfinite(values[mask])):
        raise DomainError(f"{kind} : valeurs non finies sur des pixels valides")
    values[~mask] = 0.0
    values.setflags(write=False)
    mask.setflags(write=False)
    return values, mask


@dataclass(frozen=True)
class DisparityMap:
    """Disparité par pixel (pixels) ; les pixels invalides valent 0"""
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        values, mask = _validated_map(self.values, self.mask, "DisparityMap")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DepthMap:
    """Profondeur par pixel (mètres) ; 0 code une mesure manquante"""
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        values, mask = _validated_map(self.values, self.mask, "DepthMap")
        if np.any(values[mask] <= 0):
            raise DomainError("DepthMap : profondeur ≤ 0 sur un pixel valide")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


# =============================================================================
# GÉOMÉTRIE
# =============================================================================

def _scalar_or_array(result: np.ndarray, like: ArrayLike) -> ArrayLike:
    return float(result) if np.ndim(like) == 0 else result


def disparity_from_depth(Z: ArrayLike, intr: CameraIntrinsics) -> ArrayLike:
    """Disparité (pixels) d'un point à la profondeur Z (mètres) : baseline·f / Z"""
    z = np.asarray(Z, dtype=np.float64)
    if np.any(np.isnan(z)) or np.any(z <= 0):
        raise DomainError("La profondeur doit être strictement positive")
    return _scalar_or_array(intr.focal_baseline / z, Z)


def depth_from_disparity(d: ArrayLike, intr: CameraIntrinsics) -> ArrayLike:
    """Profondeur (mètres) d'une disparité d > 0 ; inverse exacte de disparity_from_depth"""
    disp = np.asarray(d, dtype=np.float64)
    if np.any(~np.isfinite(disp)) or np.any(disp <= 0):
        raise DomainError("La disparité doit être strictement positive (profondeur infinie sinon)")
    return _scalar_or_array(intr.focal_baseline / disp, d)


def disparity_map_to_depth(dmap: DisparityMap, intr: CameraIntrinsics) -> DepthMap:
    """Convertit les pixels valides de disparité > 0 ; les autres deviennent invalides"""
    mask = dmap.mask & (dmap.values > 0)
    values = np.zeros(dmap.shape)
    if mask.any():
        values[mask] = depth_from_disparity(dmap.values[mask], intr)
    return DepthMap(values, mask)


def depth_map_to_disparity(depth: DepthMap, intr: CameraIntrinsics) -> DisparityMap:
    values = np.zeros(depth.shape)
    if depth.mask.any():
        values[depth.mask] = disparity_from_depth(depth.values[depth.mask], intr)
    return DisparityMap(values, depth.mask)


def subaperture(lf: LightField, u: int, v: int) -> np.ndarray:
    """Image (hauteur, largeur, canaux) vue depuis la sous-ouverture (u, v)"""
    if not (0 <= u < lf.intrinsics.grid_u and 0 <= v < lf.intrinsics.grid_v):
        raise IndexError(
            f"Sous-ouverture ({u}, {v}) hors de la grille {lf.intrinsics.grid_u}×{lf.intrinsics.grid_v}"
        )
    return lf.samples[u, v]


def microlens_intrinsics(main: MainLens) -> MicrolensIntrinsics:
    """f = F_x / 2r_m, c_x = C_x / 2r_m, c_y = C_y / 2r_m"""
    if not main.r_m > 0:
        raise DomainError(f"r_m doit être > 0 (reçu {main.r_m})")
    scale = 2.0 * main.r_m
    return MicrolensIntrinsics(main.F_x / scale, main.C_x / scale, main.C_y / scale)


def valid_subaperture_mask(radius: int, grid: int = RAW_GRID_SIZE) -> np.ndarray:
    """
    Sous-ouvertures exploitables de la grille brute : i² + j² < (radius − 1)²,
    (i, j) étant le décalage au centre de la grille.
    """
    if radius < 2:
        raise ParameterError(f"radius doit être ≥ 2 (reçu {radius})")
    offsets = np.arange(grid) - (grid - 1) / 2.0
    i, j = np.meshgrid(offsets, offsets, indexing="ij")
    return (i ** 2 + j ** 2) < (radius - 1) ** 2


def crop_central_grid(lf: LightField, size: int = WORKING_GRID_SIZE) -> LightField:
    """Garde la grille centrale size×size (ex. 9×9 dans la grille brute 13×13)"""
    grid_u, grid_v = lf.intrinsics.grid_u, lf.intrinsics.grid_v
    if size < 1 or size > min(grid_u, grid_v) or (grid_u - size) % 2 or (grid_v - size) % 2:
        raise ParameterError(f"Impossible de centrer une grille {size}×{size} dans {grid_u}×{grid_v}")
    ou, ov = (grid_u - size) // 2, (grid_v - size) // 2
    samples = lf.samples[ou:ou + size, ov:ov + size]
    return LightField(samples, lf.intrinsics.with_grid(size, size))
