"""
Génération de light-fields synthétiques avec disparité de vérité terrain analytique

Une scène est un empilement de plans fronto-parallèles texturés. Chaque
sous-ouverture est obtenue en décalant la texture de chaque plan par
phase_shift (le même primitif que le refocus), puis les plans sont composés
du plus lointain au plus proche (occultation franche, sans flou de bord).
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .config import (
    MAX_SCENE_RETRIES,
    MIN_VISIBLE_FRACTION,
    SYNTH_FRAME,
    TEXTURE_CUTOFF,
)
from .exceptions import DomainError, ParameterError, SceneGenerationError
from .lightfield_core import (
    CameraIntrinsics,
    DisparityMap,
    LightField,
    depth_from_disparity,
    disparity_from_depth,
)
from .refocus import phase_ramp

logger = logging.getLogger(__name__)

# Plage de valeurs des textures ; la marge absorbe les oscillations de l'interpolation sous-pixel
TEXTURE_RANGE = (0.15, 0.85)

Rectangle = Tuple[int, int, int, int]


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class TextureSpec:
    """
    Texture d'un plan : bruit procédural à bande limitée (seed, cutoff) ou
    patch explicite (hauteur, largeur, canaux) dans [0, 1].
    """
    seed: Optional[int] = None
    cutoff: float = TEXTURE_CUTOFF
    patch: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.patch is None and self.seed is None:
            raise DomainError("Une texture demande une seed ou un patch")
        if self.patch is not None:
            patch = np.asarray(self.patch, dtype=np.float64)
            if patch.ndim == 2:
                patch = patch[:, :, None]
            if patch.ndim != 3 or not np.all(np.isfinite(patch)):
                raise DomainError(f"Patch de texture invalide : {patch.shape}")
            object.__setattr__(self, "patch", patch)
        elif not 0 < self.cutoff < 0.5:
            raise DomainError(f"cutoff doit être dans ]0, 0.5[ (reçu {self.cutoff})")

    def to_dict(self) -> Dict[str, Any]:
        if self.patch is not None:
            return {"patch": self.patch.tolist()}
        return {"seed": int(self.seed), "cutoff": self.cutoff}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TextureSpec":
        if "patch" in data:
            return cls(patch=np.asarray(data["patch"], dtype=np.float64))
        return cls(seed=int(data["seed"]), cutoff=float(data.get("cutoff", TEXTURE_CUTOFF)))


@dataclass(frozen=True)
class PlaneSpec:
    """Plan fronto-parallèle ; region = None (plein cadre), rectangle (haut, gauche, hauteur, largeur) ou masque booléen"""
    depth_m: float
    texture: TextureSpec
    region: Union[None, Rectangle, np.ndarray] = None

    def region_mask(self, frame: Tuple[int, int]) -> np.ndarray:
        if self.region is None:
            return np.ones(frame, dtype=bool)
        if isinstance(self.region, np.ndarray):
            if self.region.shape != tuple(frame):
                raise DomainError(f"Masque de région {self.region.shape} ≠ cadre {tuple(frame)}")
            return self.region.astype(bool)
        top, left, height, width = (int(x) for x in self.region)
        mask = np.zeros(frame, dtype=bool)
        mask[max(top, 0):top + height, max(left, 0):left + width] = True
        return mask

    def to_dict(self) -> Dict[str, Any]:
        if isinstance(self.region, np.ndarray):
            region = self.region.astype(int).tolist()
        else:
            region = list(self.region) if self.region is not None else None
        return {"depth_m": self.depth_m, "texture": self.texture.to_dict(), "region": region}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PlaneSpec":
        region = data.get("region")
        if region is not None:
            region = np.asarray(region, dtype=bool) if np.ndim(region) == 2 else tuple(int(x) for x in region)
        return cls(float(data["depth_m"]), TextureSpec.from_dict(data["texture"]), region)


@dataclass(frozen=True)
class SceneSpec:
    """Plans ordonnés du plus proche au plus lointain"""
    planes: Tuple[PlaneSpec, ...]
    intrinsics: CameraIntrinsics
    seed: int
    frame: Tuple[int, int] = SYNTH_FRAME
    channels: int = 3
    dropout: float = 0.0

    def __post_init__(self):
        planes = tuple(self.planes)
        if not planes:
            raise DomainError("Une scène demande au moins un plan")
        depths = [p.depth_m for p in planes]
        if any(not (np.isfinite(z) and z > 0) for z in depths):
            raise DomainError(f"Profondeurs de plans invalides : {depths}")
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise DomainError(f"Les profondeurs doivent être strictement croissantes : {depths}")
        if min(self.frame) < 1 or self.channels < 1:
            raise DomainError(f"Cadre invalide : {self.frame}×{self.channels}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError(f"dropout doit être dans [0, 1[ (reçu {self.dropout})")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "frame", tuple(int(x) for x in self.frame))

    @property
    def disparities(self) -> List[float]:
        return [disparity_from_depth(p.depth_m, self.intrinsics) for p in self.planes]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": int(self.seed),
            "frame": list(self.frame),
            "channels": self.channels,
            "dropout": self.dropout,
            "intrinsics": self.intrinsics.to_dict(),
            "planes": [p.to_dict() for p in self.planes],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneSpec":
        return cls(
            planes=tuple(PlaneSpec.from_dict(p) for p in data["planes"]),
            intrinsics=CameraIntrinsics.from_dict(data["intrinsics"]),
            seed=int(data["seed"]),
            frame=tuple(data.get("frame", SYNTH_FRAME)),
            channels=int(data.get("channels", 3)),
            dropout=float(data.get("dropout", 0.0)),
        )


# =============================================================================
# TEXTURES
# =============================================================================

def procedural_texture(seed: int, frame: Tuple[int, int], channels: int = 3,
                       cutoff: float = TEXTURE_CUTOFF) -> np.ndarray:
    """
    Bruit blanc filtré passe-bas (|ξx|, |ξy| ≤ cutoff), périodique sur le cadre.
    La fréquence de Nyquist est nulle, donc tout décalage de phase est inversible.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((frame[0], frame[1], channels))
    fy = np.abs(np.fft.fftfreq(frame[0]))[:, None]
    fx = np.abs(np.fft.fftfreq(frame[1]))[None, :]
    band = (fy <= cutoff) & (fx <= cutoff)
    texture = np.real(np.fft.ifft2(np.fft.fft2(noise, axes=(0, 1)) * band[:, :, None], axes=(0, 1)))
    lo, hi = texture.min(), texture.max()
    if hi - lo < 1e-12:
        return np.full_like(texture, np.mean(TEXTURE_RANGE))
    return TEXTURE_RANGE[0] + (texture - lo) / (hi - lo) * (TEXTURE_RANGE[1] - TEXTURE_RANGE[0])


def shift_margin(intr: CameraIntrinsics, d: float) -> int:
    """Décalage maximal (pixels entiers) subi par un plan de disparité d sur la grille"""
    reach = max(intr.center_u, intr.grid_u - 1 - intr.center_u, intr.center_v, intr.grid_v - 1 - intr.center_v)
    return int(math.ceil(abs(d) * reach))


def _texture_support(plane: PlaneSpec, spec: SceneSpec, margin: int) -> np.ndarray:
    """Texture sur son support de rendu : le cadre (procédural) ou le patch complet"""
    if plane.texture.patch is None:
        return procedural_texture(plane.texture.seed, spec.frame, spec.channels, plane.texture.cutoff)
    patch = plane.texture.patch
    height, width = spec.frame
    if patch.shape[0] < height + 2 * margin or patch.shape[1] < width + 2 * margin:
        raise DomainError(
            f"Texture {patch.shape[:2]} plus petite que le cadre {spec.frame} + marge de décalage {margin}"
        )
    if patch.shape[2] not in (1, spec.channels):
        raise DomainError(f"Texture à {patch.shape[2]} canaux pour une scène à {spec.channels}")
    if patch.min() < 0.0 or patch.max() > 1.0:
        raise DomainError("Les textures explicites doivent être dans [0, 1]")
    return np.broadcast_to(patch, patch.shape[:2] + (spec.channels,)).astype(np.float64)


def _center_crop(image: np.ndarray, frame: Tuple[int, int]) -> np.ndarray:
    top = (image.shape[0] - frame[0]) // 2
    left = (image.shape[1] - frame[1]) // 2
    return image[top:top + frame[0], left:left + frame[1]]


def _shift_mask(mask: np.ndarray, dx: float, dy: float) -> np.ndarray:
    # out(x) = mask(x + dx), bords répliqués
    if dx == 0 and dy == 0:
        return mask
    shifted = ndimage.shift(mask.astype(np.float64), (-dy, -dx), order=1, mode="nearest")
    return shifted > 0.5


# =============================================================================
# RENDU
# =============================================================================

def render_lightfield(spec: SceneSpec) -> Tuple[LightField, DisparityMap]:
    """
    Rend le light-field d'une scène et la disparité de la vue centrale.

    La sous-ouverture (u, v) voit chaque plan de disparité d décalé de
    (−d·(u_centre − u), −d·(v_centre − v)) par rapport à la vue centrale.
    """
    if not isinstance(spec, SceneSpec):
        raise DomainError("render_lightfield attend un SceneSpec")
    intr = spec.intrinsics
    height, width = spec.frame
    disparities = spec.disparities

    spectra, masks = [], []
    for plane, d in zip(spec.planes, disparities):
        support = _texture_support(plane, spec, shift_margin(intr, d))
        spectra.append((np.fft.fft2(support, axes=(0, 1)), support))
        masks.append(plane.region_mask(spec.frame))

    samples = np.zeros((intr.grid_u, intr.grid_v, height, width, spec.channels))
    for u in range(intr.grid_u):
        for v in range(intr.grid_v):
            view = samples[u, v]
            # du plus lointain au plus proche : chaque plan recouvre les précédents
            for (spectrum, support), mask, d in reversed(list(zip(spectra, masks, disparities))):
                dx = -d * (intr.center_u - u)
                dy = -d * (intr.center_v - v)
                if dx == 0 and dy == 0:
                    layer = support
                else:
                    ramp = phase_ramp(support.shape[:2], dx, dy)
                    layer = np.real(np.fft.ifft2(spectrum * ramp[:, :, None], axes=(0, 1)))
                layer = _center_crop(layer, spec.frame)
                visible = _shift_mask(mask, dx, dy)
                view[visible] = layer[visible]

    np.clip(samples, 0.0, 1.0, out=samples)

    groundtruth = np.zeros(spec.frame)
    for mask, d in reversed(list(zip(masks, disparities))):
        groundtruth[mask] = d
    valid = np.ones(spec.frame, dtype=bool)
    if spec.dropout > 0:
        rng = np.random.default_rng([spec.seed, 1])
        valid &= rng.random(spec.frame) >= spec.dropout

    logger.debug(f"Scène seed={spec.seed} rendue : {len(spec.planes)} plans, grille {intr.grid_u}×{intr.grid_v}")
    return LightField(samples, intr), DisparityMap(groundtruth, valid)


def visible_fractions(planes: Sequence[PlaneSpec], frame: Tuple[int, int]) -> List[float]:
    """Part du cadre où chaque plan est visible dans la vue centrale"""
    covered = np.zeros(frame, dtype=bool)
    fractions = []
    for plane in planes:
        visible = plane.region_mask(frame) & ~covered
        fractions.append(float(visible.mean()))
        covered |= visible
    return fractions


# =============================================================================
# SCÈNES ALÉATOIRES
# =============================================================================

def _sample_depths(rng: np.random.Generator, n_planes: int, depth_range: Tuple[float, float],
                   intr: CameraIntrinsics, disparity_levels: Optional[Sequence[float]]) -> List[float]:
    if disparity_levels is None:
        for _ in range(MAX_SCENE_RETRIES):
            depths = np.sort(rng.uniform(depth_range[0], depth_range[1], n_planes))
            if np.all(np.diff(depths) > 0):
                return [float(z) for z in depths]
        raise SceneGenerationError(f"Impossible de tirer {n_planes} profondeurs distinctes dans {depth_range}")

    candidates = sorted(
        {float(depth_from_disparity(d, intr)) for d in disparity_levels if d > 0}
    )
    candidates = [z for z in candidates if depth_range[0] <= z <= depth_range[1]]
    if len(candidates) < n_planes:
        raise SceneGenerationError(
            f"Seulement {len(candidates)} niveaux de disparité dans {depth_range} pour {n_planes} plans"
        )
    picked = rng.choice(len(candidates), size=n_planes, replace=False)
    return sorted(candidates[i] for i in picked)


def _sample_rectangle(rng: np.random.Generator, frame: Tuple[int, int]) -> Rectangle:
    height = int(rng.integers(max(1, frame[0] // 4), max(2, frame[0] * 3 // 5) + 1))
    width = int(rng.integers(max(1, frame[1] // 4), max(2, frame[1] * 3 // 5) + 1))
    top = int(rng.integers(0, frame[0] - height + 1))
    left = int(rng.integers(0, frame[1] - width + 1))
    return top, left, height, width


def make_random_scene(seed: int, n_planes: int, depth_range: Tuple[float, float], intr: CameraIntrinsics,
                      frame: Tuple[int, int] = SYNTH_FRAME, channels: int = 3,
                      disparity_levels: Optional[Sequence[float]] = None, dropout: float = 0.0,
                      cutoff: float = TEXTURE_CUTOFF) -> SceneSpec:
    """
    Scène aléatoire déterministe en `seed`.

    Le plan le plus lointain couvre tout le cadre ; les plans plus proches
    sont des rectangles. Chaque plan reste visible sur au moins 5 % du cadre,
    sinon on retire les rectangles (essais bornés).
    `disparity_levels` cale les plans sur des disparités données (ex. celles
    d'une pile focale).
    """
    if n_planes < 1:
        raise ParameterError(f"n_planes doit être ≥ 1 (reçu {n_planes})")
    z_min, z_max = depth_range
    if not (np.isfinite(z_min) and np.isfinite(z_max) and 0 < z_min < z_max):
        raise DomainError(f"Intervalle de profondeur invalide : {depth_range}")

    rng = np.random.default_rng(seed)
    depths = _sample_depths(rng, n_planes, depth_range, intr, disparity_levels)
    textures = [TextureSpec(seed=int(rng.integers(2 ** 31)), cutoff=cutoff) for _ in range(n_planes)]

    background = PlaneSpec(depths[-1], textures[-1], None)
    for attempt in range(MAX_SCENE_RETRIES):
        planes = [PlaneSpec(z, t, _sample_rectangle(rng, frame)) for z, t in zip(depths[:-1], textures[:-1])]
        planes.append(background)
        if min(visible_fractions(planes, frame)) >= MIN_VISIBLE_FRACTION:
            logger.debug(f"Scène seed={seed} acceptée après {attempt + 1} essai(s)")
            return SceneSpec(tuple(planes), intr, seed, frame, channels, dropout)

    raise SceneGenerationError(
        f"Aucun agencement de {n_planes} plans visible à {MIN_VISIBLE_FRACTION:.0%} "
        f"après {MAX_SCENE_RETRIES} essais (seed={seed})"
    )
