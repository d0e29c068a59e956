"""
Refocus d'un light-field par décalage-et-moyenne, avec décalage sous-pixel
par déphasage dans le domaine de Fourier.

Convention de signe (voir docs/refocus-convention.md) :
    phase_shift(I, dx, dy)(x, y) = I(x + dx, y + dy)
un dx positif fait glisser le contenu vers les x décroissants ;
le bord est circulaire, hérité de la DFT.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import DomainError, ShapeError
from .lightfield_core import CameraIntrinsics, LightField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FocalStack:
    """S images refocalisées et la disparité de mise au point de chacune"""
    slices: np.ndarray
    focus_disparities: Tuple[float, ...]
    intrinsics: Optional[CameraIntrinsics] = None

    def __post_init__(self):
        slices = np.asarray(self.slices).view()
        if slices.ndim != 4:
            raise ShapeError(f"Une pile focale est indexée (S, y, x, canal), reçu {slices.shape}")
        disparities = tuple(float(d) for d in self.focus_disparities)
        if len(disparities) < 1 or len(disparities) != slices.shape[0]:
            raise DomainError(f"{slices.shape[0]} tranches pour {len(disparities)} disparités")
        steps = np.diff(disparities)
        if len(steps) and not (np.all(steps < 0) or np.all(steps > 0)):
            raise DomainError("Les disparités de mise au point doivent être strictement monotones")
        if not np.all(np.isfinite(slices)):
            raise DomainError("La pile focale contient des valeurs non finies")
        slices.setflags(write=False)
        object.__setattr__(self, "slices", slices)
        object.__setattr__(self, "focus_disparities", disparities)

    @property
    def size(self) -> int:
        return self.slices.shape[0]

    @property
    def height(self) -> int:
        return self.slices.shape[1]

    @property
    def width(self) -> int:
        return self.slices.shape[2]


def phase_ramp(shape: Tuple[int, int], dx: float, dy: float) -> np.ndarray:
    """exp(2πi(dx·ξx + dy·ξy)) sur la grille de fréquences normalisées de la FFT"""
    fy = np.fft.fftfreq(shape[0])
    fx = np.fft.fftfreq(shape[1])
    return np.exp(2j * np.pi * dy * fy)[:, None] * np.exp(2j * np.pi * dx * fx)[None, :]


def phase_shift(image: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """
    Décale une image mono-canal de (dx, dy) pixels, sous-pixel compris.

    Le résultat est la partie réelle de F⁻¹{F{I}·exp(2πi(dx·ξx + dy·ξy))}.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"phase_shift attend une image 2D, reçu {image.shape}")
    if not np.all(np.isfinite(image)):
        raise DomainError("phase_shift : image non finie")
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise DomainError(f"phase_shift : décalage non fini ({dx}, {dy})")
    spectrum = np.fft.fft2(image) * phase_ramp(image.shape, dx, dy)
    return np.real(np.fft.ifft2(spectrum))


def _refocus_views(lf: LightField, disparities: Sequence[float]) -> np.ndarray:
    """
    Moyenne des sous-ouvertures décalées de d·(centre − position), pour
    chaque disparité. Chaque vue n'est transformée qu'une fois ; l'accumulation
    se fait dans le domaine de Fourier, dans l'ordre fixe (u, v).
    """
    intr = lf.intrinsics
    height, width, channels = lf.height, lf.width, lf.channels
    accumulator = np.zeros((len(disparities), height, width, channels), dtype=np.complex128)

    for u in range(intr.grid_u):
        for v in range(intr.grid_v):
            spectrum = np.fft.fft2(lf.samples[u, v].astype(np.float64), axes=(0, 1))
            for k, d in enumerate(disparities):
                ramp = phase_ramp((height, width), d * (intr.center_u - u), d * (intr.center_v - v))
                accumulator[k] += spectrum * ramp[:, :, None]

    accumulator /= intr.grid_u * intr.grid_v
    return np.real(np.fft.ifft2(accumulator, axes=(1, 2)))


def refocus_at_disparity(lf: LightField, d: float) -> np.ndarray:
    """Image (hauteur, largeur, canaux) mise au point sur la disparité d"""
    if not isinstance(lf, LightField):
        raise DomainError("refocus_at_disparity attend un LightField valide")
    if not np.isfinite(d):
        raise DomainError(f"Disparité de refocus non finie : {d}")
    return _refocus_views(lf, [float(d)])[0]


def synthesize_stack(lf: LightField, d_near: float, d_far: float, S: int) -> FocalStack:
    """Pile de S images refocalisées sur des disparités linéairement espacées de d_near à d_far"""
    if not isinstance(lf, LightField):
        raise DomainError("synthesize_stack attend un LightField valide")
    if S <= 0:
        raise DomainError(f"La taille de pile doit être ≥ 1 (reçu {S})")
    if d_near < d_far:
        raise DomainError(f"d_near ({d_near}) doit être ≥ d_far ({d_far})")
    if d_far < 0:
        raise DomainError(f"d_far doit être ≥ 0 (reçu {d_far})")
    if S == 1 and d_near != d_far:
        raise DomainError("Une pile d'une seule tranche demande d_near == d_far")
    if S >= 2 and d_near == d_far:
        raise DomainError("d_near doit être strictement supérieur à d_far pour S ≥ 2")

    disparities = np.linspace(d_near, d_far, S)
    logger.debug(f"Refocus de {S} tranches sur [{d_near}, {d_far}]")
    slices = _refocus_views(lf, disparities)
    return FocalStack(slices, tuple(disparities), lf.intrinsics)
