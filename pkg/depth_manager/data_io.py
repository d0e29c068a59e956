"""
Persistance : codecs PFM / PNG, conteneur de dataset, conteneur light-field,
checkpoints du réseau et fusion médiane de cartes de profondeur

Arborescence d'un dataset (voir docs/dataset-format.md) :
    <root>/manifest.json
    <root>/<scene>/stack_<NNNN>/slice_<SS>.png
    <root>/<scene>/stack_<NNNN>/disparity.pfm  (et/ou depth.png)
    <root>/<scene>/stack_<NNNN>/meta.json
Les mesures invalides sont codées 0 dans les fichiers.
"""
import json
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .config import (
    CHECKPOINT_SCHEMA_VERSION,
    CODE_VERSION,
    DATASET_SCHEMA_VERSION,
    LIGHTFIELD_SCHEMA_VERSION,
)
from .ddffnet import NetworkSpec, build_network
from .exceptions import DatasetLoadError, DomainError, ParameterError, ShapeError
from .lightfield_core import CameraIntrinsics, DepthMap, DisparityMap, LightField
from .training import TrainedModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.json"
STACK_META_NAME = "meta.json"
DISPARITY_NAME = "disparity.pfm"
DEPTH_NAME = "depth.png"
LIGHTFIELD_META_NAME = "lightfield.json"
MAX_DEPTH_MM = 65535


def _write_json(path: Path, data: Dict[str, Any]):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise DatasetLoadError(f"Fichier introuvable : {path}", str(path))
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DatasetLoadError(f"JSON illisible : {path} ({e})", str(path)) from e


# =============================================================================
# CODECS
# =============================================================================

def write_pfm(path: PathLike, values: np.ndarray):
    """PFM niveaux de gris ('Pf'), float32 little-endian, lignes du bas vers le haut"""
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ShapeError(f"PFM : carte 2D attendue, reçu {values.shape}")
    height, width = values.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(values[::-1]).tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"Fichier introuvable : {path}", str(path))
    with open(path, "rb") as f:
        try:
            kind = f.readline().decode("ascii").strip()
            width, height = (int(x) for x in f.readline().decode("ascii").split())
            scale = float(f.readline().decode("ascii").strip())
        except (UnicodeDecodeError, ValueError) as e:
            raise DatasetLoadError(f"En-tête PFM invalide : {path}", str(path)) from e
        if kind not in ("Pf", "PF"):
            raise DatasetLoadError(f"Type PFM inconnu '{kind}' : {path}", str(path))
        channels = 3 if kind == "PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != width * height * channels:
        raise DatasetLoadError(f"PFM tronqué : {path} ({data.size} valeurs pour {width}×{height}×{channels})",
                               str(path))
    shape = (height, width, channels) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].astype(np.float32)


def write_png8(path: PathLike, image: np.ndarray):
    """Image [0, 1] (H, W[, C]) -> PNG 8 bits"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")


def read_png8(path: PathLike) -> np.ndarray:
    """PNG 8 bits -> (H, W, C) float64 dans [0, 1]"""
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"Fichier introuvable : {path}", str(path))
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img)
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetLoadError(f"Image corrompue : {path} ({e})", str(path)) from e
    if pixels.dtype != np.uint8:
        raise DatasetLoadError(f"PNG 8 bits attendu : {path} ({pixels.dtype})", str(path))
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return pixels.astype(np.float64) / 255.0


def write_depth_png(path: PathLike, depth: DepthMap):
    """Profondeur en millimètres sur 16 bits ; 0 pour les pixels invalides"""
    millimeters = np.zeros(depth.shape)
    millimeters[depth.mask] = np.round(depth.values[depth.mask] * 1000.0)
    if np.any(millimeters > MAX_DEPTH_MM):
        logger.warning(f"⚠️  Profondeurs > {MAX_DEPTH_MM} mm tronquées : {path}")
        millimeters = np.minimum(millimeters, MAX_DEPTH_MM)
    Image.fromarray(millimeters.astype(np.uint16)).save(path, format="PNG")


def read_depth_png(path: PathLike) -> DepthMap:
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"Fichier introuvable : {path}", str(path))
    try:
        with Image.open(path) as img:
            millimeters = np.asarray(img).astype(np.float64)
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetLoadError(f"Image de profondeur corrompue : {path} ({e})", str(path)) from e
    if millimeters.ndim != 2:
        raise DatasetLoadError(f"Profondeur mono-canal attendue : {path}", str(path))
    mask = millimeters > 0
    return DepthMap(millimeters / 1000.0, mask)


def write_disparity(path: PathLike, disparity: DisparityMap):
    write_pfm(path, np.where(disparity.mask, disparity.values, 0.0))


def read_disparity(path: PathLike) -> DisparityMap:
    values = read_pfm(path).astype(np.float64)
    if values.ndim != 2:
        raise DatasetLoadError(f"Disparité mono-canal attendue : {path}", str(path))
    return DisparityMap(values, np.isfinite(values) & (values > 0))


# =============================================================================
# CONTENEUR DE DATASET
# =============================================================================

@dataclass
class StackRecord:
    """
    Une pile à enregistrer : focale (`focus_disparities`) ou pseudo-pile DFLF
    (`subaperture_indices`).
    """
    slices: np.ndarray
    focus_disparities: Optional[Sequence[float]] = None
    subaperture_indices: Optional[Sequence[Tuple[int, int]]] = None
    disparity: Optional[DisparityMap] = None
    depth: Optional[DepthMap] = None
    intrinsics: Optional[CameraIntrinsics] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "dflf" if self.subaperture_indices is not None else "focal"


@dataclass
class SceneRecord:
    name: str
    stacks: List[StackRecord]


def _check_stack_meta(meta: Dict[str, Any], where: Path):
    n_slices = len(meta.get("slices", []))
    if n_slices < 1:
        raise DatasetLoadError(f"Pile sans tranche : {where}", str(where))
    if meta.get("kind", "focal") == "focal":
        disparities = meta.get("focus_disparities") or []
        if len(disparities) != n_slices:
            raise DatasetLoadError(
                f"{n_slices} tranches pour {len(disparities)} disparités de mise au point : {where}", str(where)
            )
        if any(b >= a for a, b in zip(disparities, disparities[1:])):
            raise DatasetLoadError(f"Disparités de mise au point non décroissantes : {where}", str(where))
    elif len(meta.get("subaperture_indices") or []) != n_slices:
        raise DatasetLoadError(f"Indices de sous-ouvertures incohérents : {where}", str(where))


def save_dataset(root: PathLike, scenes: Sequence[SceneRecord],
                 intrinsics: Optional[CameraIntrinsics] = None) -> Path:
    """Écrit un dataset complet et son manifeste ; retourne le chemin du manifeste"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "intrinsics": intrinsics.to_dict() if intrinsics else None,
        "scenes": [],
    }
    for scene in scenes:
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", scene.name):
            raise ParameterError(f"Nom de scène invalide : {scene.name!r}")
        entry = {"name": scene.name, "stacks": []}
        for index, stack in enumerate(scene.stacks):
            relative = f"{scene.name}/stack_{index:04d}"
            entry["stacks"].append(relative)
            _save_stack(root / relative, stack)
        manifest["scenes"].append(entry)

    manifest_path = root / MANIFEST_NAME
    _write_json(manifest_path, manifest)
    n_stacks = sum(len(s.stacks) for s in scenes)
    logger.info(f"💾 Dataset écrit : {root} ({len(scenes)} scènes, {n_stacks} piles)")
    return manifest_path


def _save_stack(stack_dir: Path, stack: StackRecord):
    slices = np.asarray(stack.slices)
    if slices.ndim != 4:
        raise ShapeError(f"Pile (S, H, W, C) attendue, reçu {slices.shape}")
    if slices.min() < 0 or slices.max() > 1:
        # les tranches refocalisées peuvent déborder de [0, 1] à l'interpolation près
        slices = np.clip(slices, 0.0, 1.0)
    stack_dir.mkdir(parents=True, exist_ok=True)

    names = []
    for k, image in enumerate(slices):
        name = f"slice_{k:02d}.png"
        write_png8(stack_dir / name, image)
        names.append(name)

    meta = {
        "kind": stack.kind,
        "slices": names,
        "height": int(slices.shape[1]),
        "width": int(slices.shape[2]),
        "channels": int(slices.shape[3]),
        "focus_disparities": [float(d) for d in stack.focus_disparities] if stack.focus_disparities is not None else None,
        "subaperture_indices": [list(map(int, p)) for p in stack.subaperture_indices]
        if stack.subaperture_indices is not None else None,
        "disparity": None,
        "depth": None,
        "intrinsics": stack.intrinsics.to_dict() if stack.intrinsics else None,
        "extra": stack.extra,
    }
    if stack.disparity is not None:
        write_disparity(stack_dir / DISPARITY_NAME, stack.disparity)
        meta["disparity"] = DISPARITY_NAME
    if stack.depth is not None:
        write_depth_png(stack_dir / DEPTH_NAME, stack.depth)
        meta["depth"] = DEPTH_NAME
    _check_stack_meta(meta, stack_dir)
    _write_json(stack_dir / STACK_META_NAME, meta)


@dataclass
class StackEntry:
    """Pile d'un dataset chargé ; les fichiers ne sont lus qu'à la demande"""
    scene: str
    index: int
    directory: Path
    meta: Dict[str, Any]
    default_intrinsics: Optional[CameraIntrinsics] = None

    @property
    def name(self) -> str:
        return self.directory.name

    @property
    def kind(self) -> str:
        return self.meta.get("kind", "focal")

    @property
    def size(self) -> int:
        return len(self.meta["slices"])

    @property
    def focus_disparities(self) -> Optional[Tuple[float, ...]]:
        values = self.meta.get("focus_disparities")
        return tuple(values) if values is not None else None

    @property
    def subaperture_indices(self) -> Optional[List[Tuple[int, int]]]:
        values = self.meta.get("subaperture_indices")
        return [tuple(p) for p in values] if values is not None else None

    @property
    def intrinsics(self) -> Optional[CameraIntrinsics]:
        data = self.meta.get("intrinsics")
        return CameraIntrinsics.from_dict(data) if data else self.default_intrinsics

    @property
    def has_disparity(self) -> bool:
        return bool(self.meta.get("disparity"))

    def load_slice(self, k: int) -> np.ndarray:
        return read_png8(self.directory / self.meta["slices"][k])

    def load_slices(self) -> np.ndarray:
        return np.stack([self.load_slice(k) for k in range(self.size)])

    def load_disparity(self) -> DisparityMap:
        if not self.has_disparity:
            raise DatasetLoadError(f"Pas de disparité pour {self.directory}", str(self.directory))
        return read_disparity(self.directory / self.meta["disparity"])

    def load_depth(self) -> DepthMap:
        if not self.meta.get("depth"):
            raise DatasetLoadError(f"Pas de profondeur pour {self.directory}", str(self.directory))
        return read_depth_png(self.directory / self.meta["depth"])


@dataclass
class Dataset:
    root: Path
    manifest: Dict[str, Any]
    entries: List[StackEntry]

    @property
    def scenes(self) -> List[str]:
        return [s["name"] for s in self.manifest["scenes"]]

    @property
    def intrinsics(self) -> Optional[CameraIntrinsics]:
        data = self.manifest.get("intrinsics")
        return CameraIntrinsics.from_dict(data) if data else None

    def stacks(self, scene: Optional[str] = None) -> Iterator[StackEntry]:
        for entry in self.entries:
            if scene is None or entry.scene == scene:
                yield entry

    def __len__(self) -> int:
        return len(self.entries)


def load_dataset(root: PathLike) -> Dataset:
    """
    Lit le manifeste et les méta-données de chaque pile, vérifie que tous les
    fichiers référencés existent ; les images restent sur disque.
    """
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    manifest = _read_json(manifest_path)
    version = manifest.get("schema_version")
    if version != DATASET_SCHEMA_VERSION:
        raise DatasetLoadError(
            f"Version de schéma {version} non supportée (attendu {DATASET_SCHEMA_VERSION}) : {manifest_path}",
            str(manifest_path),
        )
    default_intrinsics = CameraIntrinsics.from_dict(manifest["intrinsics"]) if manifest.get("intrinsics") else None

    entries = []
    for scene in manifest.get("scenes", []):
        for index, relative in enumerate(scene.get("stacks", [])):
            directory = root / relative
            meta = _read_json(directory / STACK_META_NAME)
            _check_stack_meta(meta, directory / STACK_META_NAME)
            referenced = list(meta["slices"]) + [meta[k] for k in ("disparity", "depth") if meta.get(k)]
            for name in referenced:
                if not (directory / name).exists():
                    raise DatasetLoadError(f"Fichier référencé introuvable : {directory / name}",
                                           str(directory / name))
            entries.append(StackEntry(scene["name"], index, directory, meta, default_intrinsics))

    logger.info(f"📂 Dataset chargé : {root} ({len(manifest.get('scenes', []))} scènes, {len(entries)} piles)")
    return Dataset(root, manifest, entries)


# =============================================================================
# CONTENEUR LIGHT-FIELD
# =============================================================================

def save_lightfield(directory: PathLike, lf: LightField) -> Path:
    """Sous-ouvertures en PNG 8 bits sub_<UU>_<VV>.png + lightfield.json"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    intr = lf.intrinsics
    for u in range(intr.grid_u):
        for v in range(intr.grid_v):
            write_png8(directory / f"sub_{u:02d}_{v:02d}.png", lf.samples[u, v])
    meta = {
        "schema_version": LIGHTFIELD_SCHEMA_VERSION,
        "intrinsics": intr.to_dict(),
        "height": lf.height,
        "width": lf.width,
        "channels": lf.channels,
    }
    _write_json(directory / LIGHTFIELD_META_NAME, meta)
    return directory


def load_lightfield(directory: PathLike) -> LightField:
    directory = Path(directory)
    meta_path = directory / LIGHTFIELD_META_NAME
    meta = _read_json(meta_path)
    if meta.get("schema_version") != LIGHTFIELD_SCHEMA_VERSION:
        raise DatasetLoadError(f"Version de schéma light-field non supportée : {meta_path}", str(meta_path))
    intr = CameraIntrinsics.from_dict(meta["intrinsics"])
    samples = np.zeros((intr.grid_u, intr.grid_v, meta["height"], meta["width"], meta["channels"]))
    for u in range(intr.grid_u):
        for v in range(intr.grid_v):
            path = directory / f"sub_{u:02d}_{v:02d}.png"
            view = read_png8(path)
            if view.shape != samples.shape[2:]:
                raise DatasetLoadError(f"Sous-ouverture {view.shape} ≠ {samples.shape[2:]} : {path}", str(path))
            samples[u, v] = view
    return LightField(samples, intr)


# =============================================================================
# CHECKPOINTS
# =============================================================================

TENSOR_PREFIX = "tensor:"


def save_checkpoint(path: PathLike, trained: TrainedModel) -> Path:
    """
    Archive .npz unique : un tableau '<f4' par tenseur nommé du state dict,
    plus `meta` (JSON : schéma, spec, normalisation, méta-données d'entraînement).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = trained.model.state_dict()
    arrays = {f"{TENSOR_PREFIX}{name}": tensor.detach().cpu().numpy().astype("<f4") for name, tensor in state.items()}
    meta = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "code_version": CODE_VERSION,
        "spec": trained.spec.to_dict(),
        "normalization": trained.normalization,
        "metadata": trained.metadata,
        "history": trained.history,
        "tensor_names": list(state.keys()),
    }
    with open(path, "wb") as f:
        np.savez(f, meta=np.array(json.dumps(meta, sort_keys=True, default=float)), **arrays)
    logger.info(f"💾 Checkpoint écrit : {path}")
    return path


def load_checkpoint(path: PathLike) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"Checkpoint introuvable : {path}", str(path))
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            arrays = {k[len(TENSOR_PREFIX):]: archive[k] for k in archive.files if k.startswith(TENSOR_PREFIX)}
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        raise DatasetLoadError(f"Checkpoint illisible : {path} ({e})", str(path)) from e

    if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise DatasetLoadError(f"Version de checkpoint {meta.get('schema_version')} non supportée : {path}",
                               str(path))
    spec = NetworkSpec.from_dict(meta["spec"])
    model = build_network(spec)
    missing = set(meta["tensor_names"]) - set(arrays)
    if missing:
        raise DatasetLoadError(f"Tenseurs manquants dans {path} : {sorted(missing)[:5]}", str(path))
    try:
        model.load_state_dict({name: torch.from_numpy(np.array(arrays[name])) for name in meta["tensor_names"]})
    except RuntimeError as e:
        raise DatasetLoadError(f"Checkpoint incompatible avec le réseau {spec.variant} : {path} ({e})",
                               str(path)) from e
    model.eval()
    return TrainedModel(spec, model, meta.get("metadata", {}), meta.get("history", []))


# =============================================================================
# FUSION DE PROFONDEUR
# =============================================================================

def median_fuse(frames: Sequence[DepthMap], n: int = 9) -> DepthMap:
    """
    Médiane par pixel des échantillons valides d'au plus n cartes ;
    un pixel n'est invalide que si aucune carte n'y est valide.
    """
    frames = list(frames)
    if not frames:
        raise ParameterError("median_fuse demande au moins une carte")
    if n < 1:
        raise ParameterError(f"n doit être ≥ 1 (reçu {n})")
    if len(frames) > n:
        raise ParameterError(f"{len(frames)} cartes fournies pour une fusion de {n}")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ShapeError(f"Cartes de tailles différentes : {[f.shape for f in frames]}")
    if not all(isinstance(f, DepthMap) for f in frames):
        raise DomainError("median_fuse attend des DepthMap")

    samples = np.stack([np.where(f.mask, f.values, np.nan) for f in frames])
    valid = np.any(np.stack([f.mask for f in frames]), axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fused = np.nanmedian(samples, axis=0)
    return DepthMap(np.where(valid, fused, 0.0), valid)
