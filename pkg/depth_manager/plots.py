"""
Sorties graphiques et tabulaires : courbes BadPix, résumés de distribution
des disparités, cartes de score par tranche, visualisation couleur.

Chaque figure est accompagnée de ses données (CSV ou .npy) ; aucun affichage interactif.
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib import colormaps  # noqa: E402
from PIL import Image  # noqa: E402

from .lightfield_core import DisparityMap  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SUMMARY_COLUMNS = ("min", "q1", "median", "mean", "q3", "max")

plt.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
})


def colorize_disparity(values: np.ndarray, max_disparity: float, colormap: str = "viridis") -> np.ndarray:
    """Carte (H, W) -> RGB uint8, normalisée par la disparité de mise au point maximale"""
    scale = max_disparity if max_disparity > 0 else max(float(np.nanmax(values)), 1e-12)
    normalized = np.clip(np.nan_to_num(values / scale), 0.0, 1.0)
    rgba = colormaps[colormap](normalized)
    return (rgba[:, :, :3] * 255.0).round().astype(np.uint8)


def save_colorized(path: PathLike, values: np.ndarray, max_disparity: float, colormap: str = "viridis"):
    Image.fromarray(colorize_disparity(values, max_disparity, colormap)).save(path, format="PNG")


def disparity_summary(dmap: DisparityMap) -> Dict[str, float]:
    """min, quartiles, médiane, moyenne, max des pixels valides"""
    series = pd.Series(dmap.values[dmap.mask])
    if series.empty:
        return {key: float("nan") for key in SUMMARY_COLUMNS}
    return {
        "min": float(series.min()),
        "q1": float(series.quantile(0.25)),
        "median": float(series.median()),
        "mean": float(series.mean()),
        "q3": float(series.quantile(0.75)),
        "max": float(series.max()),
    }


def badpix_frame(curves: Dict[str, Sequence[Tuple[float, float]]]) -> pd.DataFrame:
    """{étiquette: [(τ, %)]} -> tableau long (label, tau, badpix)"""
    rows = [{"label": label, "tau": tau, "badpix": value} for label, curve in curves.items() for tau, value in curve]
    return pd.DataFrame(rows, columns=["label", "tau", "badpix"])


def plot_badpix_curves(frame: pd.DataFrame, path: PathLike, title: str = "BadPix") -> Path:
    """Une courbe BadPix(τ) par étiquette ; écrit aussi le CSV à côté de l'image"""
    path = Path(path)
    frame.to_csv(path.with_suffix(".csv"), index=False)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, group in frame.groupby("label", sort=True):
        ax.plot(group["tau"], group["badpix"], marker="o", markersize=3, label=str(label))
    ax.set_xlabel("τ (pixels)")
    ax.set_ylabel("BadPix (%)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    if frame["label"].nunique() <= 12:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_disparity_summaries(frame: pd.DataFrame, path: PathLike) -> Path:
    """Boîtes à moustaches par scène à partir des résumés (colonnes SUMMARY_COLUMNS + scene)"""
    path = Path(path)
    frame.to_csv(path.with_suffix(".csv"), index=False)
    per_scene = frame.groupby("scene", sort=True)[list(SUMMARY_COLUMNS)].mean()
    stats = [
        {"label": scene, "whislo": row["min"], "q1": row["q1"], "med": row["median"],
         "mean": row["mean"], "q3": row["q3"], "whishi": row["max"]}
        for scene, row in per_scene.iterrows()
    ]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(stats) + 2), 3.5))
    if stats:
        ax.bxp(stats, showmeans=True, showfliers=False)
    ax.set_ylabel("disparité (pixels)")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_score_maps(maps: np.ndarray, labels: List[str], path: PathLike) -> Path:
    """Une vignette par tranche, échelle de couleur commune"""
    path = Path(path)
    n = maps.shape[0]
    cols = min(n, 5)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.0 * rows), squeeze=False)
    vmin, vmax = float(np.min(maps)), float(np.max(maps))
    for k, ax in enumerate(axes.flat):
        ax.axis("off")
        if k < n:
            ax.imshow(maps[k], cmap="magma", vmin=vmin, vmax=vmax)
            ax.set_title(labels[k], fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    np.save(path.with_suffix(".npy"), maps.astype(np.float32))
    return path
