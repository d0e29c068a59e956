"""
Commandes du pipeline : synth, refocus, train, eval, predict, plot

Chaque run écrit exactement un manifeste JSON dans <output_dir>/manifests/
(jamais écrasé), un log dans <output_dir>/logs/ et ses artefacts dans
<output_dir>/<commande>_<horodatage>/.
"""
import hashlib
import json
import logging
import re
import shutil
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import sentry_sdk

from .classic_dff import argmax_disparity
from .config import CODE_VERSION, LOG_FORMAT, PATCH_SIZE
from .data_io import (
    SceneRecord,
    StackEntry,
    StackRecord,
    load_checkpoint,
    load_dataset,
    load_lightfield,
    read_pfm,
    save_checkpoint,
    save_dataset,
    save_lightfield,
    write_pfm,
)
from .ddffnet import (
    NetworkSpec,
    build_network,
    default_dflf_pattern,
    dflf_input,
    forward,
    load_encoder_weights,
    slice_score_maps,
)
from .exceptions import ParameterError
from .lightfield_core import DisparityMap, disparity_map_to_depth, lytro_intrinsics
from .metrics import MetricsReport, badpix_curve, compute_metrics, depth_error
from .plots import (
    badpix_frame,
    disparity_summary,
    plot_badpix_curves,
    plot_disparity_summaries,
    plot_score_maps,
    save_colorized,
)
from .refocus import FocalStack, synthesize_stack
from .run_config import validate_run_config
from .synthgen import make_random_scene, render_lightfield
from .training import PatchSet, TrainConfig, crop_patches, train

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y%m%d_%H%M%S"


# =============================================================================
# MANIFESTE DE RUN
# =============================================================================

@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: Optional[int]
    code_version: str = CODE_VERSION
    started_at: str = ""
    finished_at: str = ""
    status: str = "running"
    error: Optional[str] = None
    dataset_hash: Optional[str] = None
    outputs: Dict[str, Any] = field(default_factory=dict)
    epochs: List[Dict[str, float]] = field(default_factory=list)
    reports: List[Dict[str, Any]] = field(default_factory=list)
    aggregate: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, directory: Path, stem: str) -> Path:
        """Écrit le manifeste sans jamais écraser un fichier existant"""
        directory.mkdir(parents=True, exist_ok=True)
        suffix = 0
        while True:
            name = f"{stem}.json" if suffix == 0 else f"{stem}_{suffix}.json"
            path = directory / name
            try:
                with open(path, "x", encoding="utf-8") as f:
                    json.dump(self.to_dict(), f, ensure_ascii=False, indent=2, default=str)
                    f.write("\n")
                return path
            except FileExistsError:
                suffix += 1


def load_manifest(path: Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def unique_run_dir(output_dir: Path, command: str, timestamp: str) -> Path:
    """<output_dir>/<commande>_<horodatage>[_<n>], créé à l'appel"""
    output_dir.mkdir(parents=True, exist_ok=True)
    suffix = 0
    while True:
        name = f"{command}_{timestamp}" if suffix == 0 else f"{command}_{timestamp}_{suffix}"
        candidate = output_dir / name
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            suffix += 1


def dataset_hash(root: Path) -> str:
    """sha256 des chemins relatifs et du contenu de tous les fichiers, dans l'ordre trié"""
    digest = hashlib.sha256()
    for path in sorted(p for p in Path(root).rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode("utf-8"))
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


def _attach_run_log(log_dir: Path, stem: str) -> logging.Handler:
    log_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(log_dir / f"{stem}.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(logging.INFO)
    package_logger = logging.getLogger("depth_manager")
    package_logger.addHandler(handler)
    if package_logger.getEffectiveLevel() > logging.INFO:
        package_logger.setLevel(logging.INFO)
    return handler


# =============================================================================
# POINT D'ENTRÉE
# =============================================================================

def run(command: str, config: Dict[str, Any]) -> Tuple[int, RunManifest, Path]:
    """
    Valide la configuration (ConfigError remonte telle quelle), exécute la
    commande et écrit le manifeste. Retourne (code de sortie, manifeste, chemin du manifeste).
    """
    validate_run_config(command, config)
    output_dir = Path(config["paths"]["output_dir"])
    timestamp = datetime.now().strftime(TIMESTAMP_FORMAT)
    run_dir = unique_run_dir(output_dir, command, timestamp)
    handler = _attach_run_log(output_dir / "logs", run_dir.name)

    manifest = RunManifest(command=command, config=config, seed=config.get("seed"),
                           started_at=datetime.now().isoformat(timespec="seconds"))
    manifest.outputs["run_dir"] = str(run_dir)
    logger.info(f"🚀 Démarrage de {command} ({run_dir.name})")
    start = time.perf_counter()
    status = 0
    try:
        COMMANDS[command](config, manifest, run_dir)
        manifest.status = "success"
        logger.info(f"✅ {command} terminé")
    except Exception as e:
        status = 1
        manifest.status = "failed"
        manifest.error = f"{type(e).__name__}: {e}"
        logger.exception(f"❌ Échec de {command} : {e}")
        sentry_sdk.capture_exception(e)
    finally:
        manifest.timings["total_s"] = round(time.perf_counter() - start, 3)
        manifest.finished_at = datetime.now().isoformat(timespec="seconds")
        manifest_path = manifest.write(output_dir / "manifests", run_dir.name)
        logger.info(f"📝 Manifeste : {manifest_path}")
        logging.getLogger("depth_manager").removeHandler(handler)
        handler.close()
    return status, manifest, manifest_path


# =============================================================================
# SYNTH
# =============================================================================

def run_synth(config: Dict[str, Any], manifest: RunManifest, run_dir: Path):
    synth, stack_cfg = config["synth"], config["stack"]
    root = Path(config["paths"]["dataset_root"])
    if root.exists() and any(root.iterdir()):
        if not synth["overwrite"]:
            raise FileExistsError(f"Le dataset {root} existe déjà (synth.overwrite=true pour le remplacer)")
        logger.warning(f"🗑️  Remplacement du dataset existant {root}")
        shutil.rmtree(root)

    intr = lytro_intrinsics(config["camera"]["grid"])
    seed = config["seed"]
    rng = np.random.default_rng(seed)
    n_scenes = synth["scenes"]
    scene_seeds = rng.integers(0, 2 ** 31, size=n_scenes)
    plane_counts = rng.integers(synth["min_planes"], synth["max_planes"] + 1, size=n_scenes)
    focus = np.linspace(stack_cfg["d_near"], stack_cfg["d_far"], stack_cfg["size"])
    pattern = [tuple(p) for p in synth["dflf_pattern"]] if synth["dflf_pattern"] else None

    scenes = []
    for i in range(n_scenes):
        name = f"scene_{i:03d}"
        spec = make_random_scene(
            int(scene_seeds[i]), int(plane_counts[i]), tuple(synth["depth_range"]), intr,
            frame=tuple(synth["frame"]),
            disparity_levels=focus if synth["quantize_to_stack"] else None,
            dropout=synth["dropout"],
        )
        lf, groundtruth = render_lightfield(spec)
        record = StackRecord(
            slices=None,
            disparity=groundtruth,
            depth=disparity_map_to_depth(groundtruth, intr),
            intrinsics=intr,
            extra={"scene_spec": spec.to_dict()},
        )
        if synth["stack_kind"] == "dflf":
            indices = pattern or default_dflf_pattern(intr.grid_u, intr.grid_v)
            record.slices = dflf_input(lf, indices)
            record.subaperture_indices = indices
        else:
            stack = synthesize_stack(lf, stack_cfg["d_near"], stack_cfg["d_far"], stack_cfg["size"])
            record.slices = stack.slices
            record.focus_disparities = stack.focus_disparities
        if synth["export_lightfields"]:
            save_lightfield(root / name / "lightfield", lf)
        scenes.append(SceneRecord(name, [record]))
        logger.info(f"🎲 {name} : {len(spec.planes)} plan(s), disparités {[round(d, 4) for d in spec.disparities]}")

    save_dataset(root, scenes, intr)
    manifest.dataset_hash = dataset_hash(root)
    manifest.outputs["dataset_root"] = str(root)
    manifest.aggregate = {"scenes": n_scenes, "stack_kind": synth["stack_kind"]}


# =============================================================================
# REFOCUS
# =============================================================================

def run_refocus(config: Dict[str, Any], manifest: RunManifest, run_dir: Path):
    source = Path(config["paths"]["lightfield"])
    stack_cfg = config["stack"]
    lf = load_lightfield(source)
    start = time.perf_counter()
    stack = synthesize_stack(lf, stack_cfg["d_near"], stack_cfg["d_far"], stack_cfg["size"])
    manifest.timings["refocus_s"] = round(time.perf_counter() - start, 3)

    scene = re.sub(r"[^A-Za-z0-9_.-]", "_", source.name) or "lightfield"
    out_root = run_dir / "stack"
    record = StackRecord(stack.slices, stack.focus_disparities, intrinsics=lf.intrinsics)
    save_dataset(out_root, [SceneRecord(scene, [record])], lf.intrinsics)
    manifest.outputs["stack_root"] = str(out_root)
    manifest.aggregate = {"focus_disparities": list(stack.focus_disparities)}


# =============================================================================
# TRAIN
# =============================================================================

def _labelled_entries(root: Path) -> List[StackEntry]:
    dataset = load_dataset(root)
    entries = [e for e in dataset.stacks() if e.has_disparity]
    if not entries:
        raise ParameterError(f"Aucune pile avec disparité dans {root}")
    sizes = {e.size for e in entries}
    kinds = {e.kind for e in entries}
    if len(sizes) > 1 or len(kinds) > 1:
        raise ParameterError(f"Piles hétérogènes dans {root} : tailles {sorted(sizes)}, types {sorted(kinds)}")
    return entries


def run_train(config: Dict[str, Any], manifest: RunManifest, run_dir: Path):
    root = Path(config["paths"]["dataset_root"])
    entries = _labelled_entries(root)
    manifest.dataset_hash = dataset_hash(root)
    model_cfg, train_cfg = config["model"], config["train"]

    first = entries[0]
    height, width, channels = first.meta["height"], first.meta["width"], first.meta["channels"]
    spec = NetworkSpec(model_cfg["variant"], first.size, channels, model_cfg["width_multiplier"], model_cfg["dropout_p"])
    model = build_network(spec, seed=config["seed"])
    if model_cfg["pretrained"]:
        load_encoder_weights(model, model_cfg["pretrained"])

    patch_size = train_cfg["patch_size"] or min(PATCH_SIZE, height, width)
    patches = PatchSet.concatenate([
        crop_patches(entry.load_slices(), entry.load_disparity(), patch_size, train_cfg["patch_stride"],
                     train_cfg["max_missing"], stack_index=i)
        for i, entry in enumerate(entries)
    ])
    logger.info(f"✂️  {len(patches)} patchs {patch_size}×{patch_size} issus de {len(entries)} piles")

    cfg = TrainConfig.from_dict(train_cfg, seed=config["seed"])
    trained = train(model, patches, cfg)
    trained.metadata.update({
        "dataset_hash": manifest.dataset_hash,
        "stack_kind": first.kind,
        "focus_disparities": list(first.focus_disparities) if first.focus_disparities else None,
        "subaperture_indices": [list(p) for p in first.subaperture_indices] if first.subaperture_indices else None,
        "patch_size": patch_size,
    })

    checkpoint = save_checkpoint(run_dir / "model.npz", trained)
    curve = run_dir / "loss_curve.csv"
    pd.DataFrame(trained.history).to_csv(curve, index=False)
    manifest.epochs = trained.history
    manifest.outputs.update({"checkpoint": str(checkpoint), "loss_curve": str(curve)})
    manifest.aggregate = {
        "best_epoch": trained.metadata["best_epoch"],
        "best_score": trained.metadata["best_score"],
        "final_loss": trained.metadata["final_loss"],
    }


# =============================================================================
# EVAL / PREDICT
# =============================================================================

def dense_prediction(values: np.ndarray) -> DisparityMap:
    """Les prédictions sont denses : seul le caractère fini définit le masque"""
    values = np.asarray(values, dtype=np.float64)
    return DisparityMap(values, np.isfinite(values))


def _network_predictor(checkpoint: str) -> Callable[[StackEntry, np.ndarray], np.ndarray]:
    trained = load_checkpoint(checkpoint)
    return lambda entry, slices: forward(trained.model, slices[None])[0]


def _classic_predictor(measure: str, window: int) -> Callable[[StackEntry, np.ndarray], np.ndarray]:
    def predict(entry: StackEntry, slices: np.ndarray) -> np.ndarray:
        if entry.focus_disparities is None:
            raise ParameterError(f"Le DFF classique demande une pile focale ({entry.directory})")
        stack = FocalStack(slices, entry.focus_disparities, entry.intrinsics)
        return argmax_disparity(stack, measure, window).values
    return predict


def _external_predictor(predictions: str) -> Callable[[StackEntry, np.ndarray], np.ndarray]:
    return lambda entry, slices: read_pfm(Path(predictions) / entry.scene / f"{entry.name}.pfm")


def evaluate_stack(pred: DisparityMap, gt: DisparityMap, entry: StackEntry, eval_cfg: Dict[str, Any]
                   ) -> Tuple[MetricsReport, List[Tuple[float, float]], Dict[str, float]]:
    taus = sorted(set(eval_cfg["taus"]) | {eval_cfg["headline_tau"]})
    report = compute_metrics(pred, gt, taus)
    curve = badpix_curve(pred, gt, eval_cfg["taus"])
    extra = {}
    intr = entry.intrinsics
    if eval_cfg["depth_metrics"] and intr is not None:
        depth_report = depth_error(pred, gt, intr, taus)
        extra = {"depth_mse_m2": depth_report.mse, "depth_rms_m": depth_report.rms}
    return report, curve, extra


def run_eval(config: Dict[str, Any], manifest: RunManifest, run_dir: Path):
    root = Path(config["paths"]["dataset_root"])
    eval_cfg = config["eval"]
    entries = _labelled_entries(root)
    manifest.dataset_hash = dataset_hash(root)

    baseline = eval_cfg["baseline"]
    if baseline == "network":
        predictor = _network_predictor(config["paths"]["checkpoint"])
    elif baseline == "classic":
        predictor = _classic_predictor(eval_cfg["measure"], eval_cfg["window"])
    else:
        predictor = _external_predictor(config["paths"]["predictions"])

    rows, curves = [], {}
    for entry in entries:
        slices = entry.load_slices() if baseline != "external" else None
        start = time.perf_counter()
        pred = dense_prediction(predictor(entry, slices))
        runtime = time.perf_counter() - start
        gt = entry.load_disparity()
        report, curve, extra = evaluate_stack(pred, gt, entry, eval_cfg)
        label = f"{entry.scene}/{entry.name}"
        curves[label] = curve
        rows.append({"scene": entry.scene, "stack": entry.name, "runtime_s": round(runtime, 4),
                     **report.to_record(), **extra})
        logger.info(f"📏 {label} : MSE {report.mse:.3e}, BadPix({eval_cfg['headline_tau']:g}) "
                    f"{report.badpix.get(float(eval_cfg['headline_tau']), float('nan')):.2f} %")

    table = pd.DataFrame(rows)
    numeric = table.drop(columns=["scene", "stack"]).apply(pd.to_numeric, errors="coerce")
    aggregate = {key: float(value) for key, value in numeric.mean(skipna=True).items()}
    curve_frame = badpix_frame(curves)
    mean_curve = curve_frame.groupby("tau", sort=True)["badpix"].mean()
    aggregate["badpix_curve"] = [[float(t), float(v)] for t, v in mean_curve.items()]
    aggregate["baseline"] = baseline
    aggregate["headline_tau"] = eval_cfg["headline_tau"]

    csv_path = run_dir / "metrics.csv"
    xlsx_path = run_dir / "metrics.xlsx"
    badpix_path = run_dir / "badpix.csv"
    table.to_csv(csv_path, index=False)
    with pd.ExcelWriter(xlsx_path, engine="openpyxl") as writer:
        table.to_excel(writer, sheet_name="par_pile", index=False)
        pd.DataFrame([{k: v for k, v in aggregate.items() if k != "badpix_curve"}]).to_excel(
            writer, sheet_name="agregat", index=False)
    curve_frame.to_csv(badpix_path, index=False)

    manifest.reports = rows
    manifest.aggregate = aggregate
    manifest.outputs.update({"metrics_csv": str(csv_path), "metrics_xlsx": str(xlsx_path),
                             "badpix_csv": str(badpix_path)})


def run_predict(config: Dict[str, Any], manifest: RunManifest, run_dir: Path):
    trained = load_checkpoint(config["paths"]["checkpoint"])
    dataset = load_dataset(config["paths"]["dataset_root"])
    pred_dir = Path(config["paths"]["predictions"] or run_dir / "predictions")
    scene_filter = config["predict"]["scene"]

    outputs = []
    for entry in dataset.stacks(scene_filter):
        slices = entry.load_slices()
        start = time.perf_counter()
        values = forward(trained.model, slices[None])[0]
        runtime = time.perf_counter() - start

        target = pred_dir / entry.scene / f"{entry.name}.pfm"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_pfm(target, values)
        focus = entry.focus_disparities or trained.metadata.get("focus_disparities")
        max_disparity = max(focus) if focus else config["stack"]["d_near"]
        save_colorized(target.with_suffix(".png"), values, max_disparity, config["predict"]["colormap"])
        outputs.append({"scene": entry.scene, "stack": entry.name, "pfm": str(target), "runtime_s": round(runtime, 4)})
        logger.info(f"🖼️  {entry.scene}/{entry.name} → {target}")

    if not outputs:
        raise ParameterError(f"Aucune pile à prédire (scène : {scene_filter or 'toutes'})")
    manifest.reports = outputs
    manifest.outputs["predictions"] = str(pred_dir)
    manifest.timings["inference_s"] = round(sum(o["runtime_s"] for o in outputs), 4)


# =============================================================================
# PLOT
# =============================================================================

def _eval_manifests(config: Dict[str, Any]) -> List[Path]:
    explicit = [Path(p) for p in config["paths"]["manifests"]]
    if explicit:
        return explicit
    directory = Path(config["paths"]["output_dir"]) / "manifests"
    return sorted(directory.glob("eval_*.json"))


def run_plot(config: Dict[str, Any], manifest: RunManifest, run_dir: Path):
    curves = {}
    for path in _eval_manifests(config):
        data = load_manifest(path)
        if data.get("command") != "eval" or data.get("status") != "success":
            logger.warning(f"⚠️  Manifeste ignoré (pas un eval réussi) : {path}")
            continue
        label = f"{path.stem} ({data['aggregate'].get('baseline', '?')})"
        curves[label] = [tuple(point) for point in data["aggregate"].get("badpix_curve", [])]

    if curves:
        figure = plot_badpix_curves(badpix_frame(curves), run_dir / "badpix.png")
        manifest.outputs["badpix_plot"] = str(figure)
    else:
        logger.warning("⚠️  Aucun manifeste d'évaluation : pas de courbe BadPix")

    root = Path(config["paths"]["dataset_root"])
    if (root / "manifest.json").exists():
        dataset = load_dataset(root)
        summaries = [
            {"scene": entry.scene, "stack": entry.name, **disparity_summary(entry.load_disparity())}
            for entry in dataset.stacks() if entry.has_disparity
        ]
        if summaries:
            figure = plot_disparity_summaries(pd.DataFrame(summaries), run_dir / "disparity_summary.png")
            manifest.outputs["disparity_summary"] = str(figure)
            manifest.reports = summaries

        checkpoint = config["paths"]["checkpoint"]
        if config["plot"]["score_maps"] and checkpoint:
            trained = load_checkpoint(checkpoint)
            for entry in list(dataset.stacks())[:config["plot"]["max_score_stacks"]]:
                maps = slice_score_maps(trained.model, entry.load_slices())
                if entry.focus_disparities:
                    labels = [f"d={d:.3f}" for d in entry.focus_disparities]
                else:
                    labels = [f"({u},{v})" for u, v in entry.subaperture_indices or []] or [str(k) for k in range(len(maps))]
                figure = plot_score_maps(maps, labels, run_dir / f"score_maps_{entry.scene}_{entry.name}.png")
                manifest.outputs.setdefault("score_maps", []).append(str(figure))


def print_summary(manifest: RunManifest, manifest_path: Path):
    """Affiche le résumé du run"""
    logger.info("=" * 60)
    logger.info(f"📊 RÉSUMÉ {manifest.command.upper()} :")
    logger.info(f"   • Statut : {'✅' if manifest.status == 'success' else '❌'} {manifest.status}")
    if manifest.seed is not None:
        logger.info(f"   • Graine : {manifest.seed}")
    if manifest.dataset_hash:
        logger.info(f"   • Dataset : {manifest.dataset_hash[:12]}")
    for key in ("best_epoch", "final_loss", "scenes", "mse"):
        if key in manifest.aggregate:
            logger.info(f"   • {key} : {manifest.aggregate[key]}")
    headline = manifest.aggregate.get("headline_tau")
    if headline is not None:
        value = manifest.aggregate.get(f"badpix_{headline:g}")
        if value is not None:
            logger.info(f"   • BadPix({headline:g}) : {value:.2f} %")
    if manifest.error:
        logger.info(f"   • Erreur : {manifest.error}")
    logger.info(f"   • ⏱️  Durée : {manifest.timings.get('total_s', 0.0):.1f} s")
    logger.info(f"   • 📝 Manifeste : {manifest_path}")
    logger.info("=" * 60)


COMMANDS: Dict[str, Callable[[Dict[str, Any], RunManifest, Path], None]] = {
    "synth": run_synth,
    "refocus": run_refocus,
    "train": run_train,
    "eval": run_eval,
    "predict": run_predict,
    "plot": run_plot,
}
