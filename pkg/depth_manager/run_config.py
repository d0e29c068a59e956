"""
Configuration d'un run : document JSON fusionné sur les valeurs par défaut,
puis surcharges de la ligne de commande `--<chemin.pointé> <valeur>`.

La configuration fusionnée est validée avant tout travail ; chaque erreur
est rapportée avec son chemin pointé.
"""
import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .config import (
    DATASETS_DIR,
    DEFAULT_D_FAR,
    DEFAULT_D_NEAR,
    DEFAULT_FOCUS_MEASURE,
    DEFAULT_FOCUS_WINDOW,
    DEFAULT_STACK_SIZE,
    DEFAULT_TAUS,
    FOCUS_MEASURES,
    HEADLINE_TAU,
    MAX_MISSING_FRACTION,
    NETWORK_VARIANTS,
    PATCH_STRIDE,
    RUNS_DIR,
    SYNTH_DEPTH_RANGE,
    SYNTH_FRAME,
    TRAINING_DEFAULTS,
    WORKING_GRID_SIZE,
)
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

COMMANDS = ("synth", "refocus", "train", "eval", "predict", "plot")
SEEDED_COMMANDS = ("synth", "train")
BASELINES = ("network", "classic", "external")
STACK_KINDS = ("focal", "dflf")

ALIASES = {
    "seed": "seed",
    "scenes": "synth.scenes",
    "baseline": "eval.baseline",
    "checkpoint": "paths.checkpoint",
    "dataset": "paths.dataset_root",
    "output": "paths.output_dir",
    "epochs": "train.epochs",
    "variant": "model.variant",
}

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": None,
    "paths": {
        "dataset_root": str(DATASETS_DIR / "synthetic"),
        "output_dir": str(RUNS_DIR),
        "checkpoint": None,
        "lightfield": None,
        "predictions": None,
        "manifests": [],
    },
    "camera": {
        "grid": WORKING_GRID_SIZE,
    },
    "synth": {
        "scenes": 8,
        "min_planes": 1,
        "max_planes": 3,
        "depth_range": list(SYNTH_DEPTH_RANGE),
        "frame": list(SYNTH_FRAME),
        "dropout": 0.0,
        "stack_kind": "focal",
        "quantize_to_stack": False,
        "dflf_pattern": None,
        "export_lightfields": False,
        "overwrite": False,
    },
    "stack": {
        "d_near": DEFAULT_D_NEAR,
        "d_far": DEFAULT_D_FAR,
        "size": DEFAULT_STACK_SIZE,
    },
    "model": {
        "variant": "CC3",
        "width_multiplier": 1.0,
        "dropout_p": 0.5,
        "pretrained": None,
    },
    "train": dict(TRAINING_DEFAULTS, patch_size=None, patch_stride=PATCH_STRIDE, max_missing=MAX_MISSING_FRACTION),
    "eval": {
        "baseline": "network",
        "taus": list(DEFAULT_TAUS),
        "headline_tau": HEADLINE_TAU,
        "measure": DEFAULT_FOCUS_MEASURE,
        "window": DEFAULT_FOCUS_WINDOW,
        "depth_metrics": True,
    },
    "predict": {
        "scene": None,
        "colormap": "viridis",
    },
    "plot": {
        "score_maps": True,
        "max_score_stacks": 2,
    },
}


# =============================================================================
# CHARGEMENT ET SURCHARGES
# =============================================================================

def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_value(raw: str) -> Any:
    """JSON si possible (nombres, booléens, listes, null), sinon chaîne brute"""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def set_dotted(config: Dict[str, Any], path: str, value: Any):
    keys = path.split(".")
    node = config
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def get_dotted(config: Dict[str, Any], path: str, default: Any = None) -> Any:
    node = config
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


def parse_overrides(tokens: Sequence[str]) -> Dict[str, Any]:
    """['--train.epochs', '3', '--seed=7'] -> {'train.epochs': 3, 'seed': 7}"""
    overrides, errors = {}, []
    tokens = list(tokens)
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) <= 2:
            errors.append(f"argument inattendu : {token}")
            i += 1
            continue
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            raw = tokens[i + 1]
            i += 2
        else:
            errors.append(f"{key} : valeur manquante")
            i += 1
            continue
        overrides[ALIASES.get(key, key)] = parse_value(raw)
    if errors:
        raise ConfigError(errors)
    return overrides


def load_run_config(config_path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Défauts ← fichier JSON ← surcharges"""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError([f"config : fichier introuvable {path}"])
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError([f"config : JSON invalide dans {path} ({e})"]) from e
        if not isinstance(document, dict):
            raise ConfigError([f"config : un objet JSON est attendu dans {path}"])
        config = deep_merge(config, document)
    for key, value in (overrides or {}).items():
        set_dotted(config, key, value)
    return config


# =============================================================================
# VALIDATION
# =============================================================================

def _unknown_keys(config: Dict[str, Any], reference: Dict[str, Any], prefix: str = "") -> List[str]:
    errors = []
    for key, value in config.items():
        path = f"{prefix}{key}"
        if key not in reference:
            errors.append(f"{path} : clé inconnue")
        elif isinstance(reference[key], dict):
            if not isinstance(value, dict):
                errors.append(f"{path} : section attendue")
            else:
                errors.extend(_unknown_keys(value, reference[key], f"{path}."))
    return errors


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


class _Checker:
    def __init__(self, config: Dict[str, Any]):
        self.config = config
        self.errors: List[str] = []

    def get(self, path: str) -> Any:
        return get_dotted(self.config, path)

    def fail(self, path: str, message: str):
        self.errors.append(f"{path} : {message}")

    def integer(self, path: str, minimum: int):
        value = self.get(path)
        if not _is_int(value) or value < minimum:
            self.fail(path, f"entier ≥ {minimum} attendu (reçu {value!r})")

    def number(self, path: str, low: float, high: float, low_open: bool = False, high_open: bool = False):
        value = self.get(path)
        if not _is_number(value):
            self.fail(path, f"nombre attendu (reçu {value!r})")
            return
        if value < low or (low_open and value == low) or value > high or (high_open and value == high):
            left = "]" if low_open else "["
            right = "[" if high_open else "]"
            self.fail(path, f"doit être dans {left}{low}, {high}{right} (reçu {value})")

    def choice(self, path: str, choices: Sequence[str]):
        if self.get(path) not in choices:
            self.fail(path, f"valeur parmi {', '.join(choices)} attendue (reçu {self.get(path)!r})")

    def required_path(self, path: str):
        if not isinstance(self.get(path), str) or not self.get(path):
            self.fail(path, "chemin requis")


def validate_run_config(command: str, config: Dict[str, Any]) -> Dict[str, Any]:
    """Lève ConfigError avec toutes les erreurs trouvées ; retourne la configuration sinon"""
    if command not in COMMANDS:
        raise ConfigError([f"commande : {command!r} inconnue (attendu : {', '.join(COMMANDS)})"])

    check = _Checker(config)
    check.errors.extend(_unknown_keys(config, DEFAULT_CONFIG))
    if check.errors:
        raise ConfigError(check.errors)

    seed = config.get("seed")
    if command in SEEDED_COMMANDS and seed is None:
        check.fail("seed", f"obligatoire pour la commande {command}")
    elif seed is not None and (not _is_int(seed) or seed < 0):
        check.fail("seed", f"entier ≥ 0 attendu (reçu {seed!r})")

    check.required_path("paths.output_dir")
    check.integer("camera.grid", 1)

    check.integer("stack.size", 1)
    check.number("stack.d_far", 0.0, float("inf"))
    check.number("stack.d_near", 0.0, float("inf"))
    d_near, d_far, size = check.get("stack.d_near"), check.get("stack.d_far"), check.get("stack.size")
    if _is_number(d_near) and _is_number(d_far) and _is_int(size):
        if d_near < d_far:
            check.fail("stack.d_near", f"doit être ≥ stack.d_far ({d_near} < {d_far})")
        elif size >= 2 and d_near == d_far:
            check.fail("stack.d_near", "doit être > stack.d_far quand stack.size ≥ 2")
        elif size == 1 and d_near != d_far:
            check.fail("stack.d_near", "doit être égal à stack.d_far quand stack.size = 1")

    if command == "synth":
        _validate_synth(check)
    if command == "refocus":
        check.required_path("paths.lightfield")
    if command in ("synth", "train", "eval", "predict"):
        check.required_path("paths.dataset_root")
    if command == "train":
        _validate_model(check)
        _validate_train(check)
    if command == "predict" or (command == "eval" and check.get("eval.baseline") == "network"):
        check.required_path("paths.checkpoint")
    if command == "eval":
        _validate_eval(check)
    if command == "plot" and not isinstance(check.get("paths.manifests"), list):
        check.fail("paths.manifests", "liste de chemins attendue")

    if check.errors:
        raise ConfigError(check.errors)
    return config


def _validate_synth(check: _Checker):
    check.integer("synth.scenes", 1)
    check.integer("synth.min_planes", 1)
    check.integer("synth.max_planes", 1)
    lo, hi = check.get("synth.min_planes"), check.get("synth.max_planes")
    if _is_int(lo) and _is_int(hi) and lo > hi:
        check.fail("synth.max_planes", f"doit être ≥ synth.min_planes ({hi} < {lo})")
    depth_range = check.get("synth.depth_range")
    if not (isinstance(depth_range, list) and len(depth_range) == 2 and all(_is_number(z) for z in depth_range)
            and 0 < depth_range[0] < depth_range[1]):
        check.fail("synth.depth_range", f"[min, max] avec 0 < min < max attendu (reçu {depth_range!r})")
    frame = check.get("synth.frame")
    if not (isinstance(frame, list) and len(frame) == 2 and all(_is_int(x) and x >= 1 for x in frame)):
        check.fail("synth.frame", f"[hauteur, largeur] entiers attendus (reçu {frame!r})")
    check.number("synth.dropout", 0.0, 1.0, high_open=True)
    check.choice("synth.stack_kind", STACK_KINDS)
    pattern = check.get("synth.dflf_pattern")
    if pattern is not None and not (isinstance(pattern, list) and all(
            isinstance(p, list) and len(p) == 2 and all(_is_int(x) for x in p) for p in pattern)):
        check.fail("synth.dflf_pattern", "liste de paires [u, v] attendue")


def _validate_model(check: _Checker):
    check.choice("model.variant", NETWORK_VARIANTS)
    check.number("model.width_multiplier", 1.0 / 64, 1.0)
    check.number("model.dropout_p", 0.0, 1.0, high_open=True)


def _validate_train(check: _Checker):
    for key in ("learning_rate", "momentum", "lr_decay"):
        check.number(f"train.{key}", 0.0, float("inf"), low_open=True)
    for key in ("batch_size", "decay_epochs", "epochs", "patch_stride"):
        check.integer(f"train.{key}", 1)
    check.number("train.weight_decay", 0.0, float("inf"))
    check.number("train.validation_fraction", 0.0, 1.0, high_open=True)
    check.number("train.max_missing", 0.0, 1.0)
    if check.get("train.patch_size") is not None:
        check.integer("train.patch_size", 32)


def _validate_eval(check: _Checker):
    check.choice("eval.baseline", BASELINES)
    if check.get("eval.baseline") == "external":
        check.required_path("paths.predictions")
    taus = check.get("eval.taus")
    if not (isinstance(taus, list) and taus and all(_is_number(t) and t > 0 for t in taus)
            and all(b > a for a, b in zip(taus, taus[1:]))):
        check.fail("eval.taus", "liste strictement croissante de τ > 0 attendue")
    check.number("eval.headline_tau", 0.0, float("inf"), low_open=True)
    check.choice("eval.measure", FOCUS_MEASURES)
    window = check.get("eval.window")
    if not _is_int(window) or window < 1 or window % 2 == 0:
        check.fail("eval.window", f"entier impair ≥ 1 attendu (reçu {window!r})")
