#!/usr/bin/env python3
"""
Configuration centralisée pour le pipeline depth-from-focus
Constantes de la caméra, du refocus, du réseau et des dossiers de travail
"""

import os
from pathlib import Path

# Chemin de base du projet
# config.py est dans depth_manager/, donc on remonte de 2 niveaux pour arriver à la racine du projet
BASE_DIR = Path(__file__).resolve().parent.parent
MEDIA_ROOT = Path(os.environ.get('DDFF_MEDIA_ROOT', BASE_DIR / 'media'))

# Dossiers (créés à la demande par le pipeline, pas à l'import)
DATASETS_DIR = MEDIA_ROOT / "datasets"
RUNS_DIR = MEDIA_ROOT / "runs"
EXPORTS_DIR = MEDIA_ROOT / "exports"

# Version du code, recopiée dans chaque manifeste de run
CODE_VERSION = "1.0.0"

# =============================================================================
# CAMÉRA PLÉNOPTIQUE (Lytro ILLUM, paramètres estimés)
# =============================================================================

# Lentille principale, en pixels
MAIN_LENS = {
    "F_x": 7299.7,
    "F_y": 7317.0,
    "C_x": 3991.6,
    "C_y": 2629.6,
    "r_m": 7.0,
}

# Coefficients de distorsion : métadonnées opaques, jamais appliqués
DISTORTION = {
    "K_1": -2.768,
    "K_2": 1982.0,
    "k_1": 0.388,
    "k_2": -0.0361,
}

# Distance entre deux sous-ouvertures adjacentes (m/pixel), valeur publiée
BASELINE_M_PER_PX = 27e-5

# Focale des microlentilles (pixels) et centre optique
FOCAL_LENGTH_PX = 521.4
PRINCIPAL_POINT = (285.11, 187.83)

# Grille brute générée par la toolbox et grille de travail
RAW_GRID_SIZE = 13
WORKING_GRID_SIZE = 9

# =============================================================================
# REFOCUS ET PILES FOCALES
# =============================================================================

# Intervalle de disparité du plus proche au plus lointain (≈ [0.5, 7] m)
DEFAULT_D_NEAR = 0.28
DEFAULT_D_FAR = 0.02
DEFAULT_STACK_SIZE = 10

# =============================================================================
# SCÈNES SYNTHÉTIQUES
# =============================================================================

SYNTH_FRAME = (96, 96)
SYNTH_DEPTH_RANGE = (0.5, 7.0)
# Fréquence de coupure des textures procédurales (cycles/pixel, < Nyquist)
TEXTURE_CUTOFF = 0.45
# Part minimale du cadre visible pour chaque plan
MIN_VISIBLE_FRACTION = 0.05
MAX_SCENE_RETRIES = 200

# =============================================================================
# DFF CLASSIQUE
# =============================================================================

FOCUS_MEASURES = ("modified-laplacian", "laplacian-variance", "tenengrad")
DEFAULT_FOCUS_MEASURE = "modified-laplacian"
DEFAULT_FOCUS_WINDOW = 9
SHARPNESS_FLOOR = 1e-6

# =============================================================================
# RÉSEAU ET ENTRAÎNEMENT
# =============================================================================

NETWORK_VARIANTS = ("UNPOOL", "BL", "UPCONV", "CC1", "CC2", "CC3")
DFLF_PATTERN_LENGTH = 11

TRAINING_DEFAULTS = {
    "learning_rate": 1e-3,
    "momentum": 0.9,
    "batch_size": 2,
    "lr_decay": 0.9,
    "decay_epochs": 4,
    "weight_decay": 5e-4,
    "epochs": 50,
    "validation_fraction": 0.2,
}

PATCH_SIZE = 224
PATCH_STRIDE = 56
MAX_MISSING_FRACTION = 0.20

# Les 5 poolings imposent des dimensions multiples de 32
SPATIAL_MULTIPLE = 32

# =============================================================================
# ÉVALUATION
# =============================================================================

HEADLINE_TAU = 0.07
DEFAULT_TAUS = (0.01, 0.02, 0.03, 0.05, 0.07, 0.1, 0.15, 0.2)
BUMPINESS_CLAMP = 0.05
ACCURACY_BASE = 1.25

# =============================================================================
# FORMATS ET SCHÉMAS
# =============================================================================

DATASET_SCHEMA_VERSION = 1
CHECKPOINT_SCHEMA_VERSION = 1
LIGHTFIELD_SCHEMA_VERSION = 1

# =============================================================================
# CONFIGURATION DU LOGGING
# =============================================================================

# Format des logs fichier (un fichier par run)
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
