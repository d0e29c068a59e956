#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Export des manifestes de runs vers Excel

Une ligne par manifeste (configuration et agrégats aplatis), plus une feuille
détaillée par pile pour les runs d'évaluation.

Usage:
  python depth_manager/scripts/export_runs_to_excel.py
  python depth_manager/scripts/export_runs_to_excel.py --runs media/runs --command eval
"""

import sys
import json
import argparse
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

# Ajouter la racine du projet au path pour importer depth_manager
sys.path.insert(0, str(Path(__file__).resolve().parent.parent.parent))
from depth_manager.config import EXPORTS_DIR, RUNS_DIR  # noqa: E402


def setup_logging() -> logging.Logger:
    """Configure le système de logging"""
    EXPORTS_DIR.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(EXPORTS_DIR / 'export_runs_to_excel.log', encoding='utf-8'),
            logging.StreamHandler()
        ]
    )
    return logging.getLogger(__name__)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse les arguments de la ligne de commande"""
    parser = argparse.ArgumentParser(
        description='Export des manifestes de runs vers Excel',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exemples:
  # Tous les runs du dossier par défaut
  python depth_manager/scripts/export_runs_to_excel.py

  # Uniquement les évaluations d'un autre dossier
  python depth_manager/scripts/export_runs_to_excel.py --runs /data/runs --command eval
        """
    )
    parser.add_argument('--runs', '-r', default=str(RUNS_DIR),
                        help="Dossier de sortie des runs (contient manifests/)")
    parser.add_argument('--command', '-c', default=None,
                        help="Ne garder que les runs de cette commande (synth, train, eval, ...)")
    parser.add_argument('--output', '-o', default=None,
                        help="Fichier .xlsx de sortie (défaut : media/exports/runs_export_<horodatage>.xlsx)")
    return parser.parse_args(argv)


def flatten(value: Any, parent_key: str = '', sep: str = '.') -> Dict[str, Any]:
    """Aplatit récursivement les dictionnaires; les listes sont sérialisées en JSON."""
    items: Dict[str, Any] = {}
    if isinstance(value, dict):
        for k, v in value.items():
            new_key = f"{parent_key}{sep}{k}" if parent_key else k
            items.update(flatten(v, new_key, sep=sep))
    elif isinstance(value, list):
        items[parent_key] = json.dumps(value, ensure_ascii=False)
    else:
        items[parent_key] = value
    return items


def collect_manifests(runs_dir: Path, command: Optional[str], logger: logging.Logger) -> List[Dict[str, Any]]:
    """Lit les manifestes JSON ; les fichiers illisibles sont signalés et ignorés"""
    manifests = []
    for path in sorted((runs_dir / 'manifests').glob('*.json')):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"⚠️  Manifeste illisible ignoré : {path} ({e})")
            continue
        if command and data.get('command') != command:
            continue
        data['manifest'] = path.name
        manifests.append(data)
    return manifests


def manifests_to_frames(manifests: List[Dict[str, Any]]) -> Dict[str, pd.DataFrame]:
    """Feuille 'runs' (une ligne par manifeste) et feuille 'piles' (rapports par pile)"""
    runs, stacks = [], []
    for data in manifests:
        row = {
            'manifest': data['manifest'],
            'command': data.get('command'),
            'status': data.get('status'),
            'seed': data.get('seed'),
            'started_at': data.get('started_at'),
            'dataset_hash': data.get('dataset_hash'),
            'error': data.get('error'),
        }
        row.update(flatten(data.get('aggregate', {}), 'aggregate'))
        row.update(flatten(data.get('timings', {}), 'timings'))
        row.update(flatten(data.get('config', {}), 'config'))
        runs.append(row)
        for report in data.get('reports', []):
            stacks.append({'manifest': data['manifest'], 'command': data.get('command'), **flatten(report)})

    frame = pd.DataFrame(runs)
    if not frame.empty:
        head = ['manifest', 'command', 'status']
        frame = frame.reindex(columns=head + sorted(c for c in frame.columns if c not in head))
    return {'runs': frame, 'piles': pd.DataFrame(stacks)}


def export_runs(runs_dir: Path, command: Optional[str], output: Optional[Path], logger: logging.Logger) -> Path:
    """Écrit le classeur Excel et retourne son chemin"""
    logger.info(f"📊 Export des manifestes de {runs_dir}...")
    manifests = collect_manifests(runs_dir, command, logger)
    logger.info(f"✅ {len(manifests)} manifestes trouvés")
    frames = manifests_to_frames(manifests)

    if output is None:
        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        output = EXPORTS_DIR / f"runs_export_{timestamp}.xlsx"
    output.parent.mkdir(parents=True, exist_ok=True)
    with pd.ExcelWriter(output, engine='openpyxl') as writer:
        for sheet, frame in frames.items():
            frame.to_excel(writer, sheet_name=sheet, index=False)
    logger.info(f"✅ Export Excel créé: {output}")
    logger.info(f"📈 {len(frames['runs'])} runs, {len(frames['piles'])} lignes par pile")
    return output


def main() -> None:
    """Fonction principale"""
    logger = setup_logging()
    args = parse_args()
    try:
        export_runs(Path(args.runs), args.command, Path(args.output) if args.output else None, logger)
    except Exception as e:
        logger.error(f"❌ Erreur lors de l'export : {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
