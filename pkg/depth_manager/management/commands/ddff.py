"""
python manage.py ddff <synth|refocus|train|eval|predict|plot> [--config run.json] [--<chemin.pointé> valeur ...]

Codes de sortie : 0 succès, 1 échec d'exécution (consigné dans le manifeste),
2 configuration invalide.
"""
import argparse
import logging
from typing import List, Optional, Tuple

from django.core.management.base import BaseCommand, CommandError

from depth_manager.exceptions import ConfigError
from depth_manager.pipeline import print_summary, run
from depth_manager.run_config import COMMANDS, load_run_config, parse_overrides

logger = logging.getLogger("depth_manager")


def split_config_path(tokens: List[str]) -> Tuple[Optional[str], List[str]]:
    """Extrait `--config <chemin>` (ou `--config=<chemin>`) des arguments restants"""
    config_path, rest = None, []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if token == "--config":
            if i + 1 >= len(tokens):
                raise ConfigError(["config : chemin manquant"])
            config_path = tokens[i + 1]
            i += 2
            continue
        if token.startswith("--config="):
            config_path = token.split("=", 1)[1]
        else:
            rest.append(token)
        i += 1
    return config_path, rest


class Command(BaseCommand):
    help = "Pipeline depth-from-focus : synthèse, refocalisation, entraînement, évaluation, prédiction, figures"

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.formatter_class = argparse.RawDescriptionHelpFormatter
        parser.epilog = """
Exemples:
  # Dataset synthétique déterministe
  python manage.py ddff synth --seed 7 --scenes 16

  # Entraînement CC3 sur ce dataset
  python manage.py ddff train --config run.json --seed 7 --train.epochs 20

  # Évaluation du DFF classique
  python manage.py ddff eval --baseline classic --eval.measure tenengrad
        """
        return parser

    def add_arguments(self, parser):
        parser.add_argument("action", choices=COMMANDS, help="Commande du pipeline")
        parser.add_argument(
            "options",
            nargs=argparse.REMAINDER,
            help="--config <fichier.json> puis surcharges --<chemin.pointé> <valeur>",
        )

    def handle(self, *args, **options):
        command = options["action"]
        try:
            config_path, tokens = split_config_path(list(options["options"] or []))
            config = load_run_config(config_path, parse_overrides(tokens))
            status, manifest, manifest_path = run(command, config)
        except ConfigError as e:
            for error in e.errors:
                logger.error(f"❌ {error}")
            raise CommandError(str(e), returncode=2)

        print_summary(manifest, manifest_path)
        if status != 0:
            raise CommandError(f"Échec de {command} : {manifest.error}", returncode=status)
