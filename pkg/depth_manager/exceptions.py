"""
Erreurs métier du pipeline.

Les classes dérivent des exceptions natives pour que le code appelant qui
attrape déjà ValueError / OSError continue de fonctionner.
"""
from typing import List, Optional


class DomainError(ValueError):
    """Valeur hors du domaine de définition (profondeur ≤ 0, entrée non finie...)"""


class ParameterError(ValueError):
    """Paramètre d'opération invalide"""


class ShapeError(ValueError):
    """Dimensions de tableau / tenseur incompatibles"""


class DegenerateError(ArithmeticError):
    """Problème dégénéré (ex. somme des carrés nulle)"""


class SceneGenerationError(RuntimeError):
    """Génération de scène aléatoire impossible après les essais autorisés"""


class TrainingDivergedError(RuntimeError):
    """Perte ou paramètres non finis pendant l'entraînement"""


class DatasetLoadError(OSError):
    """Fichier manquant, corrompu ou schéma incompatible"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class ConfigError(ValueError):
    """Configuration de run invalide ; porte la liste des erreurs par champ"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("Configuration invalide :\n" + "\n".join(f"  - {e}" for e in self.errors))
