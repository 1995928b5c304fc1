"""Graph-conditioned transformer for seeded outfit generation."""

from .catalog import Catalog, Garment, Outfit, load_catalog, save_catalog
from .estimator import OutfitGenerator
from .graph import build_irg, build_org, graph_stats, induce_irg, remove_outfit_edges
from .model import STOP, TGNNConfig, generate_outfit, init_params
from .partition import partition_org
from .synth import SynthConfig, generate_synthetic_catalog, oracle_compatible
from .training import TrainerConfig, fit

__version__ = "0.1.0"

__all__ = [
    "Catalog", "Garment", "Outfit", "load_catalog", "save_catalog",
    "build_irg", "build_org", "graph_stats", "induce_irg", "remove_outfit_edges",
    "STOP", "TGNNConfig", "generate_outfit", "init_params",
    "partition_org",
    "SynthConfig", "generate_synthetic_catalog", "oracle_compatible",
    "TrainerConfig", "fit",
    "OutfitGenerator",
]
