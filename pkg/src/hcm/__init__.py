"""Hierarchical causal models: graphs, identification, simulation and estimation."""

from .dsl import InterventionKind, OutcomeForm, QuerySpec, load_hcm, parse_hcm, serialize_hcm
from .graph import Admg, FlatGraph, HierGraph, Level, Variable, latent_projection, validate_hcm
from .identify import (
    IdFailure,
    Identified,
    NotIdentifiedByMethod,
    id_algorithm,
    identify_hcm,
    sufficient_id_check,
)
from .transform import augment, collapse, map_intervention, marginalize_aug

__version__ = "0.1.0"

__all__ = [
    "Admg",
    "FlatGraph",
    "HierGraph",
    "IdFailure",
    "Identified",
    "InterventionKind",
    "Level",
    "NotIdentifiedByMethod",
    "OutcomeForm",
    "QuerySpec",
    "Variable",
    "augment",
    "collapse",
    "id_algorithm",
    "identify_hcm",
    "latent_projection",
    "load_hcm",
    "map_intervention",
    "marginalize_aug",
    "parse_hcm",
    "serialize_hcm",
    "sufficient_id_check",
    "validate_hcm",
]
