"""Multiply robust double score matching estimators of average and quantile
treatment effects, with weighted-bootstrap inference."""

from .data import Dataset, SchemaConfig, BootstrapConfig, ModelEntry, load_dataset, load_config
from .errors import (DSMError, ConfigError, DataError, SchemaError, ParseError,
                     DomainError, NumericalError)
from .scores import CandidateModels, CandidateModelSpec, ScoreSet, compute_scores
from .matching import MatchMap, match_group, match_both
from .means import dsm_ate, dsm_att, comparator_naive, comparator_ipw, comparator_aipw
from .quantiles import dsm_qte, dsm_qtt
from .bootstrap import BootstrapResult, bootstrap_variance, draw_weights

__version__ = "0.1.0"

__all__ = [
    "Dataset", "SchemaConfig", "BootstrapConfig", "ModelEntry", "load_dataset", "load_config",
    "DSMError", "ConfigError", "DataError", "SchemaError", "ParseError", "DomainError",
    "NumericalError", "CandidateModels", "CandidateModelSpec", "ScoreSet", "compute_scores",
    "MatchMap", "match_group", "match_both", "dsm_ate", "dsm_att", "comparator_naive",
    "comparator_ipw", "comparator_aipw", "dsm_qte", "dsm_qtt", "BootstrapResult",
    "bootstrap_variance", "draw_weights",
]
