"""Functional hidden dynamic geostatistical models (f-HDGM).

EM estimation with Kalman smoothing, spatial partitioning, truncated
information matrices, nearest-neighbour block kriging and validation.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .basis import BasisSpec, BasisTriple, basis_matrix
from .estimation import EmOptions, FittedModel, FitResult, ModelParams, em_fit, loglik, simulate
from .inference import VarCov, beta_chi2_test, beta_confidence_bands, observed_information, varcov_truncated
from .ingest import Coordinate, CsvSchema, ProfileDataset, ProfileRecord, parse_csv, split_validation, write_csv
from .partition import Partitioning, fit_kmeans
from .predict import KrigingGrid, KrigingOptions, krige, krige_block, validate

__all__ = [
    "BasisSpec", "BasisTriple", "basis_matrix",
    "EmOptions", "FittedModel", "FitResult", "ModelParams", "em_fit", "loglik", "simulate",
    "VarCov", "beta_chi2_test", "beta_confidence_bands", "observed_information", "varcov_truncated",
    "Coordinate", "CsvSchema", "ProfileDataset", "ProfileRecord", "parse_csv", "split_validation", "write_csv",
    "Partitioning", "fit_kmeans",
    "KrigingGrid", "KrigingOptions", "krige", "krige_block", "validate",
]
