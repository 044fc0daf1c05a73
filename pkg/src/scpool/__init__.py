"""Spatially coupled pooling and threshold decoding for quantitative group testing."""

from .decoder import DecodeResult, decode, decode_multilabel
from .measure import MeasurementSet, measure, single_pool_decode, single_pool_encode
from .params import ParameterError, Params, ProblemSpec, derive_parameters, make_params, validate_overrides
from .scheme import GroundTruth, PoolingScheme, build_scheme, item_degree_profile, sample_ground_truth

__all__ = [
    "DecodeResult",
    "GroundTruth",
    "MeasurementSet",
    "ParameterError",
    "Params",
    "PoolingScheme",
    "ProblemSpec",
    "build_scheme",
    "decode",
    "decode_multilabel",
    "derive_parameters",
    "item_degree_profile",
    "make_params",
    "measure",
    "sample_ground_truth",
    "single_pool_decode",
    "single_pool_encode",
    "validate_overrides",
]
