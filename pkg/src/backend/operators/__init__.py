"""Measurement map, time reversal, connecting operator and coarse bases"""
from .basis import CoarseBasis
from .connecting_operator import (
    ConnectingOperator, CorrelationField, apply_J, apply_K, assemble_gram, blago_inner,
    correlation_solve, inner_product_at_times,
)
from .source_to_solution import (
    DenseOperator, MapMode, OperatorNormEstimate, SourceToSolutionMap, apply_lambda,
    apply_lambda_adjoint, apply_R, assemble_dense, op_norm_diff, translate,
)

__all__ = [
    "CoarseBasis", "ConnectingOperator", "CorrelationField", "apply_J", "apply_K",
    "assemble_gram", "blago_inner", "correlation_solve", "inner_product_at_times",
    "DenseOperator", "MapMode", "OperatorNormEstimate", "SourceToSolutionMap", "apply_lambda",
    "apply_lambda_adjoint", "apply_R", "assemble_dense", "op_norm_diff", "translate",
]
