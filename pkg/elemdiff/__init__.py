"""Symbolic per-element derivatives of element-wise defined tensor functions."""
from .derivation import derive, derive_jacobian, sum_liberate
from .evaluator import brute_force_adjoint, eval_derivative, eval_element, eval_spec, finite_diff_jacobian, verify
from .exceptions import ElemDiffError
from .models import DerivSpec, ElemFuncSpec, VerifyReport, build_spec
from .syntax import format_deriv_spec, format_expr, format_spec, parse, parse_file, to_text

__all__ = [
    "DerivSpec",
    "ElemDiffError",
    "ElemFuncSpec",
    "VerifyReport",
    "brute_force_adjoint",
    "build_spec",
    "derive",
    "derive_jacobian",
    "eval_derivative",
    "eval_element",
    "eval_spec",
    "finite_diff_jacobian",
    "format_deriv_spec",
    "format_expr",
    "format_spec",
    "parse",
    "parse_file",
    "sum_liberate",
    "verify",
    "to_text",
]
