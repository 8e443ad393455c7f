"""Lazy symbolic factors with swappable evaluation rules.

Terms name their free variables and carry types instead of positional
shapes.  Interpretations decide what happens when a term is built: Lazy
records structure, Exact folds it into a normal form of delta, tensor,
and Gaussian parts, Optimize plans contraction orders first, and the
approximate interpretations trade exactness for tractability.
"""

from .approx import (
    MomentMatching,
    MonteCarlo,
    RngState,
    mc_sample_discrete,
    mc_sample_gaussian,
    moment_match,
)
from .delta import DeltaAtom, delta_product_trigger, delta_sum_eliminate
from .domains import Bounded, RealArray, TypeContext
from .errors import (
    BoundsError,
    ContextMismatch,
    FuelExhausted,
    FunsorError,
    FunsorTypeError,
    IndexOutOfRange,
    InvalidMatching,
    MissingAssignment,
    NameAbsent,
    NotAffine,
    RankDeficient,
    RealVarNotSupported,
    StackUnderflow,
    TypeConflict,
)
from .gaussian import (
    GaussianAtom,
    gaussian_eval,
    gaussian_fuse,
    gaussian_log_normalizer,
    gaussian_marginalize,
    gaussian_substitute,
)
from .interp import (
    EXACT,
    LAZY,
    Interpretation,
    NormalForm,
    Rule,
    affine_decompose,
    affine_substitute,
    current_interpretation,
    interpret,
    interpretation,
    lift,
    normalize,
    pop_interpretation,
    push_interpretation,
    reduce_term,
    reinterpret,
    subst_term,
    to_term,
    var,
)
from .markov import (
    markov_parallel,
    markov_sequential,
    scan_mode,
    validate_step,
)
from .models import (
    GmmSpec,
    HmmSpec,
    KalmanSpec,
    SldsSpec,
    build_gmm,
    build_hmm,
    build_kalman,
    build_slds_marginal,
)
from .optimize import (
    OPTIMIZE,
    ContractionPlan,
    execute_plan,
    greedy_plan,
    push_singleton_sums,
)
from .tensor import TensorAtom, align, tensor_reduce
from .terms import (
    Apply,
    Cat,
    DeltaLeaf,
    GaussianLeaf,
    MarkovProd,
    Reduce,
    Slice,
    Subst,
    TensorLeaf,
    Term,
    Variable,
    free_vars,
    infer_type,
    pretty,
    substitute,
)

__version__ = "0.1.0"

__all__ = [
    "Apply",
    "Bounded",
    "BoundsError",
    "Cat",
    "ContextMismatch",
    "ContractionPlan",
    "DeltaAtom",
    "DeltaLeaf",
    "EXACT",
    "FuelExhausted",
    "FunsorError",
    "FunsorTypeError",
    "GaussianAtom",
    "GaussianLeaf",
    "GmmSpec",
    "HmmSpec",
    "IndexOutOfRange",
    "Interpretation",
    "InvalidMatching",
    "KalmanSpec",
    "LAZY",
    "MarkovProd",
    "MissingAssignment",
    "MomentMatching",
    "MonteCarlo",
    "NameAbsent",
    "NormalForm",
    "NotAffine",
    "OPTIMIZE",
    "RankDeficient",
    "RealArray",
    "RealVarNotSupported",
    "Reduce",
    "RngState",
    "Rule",
    "SldsSpec",
    "Slice",
    "StackUnderflow",
    "Subst",
    "TensorAtom",
    "TensorLeaf",
    "Term",
    "TypeConflict",
    "TypeContext",
    "Variable",
    "affine_decompose",
    "affine_substitute",
    "align",
    "build_gmm",
    "build_hmm",
    "build_kalman",
    "build_slds_marginal",
    "current_interpretation",
    "delta_product_trigger",
    "delta_sum_eliminate",
    "execute_plan",
    "free_vars",
    "gaussian_eval",
    "gaussian_fuse",
    "gaussian_log_normalizer",
    "gaussian_marginalize",
    "gaussian_substitute",
    "greedy_plan",
    "infer_type",
    "interpret",
    "interpretation",
    "lift",
    "markov_parallel",
    "markov_sequential",
    "mc_sample_discrete",
    "mc_sample_gaussian",
    "moment_match",
    "normalize",
    "pop_interpretation",
    "pretty",
    "push_interpretation",
    "push_singleton_sums",
    "reduce_term",
    "reinterpret",
    "scan_mode",
    "subst_term",
    "substitute",
    "tensor_reduce",
    "to_term",
    "validate_step",
    "var",
]
