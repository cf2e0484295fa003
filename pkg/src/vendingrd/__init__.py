"""Rate-distortion-cost computations for two-way source coding with an
action-controlled side-information channel.

The package splits into probability plumbing (``probability``), problem
instances and their JSON form (``model``), closed-form curves and reference
policies for the binary-erasure example (``closed_form``), single-letter
evaluation and rate minimization (``region``), and block-coding simulation
(``sim``).  The ``cli`` module wraps all of it for the command line.
"""
from .closed_form import (
    CASE_TAGS,
    ExampleCase,
    appendixB_policy,
    case1_r1,
    case2_r1,
    case2_ts_r1,
    case3_r1,
    example_rate,
    hb_abstention_cost,
    hb_case2_r1,
    hb_rate_formula,
)
from .model import (
    ErasureParams,
    InfeasibleError,
    ProblemSpec,
    SpecFormatError,
    binary_erasure_spec,
    load_spec,
    save_spec,
    spec_from_document,
    spec_to_document,
    with_node3_erasure_metric,
)
from .probability import (
    Alphabet,
    JointPmf,
    Kernel,
    Pmf,
    TableError,
    binary_entropy,
    check_markov,
    condition,
    conditional_mutual_information,
    entropy,
    expectation,
    marginalize,
    product_joint,
)
from .region import (
    MinimizeResult,
    OperatingPoint,
    OptimizerConfig,
    Policy,
    SweepEntry,
    Targets,
    assemble_joint,
    aux_alphabet,
    bayes_decoder,
    default_cardinalities,
    evaluate_point,
    load_policy,
    markov_chains,
    minimize_r1,
    policy_from_document,
    policy_to_document,
    random_policy,
    save_policy,
    sweep_gamma,
)
from .sim import SCHEMES, SimConfig, SimResult, convergence_table, enumerative_bits, run_scheme

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "CASE_TAGS",
    "ErasureParams",
    "ExampleCase",
    "InfeasibleError",
    "JointPmf",
    "Kernel",
    "MinimizeResult",
    "OperatingPoint",
    "OptimizerConfig",
    "Pmf",
    "Policy",
    "ProblemSpec",
    "SCHEMES",
    "SimConfig",
    "SimResult",
    "SpecFormatError",
    "SweepEntry",
    "TableError",
    "Targets",
    "appendixB_policy",
    "assemble_joint",
    "aux_alphabet",
    "bayes_decoder",
    "binary_entropy",
    "binary_erasure_spec",
    "case1_r1",
    "case2_r1",
    "case2_ts_r1",
    "case3_r1",
    "check_markov",
    "condition",
    "conditional_mutual_information",
    "convergence_table",
    "default_cardinalities",
    "entropy",
    "enumerative_bits",
    "evaluate_point",
    "example_rate",
    "expectation",
    "hb_abstention_cost",
    "hb_case2_r1",
    "hb_rate_formula",
    "load_policy",
    "load_spec",
    "marginalize",
    "markov_chains",
    "minimize_r1",
    "policy_from_document",
    "policy_to_document",
    "product_joint",
    "random_policy",
    "run_scheme",
    "save_policy",
    "save_spec",
    "spec_from_document",
    "spec_to_document",
    "sweep_gamma",
    "with_node3_erasure_metric",
]
