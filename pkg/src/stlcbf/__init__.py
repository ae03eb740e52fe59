"""Nested temporal-logic tasks compiled to explicit parameterized barrier
functions, enforced on disturbed control-affine systems, and verified by an
independent offline monitor."""

from .formulas import (
    Affine,
    Always,
    And,
    Ball,
    Eventually,
    Formula,
    Interval,
    Negated,
    NotPred,
    Pred,
    PredicateDef,
    SmoothAnd,
    TrueF,
    Until,
    eval_predicate,
    format_formula,
    grad_predicate,
    parse_formula,
    smooth_min,
)
from .transform import TransformConfig, check_desired_form, to_desired_form
from .tree import TimedTree, assign_times, build_tree
from .barrier import CbfSpec, eval_cbf, synthesize
from .monitor import SampledSignal, Verdict, eval_boolean, eval_robustness
from .controller import ControllerParams, ControllerState
from .simulate import TrajectoryLog, run_scenario
from .scenario import ScenarioConfig, load_scenario

__version__ = "0.1.0"
