"""Shared-step multistage disease model with cohort simulation and detection tools."""

from .detect import (
    DetectionReport,
    HiddenStepEstimate,
    Verdict,
    curve_fits,
    recover_hidden_step,
    slope_change_test,
)
from .exponential import ExpSharedModel
from .laws import LawKind, StepLaw
from .model import (
    IndependentModel,
    SharedStepModel,
    coeff_c,
    coeff_c_joint,
    coeff_kappa,
    conditional_cdf,
    disease_cdf,
    expected_n,
    first_step_ratio,
    generating_function,
    joint_cdf,
    load_model,
    model_from_dict,
    moment_report,
    prob_zero,
    variance_n,
)
from .numeric import QuadratureSpec
from .simulate import (
    CohortSpec,
    EventTable,
    conditional_view,
    disease_free_view,
    read_event_table,
    simulate,
)
from .survival import CumHazardCurve, FitResult, fit_power_law_mle, nelson_aalen

__version__ = "0.1.0"
