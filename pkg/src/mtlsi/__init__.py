"""Multi-task sparse regression with randomized selection and selective inference."""

__version__ = "0.1.0"

from .baselines import (BaselineResult, SplitPlan, make_split_plan, naive_inference,
                        single_task_si, split_fraction_for, split_then_infer)
from .core import (MultiTaskDataset, RandomizationSpec, SelectionOutcome, StackingPlan, Task,
                   TaskSelection, b_to_vgamma, build_stacking_plan, vgamma_to_b)
from .exceptions import (DataError, DegreesOfFreedomExhausted, DimensionMismatch, EmptySelection,
                         InconsistentSigns, InfeasibleStart, KktViolation, MissingFile, MtlsiError,
                         NonConvergence, NonNumericCell, NotPositiveDefinite, NumericalError,
                         RankDeficient, ShapeMismatch, SingularDelta)
from .inference import (InferenceMatrices, InferenceResult, Intervals, assemble_inference_matrices,
                        assemble_single_task_matrices, barrier, confidence_intervals, infer_mtl,
                        infer_single_task, jacobian_determinant, least_squares_and_ancillary,
                        plugin_sigma, selective_mle, solve_restricted_optimizer)
from .lasso import LassoConfig, kkt_decompose, sample_randomization, solve_weighted_lasso
from .report import project_to_original, report_cv, report_jaccard, significant_sets
from .selection import (MtlConfig, reformulated_objective, run_lasso_selection, run_mtl_selection,
                        update_penalty_weights)
from .simulation import (ExperimentResult, MetricsRecord, SimConfig, compute_metrics,
                         generate_coefficients, generate_design, run_experiment, snr, tune_lambda)
from .io import RunManifest, load_multitask_csv

__all__ = [name for name in dir() if not name.startswith("_")]
