"""Spectral weak-residual neural solver on overlapping box covers."""

from .adaptivity import IndicatorTable, RefinementConfig, indicators, mark, refine_loop
from .basis import AxisVariant, ModeIndex, eval_axis, eval_mode, rectangular_modes
from .geometry import BoxDomain, Cover, FaceBC, axis_box, local_coords, make_hat_cover, subdivide
from .model import CutoffSpec, Mlp, forward_with_grad, hidden_features
from .optimizer import (
    AdamState,
    EvalGroup,
    LsSystem,
    RunSetup,
    TrainSchedule,
    adam_step,
    assemble_ls,
    loss_and_system,
    loss_gradient,
    ls_solve,
    train,
)
from .problems import CASES, ErrorMetric, ManufacturedSolution, relative_h1_error
from .quadrature import GradingSpec, QuadratureRule, build_rule, restrict, validation_counterpart
from .residual import LossBreakdown, PairingVector, TestBlock, loss, pairings

__version__ = "0.1.0"
