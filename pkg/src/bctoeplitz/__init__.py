"""Boundary-control Gram systems with block-Toeplitz structure."""

from .block_toeplitz import (
    BlockColumn,
    BlockToeplitzSPD,
    dense_inverse,
    dense_oracle_solve,
    expand_dense,
    invert_from_y,
    levinson_y,
    random_spd_block_toeplitz,
    solve_row,
    validate_spd,
)
from .control_ops import apply_CT, ct_form_oracle, odd_extend, odd_part, restrict, time_integrate
from .controls import Control, ExtendedControl
from .errors import *  # noqa: F401,F403
from .forward_solver import SimGrid, VelocityField, apply_M2T, solve_forward
from .gram_system import assemble_gram, assemble_rhs, build_lattice, toeplitz_deviation
from .pipeline import ExperimentConfig, bench, load_config, run_bcp, verify

__version__ = "0.1.0"
