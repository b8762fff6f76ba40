"""Constraint energy minimizing multiscale finite elements (CEM-GMsFEM) for
the dual-continuum flow model."""

__version__ = "0.1.0"

from .grid import GridHierarchy, build_hierarchy, partition_of_unity  # noqa: E402
from .media import MediaField, generate_channelized, load_media, save_media  # noqa: E402
from .assembly import Operators, assemble_operators  # noqa: E402
from .spectral import AuxiliarySpace, build_auxiliary_space  # noqa: E402
from .basis import MultiscaleBasis, build_multiscale_basis, oversampling_layers  # noqa: E402
from .solver import (SteadyProblem, TransientProblem, solve_fine_steady,  # noqa: E402
                     solve_fine_transient, solve_ms_steady, solve_ms_transient)
from .analysis import norm, relative_errors, transient_error_metric  # noqa: E402

__all__ = [
    "GridHierarchy", "build_hierarchy", "partition_of_unity", "MediaField",
    "generate_channelized", "load_media", "save_media", "Operators", "assemble_operators",
    "AuxiliarySpace", "build_auxiliary_space", "MultiscaleBasis", "build_multiscale_basis",
    "oversampling_layers", "SteadyProblem", "TransientProblem", "solve_fine_steady",
    "solve_fine_transient", "solve_ms_steady", "solve_ms_transient", "norm",
    "relative_errors", "transient_error_metric",
]
