"""Deterministic diffusion of expanding maps on the line, triangle and hexagon tilings.

Exact transfer kernels, exact density evolution, spectral diffusion
coefficients and a reproducible Monte Carlo ensemble simulator.
"""

from .dynamics import EnsembleConfig, sample_uniform_in_cell, simulate_ensemble, step_1d, step_2d
from .errors import (AdmissibilityError, DomainError, NumericalError, TileDiffError, UsageError,
                     VerificationError)
from .geometry import (CellRef, Point2, Tiling, TilingSpec, cell_of, center_of, hex_cell_of,
                       stretch_lands_on_lattice, tri_cell_of, validate_lambda)
from .moments import MomentSeries
from .output import emit_plot_data
from .spectral import (diagonalization_check, diffusion_matrix, gaussian_prediction, symbol_at,
                       symbol_scan, symbol_taylor)
from .stats import (DiffusionReport, Tolerances, compare_report, fit_variance_growth,
                    gaussianity_test)
from .transfer import (DensityField, Kernel, apply_transfer, density_moments, evolve,
                       evolve_series, kernel_1d, kernel_for, kernel_from_csv, kernel_hex,
                       kernel_to_csv, kernel_tri)

__version__ = "0.1.0"
