"""Participation ratios and loss-factor extraction for trenched CPW resonators."""

__version__ = "0.1.0"

from .conformal import cpw_capacitance  # noqa: E402
from .errors import (ConfigError, CpwlossError, DataError, GeometryError, MeshError,  # noqa: E402
                     PreconditionError, SolverError)
from .geometry import (CpwGeometry, InterfaceLayerSpec, RegionMap, Tag, build_cross_section,  # noqa: E402
                       interpolate_sidewall_angle)
from .lossfit import (InterfaceAssumptions, LossFactorDistribution, LossFactorVector,  # noqa: E402
                      ParticipationMatrix, assemble, monte_carlo_extract, nnls_solve, predict_qtls,
                      to_loss_tangents)
from .mesh import Mesh, RefinementPolicy, generate_mesh, refine_mesh  # noqa: E402
from .participation import (DepthSweepResult, ParticipationVector, depth_sweep,  # noqa: E402
                            participation_direct, participation_perturbative, rescale_thin_layer)
from .qdata import DeviceRecord, QtlsStat, aggregate, parse_measurements, qtls_correct  # noqa: E402
from .solver import FieldSolution, solve_electrostatic, surface_field_trace  # noqa: E402
