"""Master equations and quantum filters for systems driven by n-photon wavepackets."""

from .config import PRESETS, ConfigError, RunConfig, dump_config, parse_config
from .ensemble import EnsembleSpec, EnsembleSummary, convergence_report, run_ensemble
from .fock import FockLadder, fock_filter_step, integrate_fock_master, run_fock_filter
from .homodyne import TrajectoryRecord, homodyne_step, sbar, simulate_homodyne
from .master import (DensityHierarchy, MasterSolution, NumericalAbort, expectation,
                     init_hierarchy, integrate_master, master_rhs)
from .operators import (DimensionError, SystemModel, heisenberg_superop, schrodinger_superop,
                        verify_duality)
from .photocount import (JumpRecord, delta_dual, delta_heisenberg, photocount_step,
                         simulate_photocount)
from .photons import (PulseSet, SubsetIndex, annihilation_coefficients, component_count,
                      gram_matrix, normalization, permanent, state_overlap, subset_rank)

__version__ = "0.1.0"
