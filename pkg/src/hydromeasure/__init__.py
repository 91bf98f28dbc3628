"""Grid wavefunctions, hydrodynamic trajectories and system + apparatus measurement models."""
from .errors import *  # noqa: F401,F403
from .grid import (Axis, ManyBodyWavefunction, PolarFields, SpatialGrid, SupportMask, compute_support,
                   polar_decompose)
from .tdse import EvolutionConfig, HamiltonianSpec, energy, evolve, split_step
from .hydro import (SampleSpec, TrajectoryEnsemble, advect_support, check_no_crossing, continuity_residual,
                    current_density, integrate_trajectories, measure_conservation, velocity_field)
from .bipartite import (Bipartition, SchmidtDecomposition, purity, reconstruct, reduced_density_matrix,
                        schmidt_decompose, symmetrize_two_particle)
from .integral import RegionSpec, b_omega, check_probability_inequalities
from .measurement import (ApparatusSpec, BranchDensity, ConsistencyReport, KrausSet, ObservableSpec,
                          branch_density, build_entangled_state, build_kraus, check_consistency,
                          expectation_via_functional, generalized_SEE, projective_measure, weak_collapse_system,
                          weak_probabilities, weak_variant_A, weak_variant_B)

__version__ = "0.1.0"
