"""Branching-diffusion chemotaxis models and their hydrodynamic-limit checks.

Four coupled model implementations share one lineage-indexed noise universe:
the individual-based branching diffusion coupled to a chemoattractant field,
the single-line mean-field branching process, the mass-carrying particle, and
the deterministic density/field system -- plus experiments that quantify how
the stochastic models converge to the deterministic one.
"""

from .errors import (CFLViolation, ChemobranchError, ConfigInvalid,
                     DimensionMismatch, EmptyEnsemble, GridMismatch,
                     LineageDepthExceeded, NonFiniteAtom, NonFiniteQuery,
                     NonFiniteState, NoSuchLine, PicardStalled,
                     PopulationExplosion, RootHasNoParent)
from .field import Field, FieldPath, GridSpec, Kernel, deposit, semigroup_step
from .microscopic import (EventRecord, MicroTrajectory, ModelParams,
                          lineage_restriction, simulate_lines,
                          simulate_microscopic)
from .meanfield import (MassEnsemble, MassParticlePath, MeanMeasurePath,
                        SelfConsistentField, estimate_mu, simulate_hybrid,
                        simulate_mass_ensemble, simulate_mass_particle,
                        solve_selfconsistent_field)
from .macroscopic import (ComparisonReport, PksSolution,
                          compare_with_monte_carlo, observed_order, solve_pks)
from .population import (CellRecord, EmpiricalMeasure, LineageIndex,
                         PopulationState, children, empirical, integrate,
                         parent, state_distance)
from .randomness import ClockEvent, NoiseUniverse, clock_events, wiener_increments
from .registry import DriftSpec, InitialFieldSpec, InitialMeasureSpec, RateSpec
from .analysis import (BumpFunction, ConvergenceReport, TestFunctionBank,
                       coupling_experiment, measure_convergence_experiment,
                       vague_distance, yule_bound_check)

__version__ = "0.1.0"
