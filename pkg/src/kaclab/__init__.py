"""Simulation lab for the hard-spheres Kac process.

Exact particle samplers, weighted Wasserstein metrics, the linearised
branching process and scripted studies.  The compiled kernels are used when
built; ``KACLAB_BACKEND=python`` selects the pure-Python twin.
"""
from ._backend import BACKEND
from .branching import (BranchEstimate, Environment, SignedParticleSystem, branch_step,
                        estimate_flow_derivative, estimate_fst, growth_bound_check,
                        lipschitz_profile, simulate_trees)
from .cloud import WeightedPointCloud
from .config import ConfigError, RunConfig, default_config, emit_config, parse_config
from .kinetic import (MaxwellianSpec, ParticleState, collide, collision_operator_apply,
                      maxwellian_sample, project_to_boltzmann_sphere, sample_sigma)
from .process import KacProcess, Trajectory, simulate
from .seeding import derive_seed, make_rng, stream

__version__ = "0.1.0"
