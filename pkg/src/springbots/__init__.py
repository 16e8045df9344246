"""Co-design of robot bodies and neural controllers in a differentiable 2D spring-mass world.

An evolutionary outer loop varies body plans on a triangular lattice; an
inner loop trains each body's controller by backpropagating through the
simulation.
"""

from .analysis import GenerationStats, RunLog, ZeroVariance, generation_stats, spearman
from .controller import ControllerParams, init_params
from .evolution import EvolutionConfig, Individual, Problem, evolve
from .lattice import EmptyMorphology, Genome, LatticeDims, Morphology, build_lattice_index, decode, random_genome
from .learning import LearnConfig, TrainResult, gradient, train
from .simulator import SimConfig, SimState, integrate_step, rollout
from .terrain import Terrain, flat, generate_rugged

__all__ = [
    "ControllerParams",
    "EmptyMorphology",
    "EvolutionConfig",
    "GenerationStats",
    "Genome",
    "Individual",
    "LatticeDims",
    "LearnConfig",
    "Morphology",
    "Problem",
    "RunLog",
    "SimConfig",
    "SimState",
    "Terrain",
    "TrainResult",
    "ZeroVariance",
    "build_lattice_index",
    "decode",
    "evolve",
    "flat",
    "generate_rugged",
    "generation_stats",
    "gradient",
    "init_params",
    "integrate_step",
    "random_genome",
    "rollout",
    "spearman",
    "train",
]
