"""Discrete flow matching on the torus Z_m^d: exact kernels, scores, sampler and losses."""

from .coupling import Coupling, ReweightedCoupling, independent_coupling, load_coupling, point_coupling, reweight
from .engine import (
    ExactEngine,
    MarginalDist,
    bridge_score,
    engine_for,
    evolution_residuals,
    forward_evolve,
    interpolant_marginal,
    markov_score,
    projected_generator,
    score_ode_residual,
)
from .errors import CapacityError, DomainError, InputError, NumericalError, UndefinedScoreError
from .kernels import Dynamics, bessel_i, generator_rate, kolmogorov_residual, transition_prob, wrapped_skellam
from .lattice import JumpOp, LatticeSpec, apply_jump, decode, encode, hamming
from .losses import (
    LossProblem,
    TabularScore,
    epsilon_tilde,
    loss_entropy,
    loss_l2,
    loss_total,
    loss_tractable,
    train_tabular,
)
from .metrics import kl, tv
from .sampler import ExactScore, PerturbedScore, TimeGrid, algorithm_law, build_grid, simulate_path, simulate_paths

__version__ = "0.1.0"
