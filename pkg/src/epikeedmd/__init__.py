"""Episodic Koopman eigenfunction learning for multirotor landing.

Library layout:

- ``koopman_linear``: eigenpairs and eigenfunctions of a stable linear system
- ``diffeo``: learned diffeomorphism conjugating data to the linear model
- ``eigfunc``: eigenfunction dictionary built on top of the diffeomorphism
- ``keedmd``: lifted linear model identified by elastic-net regression
- ``qp``, ``mpc``: box-constrained QP solver and the lifted MPC built on it
- ``episodic``: composite controller and the episodic learning loop
- ``sim``: one-dimensional altitude dynamics with ground effect
- ``cli``: command-line runner and report writers
"""
from .config import CampaignConfig, dumps as dump_config, load as load_config, loads as loads_config
from .diffeo import DiffeoNet, DiffeoTrainConfig, fit_diffeomorphism, normalize_diffeo
from .eigfunc import EigenfunctionBasis, construct_eigenfunctions, lift
from .episodic import CampaignResult, CompositeController, episodic_learn, single_landing
from .errors import KeedmdError
from .keedmd import LiftedModel, build_lifted_dataset, discretize_zoh, elastic_net, fit_lifted_model, zoh
from .koopman_linear import NominalModel, adjoint_eigenbasis, generate_power_combinations
from .mpc import LiftedMPC, MPCConfig
from .qp import QPProblem, QPSettings, solve_qp
from .sim import DroneParams, DroneSim, lqr_gains

__version__ = "0.1.0"

__all__ = [
    "CampaignConfig", "dump_config", "load_config", "loads_config",
    "DiffeoNet", "DiffeoTrainConfig", "fit_diffeomorphism", "normalize_diffeo",
    "EigenfunctionBasis", "construct_eigenfunctions", "lift",
    "CampaignResult", "CompositeController", "episodic_learn", "single_landing",
    "KeedmdError",
    "LiftedModel", "build_lifted_dataset", "discretize_zoh", "elastic_net", "fit_lifted_model", "zoh",
    "NominalModel", "adjoint_eigenbasis", "generate_power_combinations",
    "LiftedMPC", "MPCConfig",
    "QPProblem", "QPSettings", "solve_qp",
    "DroneParams", "DroneSim", "lqr_gains",
    "__version__",
]
