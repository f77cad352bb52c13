"""Sparse-sampling planners, Boltzmann policies and Lyapunov stability
diagnostics for MDPs with unbounded (queue-like) state spaces."""

from .adaptive import TunerState, near_stability_metric, run_adaptive, tuner_step
from .environments import (DeterministicChain, FiniteMdp, QueueConfig, QueueNetwork,
                           ReflectedWalk, TwoQueueConfig, euclidean_lyapunov, exact_q,
                           reflected_walk_step, serve_longest, two_queue_step)
from .errors import BudgetError, ContractError, TrajectoryParseError, UsageError
from .grid import GridCache, GridParams, estimate_q_grid, grid_params, snap
from .mdp import GenerativeModel, step
from .policy import (BoltzmannParams, boltzmann, eps_of_delta, kappa_bound, sample_action,
                     tau_of_alpha, tv_distance)
from .sparse import QEstimate, SparseParams, estimate_q, sparse_params
from .stability import (HajekConstants, LyapunovSpec, StabilityReport, empirical_drift,
                        empirical_tail, hajek_constants, return_time_bound, stability_verdict,
                        tail_bound)
from .streams import StreamKey, derive_stream
from .trajectory import TrajectoryRecord

__version__ = "0.1.0"
