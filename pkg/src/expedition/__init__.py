"""Plume-mapping expedition stack: simulator, beliefs, planners and mission harness."""

from .config import MissionConfig
from .episode import EpisodeTrace, Summary, inplume_fraction, maxseek_regret, run_episode
from .gp import GPBelief, GPHyperparams, gp_predict, gp_update, sample_max_values
from .particles import ParamParticleBelief, particle_init, particle_resample, particle_reweight
from .phumes import (ForecastGrid, GridSpec, LawnmowerSpec, OpConstraints, expected_inplume, forecast,
                     lawnmower_waypoints, optimize_lawnmower)
from .planner import PlannerConfig, PolicyKind, baseline_action, episode_value, mvi_reward, plan_mcts
from .plume import (Box, MotionPrimitive, Observation, ParamPrior, Pose, TideParams, VentParams,
                    concentration, derived_scales, observe, sample_params, step)

__version__ = "0.1.0"
