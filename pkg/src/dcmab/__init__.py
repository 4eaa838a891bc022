"""Clustered multi-agent bidding on a simulated eCPM/GSP ad market."""

from .agents import AgentConfig, Algorithm, ReplayMemory, Team
from .clustering import ClusterAssignment
from .dataio import AuctionLog, GeneratorConfig, generate_synthetic_log, replay_log
from .market import AuctionOutcome, AuctionRequest, CandidateAd, MerchantProfile, settle_auction
from .metrics import compute_metrics, pareto_compare
from .simulator import EpisodeConfig, prepare, run_episode, run_experiment, run_training
from .state import RewardMode, StateServer

__version__ = "0.1.0"
