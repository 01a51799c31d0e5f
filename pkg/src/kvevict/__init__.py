"""
Kvevict package for KV-cache eviction in transformer inference.
"""

from .attention import ScoreMatrix
from .attention import ProbMatrix
from .attention import compute_scores
from .attention import masked_softmax_rows
from .attention import logsumexp_rows

from .baselines import baseline_attention_sink
from .baselines import baseline_h2o
from .baselines import baseline_msrnn
from .baselines import baseline_scissorhands
from .baselines import scissorhands_counters

from .bench import RunConfig
from .bench import load_config
from .bench import parse_config
from .bench import pivotal_recall
from .bench import run_policy
from .bench import run_compare
from .bench import run_simulate
from .bench import run_kernel_check
from .bench import run_sparsity
from .bench import emit_heatmap

from .budget import BudgetConfig
from .budget import BudgetCounts
from .budget import budget_preset

from .cache_manager import HeadCache
from .cache_manager import ModelCache
from .cache_manager import EvictionRecord
from .cache_manager import EvictionTrace
from .cache_manager import encode
from .cache_manager import generate_step
from .cache_manager import generate
from .cache_manager import reference_stepwise_encode
from .cache_manager import count_evictions

from .errors import KvevictError
from .errors import ShapeError
from .errors import DegenerateRowError
from .errors import BudgetError
from .errors import PolicyConfigError
from .errors import SequenceError
from .errors import HeadEvictionError
from .errors import ConfigError
from .errors import TraceLookupError
from .errors import TraceFormatError

from .memory_model import GIB
from .memory_model import ModelShape
from .memory_model import kv_bytes
from .memory_model import kv_table

from .nacl import NaclSelection
from .nacl import default_proxy_sets
from .nacl import hybrid_select
from .nacl import nacl_parts
from .nacl import nacl_select

from .policies import EvictionPolicy
from .policies import NaclPolicy
from .policies import H2OPolicy
from .policies import MsrnnPolicy
from .policies import SinkPolicy
from .policies import ScissorhandsPolicy
from .policies import FullPolicy
from .policies import POLICIES
from .policies import make_policy

from .retention import Retention
from .retention import MonteCarloRetention
from .retention import retention_probability
from .retention import monte_carlo_retention

from .rng import HeadRngStream
from .rng import keyed_generator

from .selection import ProxySet
from .selection import RetainedSet
from .selection import TokenScores
from .selection import score_proxy
from .selection import select_topk
from .selection import sample_random

from .sparsity import SparsityReport
from .sparsity import sparsity
from .sparsity import sparsity_sweep

from .tiled_reduce import TileSpec
from .tiled_reduce import ReducedScores
from .tiled_reduce import OpCounter
from .tiled_reduce import reduce_naive
from .tiled_reduce import reduce_tiled
from .tiled_reduce import tiled_logsumexp
from .tiled_reduce import recompute_proxy_scores

from .workload import PivotalToken
from .workload import Workload
from .workload import HeadActivations
from .workload import StepRows
from .workload import Activations
from .workload import generate_workload

__all__ = [
    "ScoreMatrix",
    "ProbMatrix",
    "compute_scores",
    "masked_softmax_rows",
    "logsumexp_rows",
    "baseline_attention_sink",
    "baseline_h2o",
    "baseline_msrnn",
    "baseline_scissorhands",
    "scissorhands_counters",
    "RunConfig",
    "load_config",
    "parse_config",
    "pivotal_recall",
    "run_policy",
    "run_compare",
    "run_simulate",
    "run_kernel_check",
    "run_sparsity",
    "emit_heatmap",
    "BudgetConfig",
    "BudgetCounts",
    "budget_preset",
    "HeadCache",
    "ModelCache",
    "EvictionRecord",
    "EvictionTrace",
    "encode",
    "generate_step",
    "generate",
    "reference_stepwise_encode",
    "count_evictions",
    "KvevictError",
    "ShapeError",
    "DegenerateRowError",
    "BudgetError",
    "PolicyConfigError",
    "SequenceError",
    "HeadEvictionError",
    "ConfigError",
    "TraceLookupError",
    "TraceFormatError",
    "GIB",
    "ModelShape",
    "kv_bytes",
    "kv_table",
    "NaclSelection",
    "default_proxy_sets",
    "hybrid_select",
    "nacl_parts",
    "nacl_select",
    "EvictionPolicy",
    "NaclPolicy",
    "H2OPolicy",
    "MsrnnPolicy",
    "SinkPolicy",
    "ScissorhandsPolicy",
    "FullPolicy",
    "POLICIES",
    "make_policy",
    "Retention",
    "MonteCarloRetention",
    "retention_probability",
    "monte_carlo_retention",
    "HeadRngStream",
    "keyed_generator",
    "ProxySet",
    "RetainedSet",
    "TokenScores",
    "score_proxy",
    "select_topk",
    "sample_random",
    "SparsityReport",
    "sparsity",
    "sparsity_sweep",
    "TileSpec",
    "ReducedScores",
    "OpCounter",
    "reduce_naive",
    "reduce_tiled",
    "tiled_logsumexp",
    "recompute_proxy_scores",
    "PivotalToken",
    "Workload",
    "HeadActivations",
    "StepRows",
    "Activations",
    "generate_workload",
]
