"""Kademlia routing laboratory.

Simulates Kademlia-type overlays (MDHT, iMDHT, KAD) under standard and
diversity-maximizing neighbour selection, and predicts lookup hop counts with an
absorbing Markov chain, so the two can be cross-validated.
"""

from .idspace import DiversityDegree, NodeId, bit_distance, common_prefix_length, diversity_degree
from .lookup import LookupResult, lookup
from .model import (
    ClosestContactLaw,
    HopCountResult,
    StateDistribution,
    TERMINAL,
    bitgain_diverse,
    bitgain_standard,
    closest_law_diverse,
    closest_law_standard,
    empty_region_prob,
    hop_count_cdf,
    initial_distribution,
    mix_over_levels,
    success_prob,
    transition_apply,
    upsilon,
)
from .routing import (
    Bucket,
    Contact,
    DIVERSE,
    RoutingTable,
    STANDARD,
    SystemProfile,
    diversity_cdf,
    get_profile,
    imdht_profile,
    kad_profile,
    mdht_profile,
)
from .simulator import (
    ChurnSpec,
    ExperimentReport,
    Network,
    PairedReport,
    build_network,
    compare_schemes,
    run_experiment,
)
from .bounds import BoundCurve, bound_curve, count_local_maxima, default_grid, empty_bucket_bound

__version__ = "0.1.0"

__all__ = [
    "NodeId", "DiversityDegree", "common_prefix_length", "bit_distance", "diversity_degree",
    "SystemProfile", "get_profile", "mdht_profile", "imdht_profile", "kad_profile",
    "Contact", "Bucket", "RoutingTable", "STANDARD", "DIVERSE", "diversity_cdf",
    "LookupResult", "lookup",
    "Network", "ChurnSpec", "ExperimentReport", "PairedReport",
    "build_network", "run_experiment", "compare_schemes",
    "TERMINAL", "ClosestContactLaw", "StateDistribution", "HopCountResult",
    "upsilon", "empty_region_prob", "bitgain_standard", "bitgain_diverse",
    "success_prob", "closest_law_standard", "closest_law_diverse", "mix_over_levels",
    "initial_distribution", "transition_apply", "hop_count_cdf",
    "BoundCurve", "empty_bucket_bound", "bound_curve", "default_grid", "count_local_maxima",
    "__version__",
]
