"""cjmap: coinjoin input-output mapping enumeration and privacy metrics."""

from .anonloss import (
    DEFAULT_BUCKETS,
    DetectionParams,
    GraphOutput,
    GraphTx,
    LossReport,
    TxGraph,
    anonymity_set,
    compute_loss,
    detect_coinjoin,
    detect_coinjoins,
    find_consolidations,
)
from .enumeration import (
    Constraints,
    EnumerationResult,
    assemble_mappings,
    brute_force_oracle,
    enumerate_mappings,
    enumerate_submappings,
    expand_mappings,
)
from .generator import GroundTruth, generate, generate_sized, trend_dataset
from .metrics import (
    MappingDistribution,
    MetricsReport,
    WeightTable,
    build_report,
    entropy,
    link_probability,
    mapping_distribution,
    max_link,
    submapping_probability,
)
from .model import (
    Coin,
    Coinjoin,
    Mapping,
    NumericMapping,
    SubMapping,
    coinjoin_from_values,
    multiplicity_of,
    numeric_signature_of,
    validate_coinjoin,
)
from .multicj import Link, LinkedSet, build_artificial, enumerate_linked
from .preprocess import (
    FeePolicy,
    Knowledge,
    NormalizedCoinjoin,
    apply_knowledge,
    build_policy,
    normalize_fees,
)
from .trend import TrendFit, fit_trend

__version__ = "0.1.0"
