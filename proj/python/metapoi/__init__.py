"""Python bindings for the metapoi C++ core."""

from ._core import (
    CheckinRecord,
    ConfigError,
    DataError,
    NumericalError,
    __version__,
    build_city_dataset,
    category_index,
    correlation_matrix,
    correlation_weight,
    discretize_distance,
    discretize_time,
    filter_sparse,
    haversine_km,
    hit_ratio_at_k,
    load_dataset,
    mostpop_ranking,
    ndcg_at_k,
    parse_checkins_text,
    parse_timestamp,
    pearson,
    rank_of_truth,
    run_pipeline,
    split_sizes,
    synthesize,
    transition_distribution,
)

__all__ = [name for name in dir() if not name.startswith("_")]
