from .maxflow import LARGE, FlowGraph, GridFlow, max_flow
from .stereo import (
    ENERGY_SCALE,
    DisparityMap,
    SmoothnessForm,
    StereoEnergyParams,
    data_term,
    energy_of,
    expand_labels,
    expansion_move,
    labeling_energy,
    minimize_expansion,
    pairwise_table,
    read_disparity,
    solve_disparity,
    unary_costs,
    write_disparity,
)

__all__ = [
    "ENERGY_SCALE",
    "LARGE",
    "DisparityMap",
    "FlowGraph",
    "GridFlow",
    "SmoothnessForm",
    "StereoEnergyParams",
    "data_term",
    "energy_of",
    "expand_labels",
    "expansion_move",
    "labeling_energy",
    "max_flow",
    "minimize_expansion",
    "pairwise_table",
    "read_disparity",
    "solve_disparity",
    "unary_costs",
    "write_disparity",
]
