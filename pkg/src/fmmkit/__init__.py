"""fmmkit: linear-time octree interaction lists and a Laplace FMM evaluator.

The construction side builds pseudo-sorted point arrays, bookmarks,
neighbor tables and translation stencils in time linear in the number of
points; the evaluation side proves them correct end to end against a
brute-force reference, on one node or on a simulated multi-node cluster.
"""

from .backend import backend_name
from .boxtype import BoxType, TypedBoxList, classify
from .errors import (
    CapacityError,
    DomainError,
    FmmError,
    InfeasiblePartitionError,
    RoutingError,
)
from .exchange import (
    MDataPacket,
    SimulatedCluster,
    TrafficLedger,
    evaluate_distributed,
)
from .partition import (
    PartitionPlan,
    choose_partition,
    owner_of,
    scatter_points,
)
from .expansions import (
    Expansion,
    OperatorCache,
    eval_regular_packed,
    eval_singular_packed,
    num_coefficients,
)
from .fmm import direct_sum, evaluate, far_field_potentials, near_field_potentials
from .lists import (
    FmmStructures,
    NeighborTable,
    build_all,
    build_neighbor_table,
    build_level_directory,
    build_translation_stencils,
    dump_structures,
    gather_adjacent_sources,
    load_structures,
)
from .morton import (
    MAX_LEVEL,
    BoxCoords,
    MortonKey,
    Point3,
    adjacent_boxes,
    ancestor_at,
    box_center,
    box_centers,
    box_index_of_point,
    box_indices_of_points,
    children,
    deinterleave,
    interaction_boxes,
    interleave,
    parent,
)
from .pseudosort import (
    SortedPointSet,
    build_bookmarks,
    choose_max_level,
    histogram_and_sort_index,
    reorder,
    sort_points,
)
from .scan import compact_flags, exclusive_scan

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "DomainError",
    "FmmError",
    "InfeasiblePartitionError",
    "RoutingError",
    "MAX_LEVEL",
    "BoxCoords",
    "BoxType",
    "MDataPacket",
    "MortonKey",
    "PartitionPlan",
    "Point3",
    "Expansion",
    "FmmStructures",
    "NeighborTable",
    "OperatorCache",
    "SimulatedCluster",
    "SortedPointSet",
    "TrafficLedger",
    "TypedBoxList",
    "choose_partition",
    "classify",
    "evaluate_distributed",
    "owner_of",
    "scatter_points",
    "adjacent_boxes",
    "ancestor_at",
    "backend_name",
    "box_center",
    "box_centers",
    "box_index_of_point",
    "box_indices_of_points",
    "build_all",
    "build_bookmarks",
    "build_level_directory",
    "build_neighbor_table",
    "build_translation_stencils",
    "children",
    "choose_max_level",
    "compact_flags",
    "deinterleave",
    "direct_sum",
    "dump_structures",
    "eval_regular_packed",
    "eval_singular_packed",
    "evaluate",
    "exclusive_scan",
    "far_field_potentials",
    "gather_adjacent_sources",
    "histogram_and_sort_index",
    "interaction_boxes",
    "interleave",
    "load_structures",
    "near_field_potentials",
    "num_coefficients",
    "parent",
    "reorder",
    "sort_points",
]
