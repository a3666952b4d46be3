from .graph import (
    NORMAL, REDUCTION, CellGraph, EdgePool, WeightStore, cell_forward, count_configurations,
    edge_id, finalize, finalize_cell, mixed_edge_forward, parse_edge_id,
)
from .network import Network, auxiliary_position, build_proxy_network, plan_layout, reduction_positions
from .export import cell_description, read_cell, to_dot, write_cell
