from .specs import (
    AVG_POOL, IDENTITY, KINDS, MAX_POOL, PRESET_REFERENCE_TOTALS, PRESETS, SEP_CONV,
    CandidateSpec, SpaceConstraints, avg_pool, identity, initial_candidates, max_pool,
    parse_spec, preset, sep_conv,
)
from .operations import Operation, OperationWeights, expansion_widths, factorized_reduction, fan_in_uniform, fresh_weights, instantiate, parameter_count
from .morphs import (
    DILATION_DOWN, DILATION_UP, INSERT, KERNEL_DOWN, KERNEL_UP, MOVES, WIDEN,
    MorphAction, apply_morph, available_morphs, morph_spec, widen_index,
)
from .reachability import morph_distances, preset_report, reachable_set
from .similarity import expansion_match, group_similarity, similarity
