"""Desk-scale metric geometry of fibered products of trees and expanding groups.

The package models the boundary at infinity of a negatively curved space
built from an (m+1)-valent tree and a one-parameter expanding group on R^n:
exact tree-boundary ultrametrics, computable coarse distances and visual
metrics for the homogeneous model, the fibered (millefeuille) space with its
maximum-metric boundary, a quasi-isometry classifier, and empirical
estimators for bilipschitz constants, quasisymmetry moduli, Holder norms, and
measure distortion of boundary self-maps.
"""

from .classify import (
    AbsJordanForm,
    Verdict,
    common_power_base,
    jordan_power_compatible,
    primitive_root,
    qi_equivalent,
)
from .heintze import (
    ExpandingStructure,
    HoroPoint,
    Layer,
    apply_flow,
    crossing_height,
    dm_closed_form,
    euclid_cygan,
    euclid_cygan_convergence,
    level_metric,
    snowflake_reparam,
    tent_distance,
    unit_height,
    visual_distance,
)
from .madic import (
    NEG_INF,
    MAdicPoint,
    TreeVertex,
    agreement_height,
    ball_of,
    children,
    madic_distance,
    parent,
    tree_distance,
)
from .maps import (
    AlmostTranslation,
    BoundaryMap,
    BTerm,
    Composite,
    DigitRoutingMap,
    PowerMap,
    Sampler,
    Similarity,
    TreeSimilarity,
    Window,
    check_uniform,
    compose,
    estimate_bilipschitz,
    estimate_measure_distortion,
    estimate_qs_modulus,
    holder_norm_estimate,
    identity_map,
    invert,
    rigidity_experiment,
    similarity_from_signs,
    standard_catalog,
    verify_coordinate_form,
    verify_decomposition,
)
from .mille import (
    INFINITY_END,
    BoundaryPoint,
    Hyperplane,
    MillePoint,
    boundary_visual,
    classify_hyperplane,
    constrained_distance,
    dmax_formula,
    mille_distance,
    normalize_for_boundary,
    same_mille_point,
)

__version__ = "0.1.0"
