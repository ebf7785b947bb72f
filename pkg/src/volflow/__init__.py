"""Volume-preserving flows: flow boxes, local perturbations, return maps and chains."""

from .chains import (
    EpsTChain,
    TorusRecurrenceOracle,
    build_chain_via_recurrence,
    chain_transitivity_test,
    reverse_chain,
    verify_chain,
)
from .core import (
    BoxChart,
    BumpPair,
    CylinderRingSpec,
    Patch,
    VectorFieldSpec,
    bump_gamma,
    bump_lambda,
    catalog_field,
    divergence,
    evaluate,
    field_from_dict,
    field_to_dict,
    in_cylinder_ring,
    jacobian,
)
from .dynamics import IntegratorConfig, Orbit, flow_jacobian, integrate, liouville_check
from .flowbox import DensityField, build_flowbox, check_density_invariance, verify_flowbox
from .perturb import (
    PerturbationSpec,
    build_perturbation,
    closed_form_flow,
    cr_norm_estimate,
    cr_norm_profile,
    verify_deviation,
)
from .poincare import (
    CriticalElement,
    SectionSpec,
    check_genericity_conditions,
    detect_recurrence,
    first_return,
    fundamental_domain_sample,
    grow_invariant_manifold,
    linearized_return,
)
from .returnlemma import (
    extend_return_time,
    find_circle_through,
    join_to_recurrent,
    multi_point_join,
    translation_scenario,
    verify_return_lemma,
)

__version__ = "0.1.0"
