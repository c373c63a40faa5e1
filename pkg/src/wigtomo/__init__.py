"""Multimode Wigner tomography of truncated bosonic states.

Three reconstruction strategies over a shared simulated measurement backend:

- subspace importance sampling (DEMESST): per-element-operator estimates from
  points drawn proportional to the operator's own Wigner magnitude, with
  vacuum modes projected out;
- optimized linear inversion (OLI): a fixed displacement set tuned for
  conditioning, inverted under physicality constraints;
- direct fidelity estimation (W^2): importance sampling against the target
  state's squared Wigner function.
"""

from .hilbert import (
    CapacityError,
    DensityMatrix,
    ElementOperator,
    FockBasis,
    ModePartition,
    OperatorKind,
    assemble_from_elements,
    element_operators,
    embed_state,
    enumerate_basis,
    full_partition,
    ideal_w_state,
    perturbed_state,
    product_basis,
    project_and_trace,
)
from .wigner import (
    DisplacementPoint,
    HardwareProfile,
    ParityAngles,
    choose_wait_time,
    cz_weight,
    displacement_element,
    generalized_wigner_element,
    generalized_wigner_state,
    load_hardware_profile,
    normalization_c,
    pi_angles,
    z_norm,
)

__all__ = [
    "CapacityError",
    "DensityMatrix",
    "DisplacementPoint",
    "ElementOperator",
    "FockBasis",
    "HardwareProfile",
    "ModePartition",
    "OperatorKind",
    "ParityAngles",
    "assemble_from_elements",
    "choose_wait_time",
    "cz_weight",
    "displacement_element",
    "element_operators",
    "embed_state",
    "enumerate_basis",
    "full_partition",
    "generalized_wigner_element",
    "generalized_wigner_state",
    "ideal_w_state",
    "load_hardware_profile",
    "normalization_c",
    "perturbed_state",
    "pi_angles",
    "product_basis",
    "project_and_trace",
    "z_norm",
]

__version__ = "0.1.0"
