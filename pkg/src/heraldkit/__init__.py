"""Detector POVMs, heralded single-photon preparation and detector tomography."""

__version__ = "0.1.0"

from .fock import (
    DiagonalFockOperator,
    FockCutoff,
    PrecisionWarning,
    laguerre_eval,
    poisson_weights,
    wigner_diagonal,
    wigner_fock_radial,
)
from .detectors import (
    DetectorKind,
    DetectorModel,
    Povm,
    build_povm,
    povm_apd,
    povm_brute_force,
    povm_ideal_pnr,
    povm_tmd,
    validate_povm,
)
from .heralding import (
    TwinBeamSource,
    closed_form_metrics,
    conditional_state,
    fidelity_overlap_wigner,
    fidelity_single_photon,
    high_gain_limit_state,
    rate_at_target_fidelity,
    heralding_cutoff,
    series_metrics,
    sweep,
)
from .tomography import (
    ProbeGrid,
    TomographyDataset,
    compare_povm,
    loglikelihood,
    ml_reconstruct,
    predicted_probabilities,
    simulate_dataset,
)
