"""Virtual laboratory for mean-field engineering of a driven two-level emitter.

Closed-form multiphoton correlators of the homodyned resonance fluorescence, a
quantum-jump simulator producing synthetic detector time tags, and the
coincidence analysis that turns tags back into g2, g3 and intensity fits.
"""
from .errors import (
    ConfigError,
    HeitlerLabError,
    NumericalError,
    TagFormatError,
)
from .model import HomodyneConfig, SteadyState, SystemParams, heitler_diagnostic, signal_intensity, steady_state
from .correlators import (
    G_n_zero,
    PhotonDistribution,
    g_n_heitler,
    g_n_zero,
    locate_antibunching_minimum,
    modulation_factor,
    photon_distribution,
)
from .tags import TagStream, read_tags, write_binary, write_csv
from .trajectory import DetectorChain, UnravelingConfig, ensemble_population, simulate_tags
from .analysis import (
    CorrelationHistogram,
    RadialProfile,
    g2_histogram,
    g3_histogram,
    radial_integrate,
    zero_delay_estimate,
)
from .phasescan import PhaseScanFit, PhaseTrace, fit_phase_scan

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "HeitlerLabError", "NumericalError", "TagFormatError",
    "HomodyneConfig", "SteadyState", "SystemParams", "heitler_diagnostic", "signal_intensity", "steady_state",
    "G_n_zero", "PhotonDistribution", "g_n_heitler", "g_n_zero", "locate_antibunching_minimum",
    "modulation_factor", "photon_distribution",
    "TagStream", "read_tags", "write_binary", "write_csv",
    "DetectorChain", "UnravelingConfig", "ensemble_population", "simulate_tags",
    "CorrelationHistogram", "RadialProfile", "g2_histogram", "g3_histogram", "radial_integrate",
    "zero_delay_estimate",
    "PhaseScanFit", "PhaseTrace", "fit_phase_scan",
]
