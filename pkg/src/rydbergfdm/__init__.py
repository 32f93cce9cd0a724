from .version import __version__
from .codec import Frame, PhaseLabel, decode_label, encode_bits, field_from_label
from .config import AtomParams, RunConfig, load_config
from .errors import RydbergFDMError
from .physics import MWField, Spectrum, simulate_spectrum, steady_state

__all__ = [
    "AtomParams",
    "Frame",
    "MWField",
    "PhaseLabel",
    "RunConfig",
    "RydbergFDMError",
    "Spectrum",
    "__version__",
    "decode_label",
    "encode_bits",
    "field_from_label",
    "load_config",
    "simulate_spectrum",
    "steady_state",
]
