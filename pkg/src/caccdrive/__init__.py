"""CACC convoy simulation, driveability metrics and D-stable PD gain design."""
from .control import ORIGINAL_GAINS, REDESIGNED_GAINS, ControllerGains, SpacingPolicy
from .convoy import ConvoyTrace, Scenario, simulate
from .design import DRegionSpec, GainRegion, LoopModel, assemble_region, in_region, poles
from .dynamics import VehicleParams
from .profiles import ProfileSpec, SpeedTrace, load_speed_trace

__version__ = "0.1.0"

__all__ = [
    "ORIGINAL_GAINS", "REDESIGNED_GAINS", "ControllerGains", "ConvoyTrace", "DRegionSpec",
    "GainRegion", "LoopModel", "ProfileSpec", "Scenario", "SpacingPolicy", "SpeedTrace",
    "VehicleParams", "assemble_region", "in_region", "load_speed_trace", "poles", "simulate",
]
