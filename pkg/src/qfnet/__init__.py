"""
Distributed optimization over random time-varying directed networks:
quasi-Fejér agent dynamics, a superiorized adaptive projected subgradient
method, over-the-air consensus and a kernel-regression harness.
"""

from .core import (BoxSet, ConfigurationError, NumericalError, PerturbationSchedule,
                   StepSchedule, ValidationError, project_box, stream)
from .network import (GeometricNetworkModel, NetworkSnapshot, absolute_probability_sequence,
                      lifted_mixing_matrix, sample_snapshot)
from .operators import PerturbationGenerator, sapsm_step
from .consensus import BroadcastScheme, CentralizedScheme, NoCommunicationScheme
from .otac import OtacConfig, OtacScheme

__version__ = "0.1.0"
