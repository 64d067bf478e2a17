"""Gridless variational channel estimation from coarsely quantized array data.

Public surface: geometry/channel synthesis, quantizers, the message-passing
estimators and baselines, Cramer-Rao bounds, and the experiment harness.
"""

from .arrays import (ArrayGeometry, GroundTruthChannel, PilotBlock, doa_to_freq,
                     freq_to_doa, full_ula, steering_matrix, steering_vector,
                     synthesize_channel, synthesize_observation)
from .crb import FimResult, fim
from .estimator import (ChannelEstimate, EstimatorConfig, estimate,
                        estimate_aqnm, estimate_ls, estimate_sequential)
from .quantizer import (IDENTITY, IdentityQuantizer, QuantizerSpec,
                        aqnm_noise_variance, build_one_bit, build_uniform,
                        quantize_complex, quantize_real)
from .valse import ValseConfig, VonMisesPosterior, run_valse

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry", "GroundTruthChannel", "PilotBlock", "doa_to_freq",
    "freq_to_doa", "full_ula", "steering_matrix", "steering_vector",
    "synthesize_channel", "synthesize_observation",
    "FimResult", "fim",
    "ChannelEstimate", "EstimatorConfig", "estimate", "estimate_aqnm",
    "estimate_ls", "estimate_sequential",
    "IDENTITY", "IdentityQuantizer", "QuantizerSpec", "aqnm_noise_variance",
    "build_one_bit", "build_uniform", "quantize_complex", "quantize_real",
    "ValseConfig", "VonMisesPosterior", "run_valse",
    "__version__",
]
