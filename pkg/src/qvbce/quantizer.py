"""B-bit scalar quantizers applied separately to real and imaginary parts.

Cells follow the half-open convention [t_b, t_{b+1}); code b means the input
fell in cell b.  The uniform quantizer covers the dynamic range
[-3 sigma_z/sqrt(2), 3 sigma_z/sqrt(2)] with step 3 sigma_z / 2^{B-0.5}, which
makes the thresholds symmetric about 0 and nested across bit depths (each B+1
threshold set refines the B set).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantizerSpec:
    bit_depth: int
    thresholds: np.ndarray   # 2^B - 1 finite, strictly increasing
    representations: np.ndarray  # 2^B cell representatives

    def __post_init__(self):
        thr = np.asarray(self.thresholds, dtype=float)
        rep = np.asarray(self.representations, dtype=float)
        object.__setattr__(self, "thresholds", thr)
        object.__setattr__(self, "representations", rep)
        n_cells = 2 ** self.bit_depth
        if thr.size != n_cells - 1 or np.any(np.diff(thr) <= 0):
            raise ValueError("need 2^B - 1 strictly increasing thresholds")
        if rep.size != n_cells:
            raise ValueError("need 2^B representation values")

    @property
    def n_cells(self):
        return 2 ** self.bit_depth

    @property
    def edges(self):
        """Cell edges with the infinite outer bounds prepended/appended."""
        return np.concatenate(([-np.inf], self.thresholds, [np.inf]))


class IdentityQuantizer:
    """Infinite-resolution pass-through; quantize_complex returns the raw parts."""

    bit_depth = None

    def __repr__(self):
        return "IdentityQuantizer()"


IDENTITY = IdentityQuantizer()


def build_uniform(bit_depth, sigma_z):
    """Uniform B-bit quantizer matched to input standard deviation sigma_z."""
    if bit_depth < 2:
        raise ValueError("uniform quantizer needs B >= 2; use build_one_bit")
    if sigma_z <= 0:
        raise ValueError("sigma_z must be positive")
    delta = 3.0 * sigma_z / 2 ** (bit_depth - 0.5)
    lo = -3.0 * sigma_z / np.sqrt(2.0)
    k = np.arange(1, 2 ** bit_depth)
    thresholds = lo + k * delta
    mids = 0.5 * (thresholds[:-1] + thresholds[1:])
    reps = np.concatenate(([thresholds[0] - delta / 2], mids, [thresholds[-1] + delta / 2]))
    return QuantizerSpec(bit_depth=bit_depth, thresholds=thresholds, representations=reps)


def build_one_bit():
    """Sign quantizer: single threshold at 0, representations +-1 (scaled at use site)."""
    return QuantizerSpec(bit_depth=1, thresholds=np.array([0.0]),
                         representations=np.array([-1.0, 1.0]))


def quantize_real(spec, v):
    """Cell index for each real input: b with v in [t_b, t_{b+1})."""
    v = np.asarray(v, dtype=float)
    if np.any(np.isnan(v)):
        raise ValueError("NaN input to quantizer")
    return np.searchsorted(spec.thresholds, v, side="right")


def quantize_complex(spec, v):
    """Quantize real and imaginary parts independently; returns (codes_re, codes_im).

    The identity quantizer returns the raw parts unchanged (float arrays).
    """
    v = np.asarray(v, dtype=complex)
    if isinstance(spec, IdentityQuantizer):
        if np.any(np.isnan(v)):
            raise ValueError("NaN input to quantizer")
        return v.real.copy(), v.imag.copy()
    return quantize_real(spec, v.real), quantize_real(spec, v.imag)


def interval_of(spec, code):
    """Half-open cell (t_b, t_{b+1}) for a code; outer cells reach +-inf."""
    code = np.asarray(code)
    if np.any(code < 0) or np.any(code >= spec.n_cells):
        raise ValueError("code out of range")
    edges = spec.edges
    return edges[code], edges[code + 1]


def representation_values(spec, codes):
    return spec.representations[np.asarray(codes)]


def aqnm_noise_variance(bit_depth, sigma_z2):
    """Additive quantization-noise variance 3 sigma_z^2 / 4^B (real+imag total)."""
    if bit_depth < 1 or sigma_z2 <= 0:
        raise ValueError("need B >= 1 and sigma_z2 > 0")
    return 3.0 * sigma_z2 / 4.0 ** bit_depth
