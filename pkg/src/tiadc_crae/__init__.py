"""Blind timing-mismatch compensation for a two-channel time-interleaved sampler.

Modules: ``signals`` (waveforms), ``sampler`` (TI-ADC simulator), ``analysis``
(spectra and spur metrics), ``calib`` (classical baseline), ``nncore``
(autodiff engine), ``crae`` (the network) and ``pipeline`` (experiments).
"""
__version__ = "0.1.0"

from .calib import SkewCalibrator
from .crae import CRAECompensator, CraeConfig, Variant

__all__ = ["__version__", "SkewCalibrator", "CRAECompensator", "CraeConfig", "Variant"]
