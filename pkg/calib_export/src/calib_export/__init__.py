"""Calibration exporter: transformer checkpoints -> .fgt tensor files.

Extracts, per linear layer, the weight matrix, per-element weight Fisher
(mean squared gradients over a calibration set), per-input-channel
activation Fisher, per-channel mean squared activation magnitudes, and the
captured activations themselves, then writes a manifest the fgmp CLI can
calibrate/quantize/simulate from directly.
"""

__version__ = "0.1.0"
