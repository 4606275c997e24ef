"""Numerical core of a flow-based end-to-end TTS model at desk scale.

Modules: :mod:`autograd` (reverse-mode tensors), :mod:`dsp` (STFT and mel),
:mod:`alignment` (monotonic alignment search), :mod:`flows` (coupling flows),
:mod:`duration` (stochastic duration predictor), :mod:`losses` and :mod:`cli`.
"""

__version__ = "0.1.0"
