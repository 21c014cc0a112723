"""Microphone-array voice enhancement pipeline.

A tabletop 4-microphone hearing-assistance stack: per-frame sound-source
localization (SRP-PHAT), delay-and-sum beamforming with click-free
retargeting, a switchable speech-enhancement chain (AEC, noise suppression,
comfort noise, AGC), multi-source tracking with automatic lead-speaker
selection, device-style six-channel output and LED-ring state, a room
simulator for ground-truth test scenes, and a line-delimited control/telemetry
protocol served over TCP and WebSocket for live tuning consoles.
"""

from hearbeam.dsp import AudioFormat, MultiChannelFrame, SpectralFrame

__version__ = "0.1.0"

__all__ = ["AudioFormat", "MultiChannelFrame", "SpectralFrame", "__version__"]
