"""Synthetic benchmark for in-air gesture recognition.

A desk-scale pipeline that emits ultrasound, simulates the Doppler
reflections and IR proximity events of hand gestures, extracts
spectrogram features, and evaluates neural and classical classifiers
under leave-one-subject-out, personalized, and user-calibrated
cross-validation.
"""

from .core import (
    Dataset,
    FeatureTensor,
    GestureClass,
    GestureSet,
    IrEvent,
    IrStream,
    PipelineConfig,
    SampleRecord,
    Waveform,
    derive_rng,
    gesture_set_members,
    validate_config,
)

__all__ = [
    "Dataset",
    "FeatureTensor",
    "GestureClass",
    "GestureSet",
    "IrEvent",
    "IrStream",
    "PipelineConfig",
    "SampleRecord",
    "Waveform",
    "derive_rng",
    "gesture_set_members",
    "validate_config",
]

__version__ = "0.1.0"
