"""Cutting continuous recordings into fixed-length gesture segments.

Two modes mirror the two collection protocols: `segment_by_ir` demands a
proximity-sensor activation, `segment_freeform` also accepts a sudden
energy rise in the spectrogram bins adjacent to the carrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IrStream, PipelineConfig, Waveform
from .dsp import Spectrogram, stft

TRIGGER_IR = "ir"
TRIGGER_ENERGY = "energy"

ENERGY_BASELINE_FRAMES = 10


@dataclass(frozen=True)
class SegmentTrigger:
    """A moment worth cutting a segment around, and what noticed it."""

    time_s: float
    kind: str  # "ir" or "energy"


def _merge_triggers(candidates, half_len_s: float) -> list[SegmentTrigger]:
    """Greedy clustering: triggers inside one segment window collapse.

    The anchor of a cluster is its first IR trigger when one exists
    (coincident IR and energy ties resolve to IR), otherwise its first
    trigger of any kind.
    """
    order = sorted(candidates, key=lambda c: (c.time_s, c.kind != TRIGGER_IR))
    merged = []
    i = 0
    while i < len(order):
        t0 = order[i].time_s
        cluster = [c for c in order[i:] if c.time_s <= t0 + half_len_s]
        ir_hits = [c for c in cluster if c.kind == TRIGGER_IR]
        anchor = ir_hits[0] if ir_hits else cluster[0]
        merged.append(anchor)
        horizon = anchor.time_s + half_len_s
        while i < len(order) and order[i].time_s <= horizon:
            i += 1
    return merged


def cut_segment(wave: Waveform, ir: IrStream, center_s: float, cfg: PipelineConfig):
    """Extract the window [center-h, center+h], zero-padded at the edges.

    IR events inside the window come along with times rebased to the
    segment start. The output always has exactly cfg.segment_samples
    samples.
    """
    sr = wave.sample_rate_hz
    n = cfg.segment_samples
    start = int(round((center_s - cfg.buffer_half_len_s) * sr))
    out = np.zeros(n, dtype=np.float64)
    src_lo = max(start, 0)
    src_hi = min(start + n, len(wave.samples))
    if src_hi > src_lo:
        out[src_lo - start : src_hi - start] = wave.samples[src_lo:src_hi]
    start_s = start / sr
    end_s = start_s + cfg.segment_len_s
    events = tuple(
        e._replace(time_s=e.time_s - start_s)
        for e in ir.events
        if start_s <= e.time_s < end_s
    )
    return Waveform(out, sr), IrStream(events, cfg.segment_len_s)


def segment_by_ir(wave: Waveform, ir: IrStream, cfg: PipelineConfig):
    """One segment per IR activation cluster, anchored at its first event."""
    candidates = [SegmentTrigger(e.time_s, TRIGGER_IR) for e in ir.events]
    triggers = _merge_triggers(candidates, cfg.buffer_half_len_s)
    return [cut_segment(wave, ir, t.time_s, cfg) for t in triggers]


def detect_energy_event(
    spec: Spectrogram, threshold_db: float, refractory_s: float = 2.5
) -> list[SegmentTrigger]:
    """Find frames where the bins beside the carrier jump over baseline.

    Signal = mean dB of bins (carrier-1, carrier+1); baseline = median of
    the signal over the preceding ENERGY_BASELINE_FRAMES frames. A frame
    fires when signal - baseline >= threshold_db; after a hit, no frame
    within refractory_s may fire again.
    """
    if spec.n_frames < 2:
        raise ValueError("need at least 2 frames to detect energy events")
    c = spec.carrier_bin
    signal = spec.magnitudes_db[:, [c - 1, c + 1]].mean(axis=1)
    times = spec.frame_times()
    triggers = []
    blocked_until = -np.inf
    for i in range(1, spec.n_frames):
        if times[i] < blocked_until:
            continue
        baseline = np.median(signal[max(0, i - ENERGY_BASELINE_FRAMES) : i])
        if signal[i] - baseline >= threshold_db:
            triggers.append(SegmentTrigger(float(times[i]), TRIGGER_ENERGY))
            blocked_until = times[i] + refractory_s
    return triggers


def segment_freeform(wave: Waveform, ir: IrStream, cfg: PipelineConfig):
    """Segments around IR activations or energy jumps, whichever fires.

    Candidate triggers from both detectors are merged within one segment
    window; IR wins ties (see _merge_triggers).
    """
    candidates = [SegmentTrigger(e.time_s, TRIGGER_IR) for e in ir.events]
    if len(wave.samples) >= cfg.stft_window:
        spec = stft(wave, cfg)
        if spec.n_frames >= 2:
            candidates += detect_energy_event(
                spec, cfg.energy_threshold_db, refractory_s=cfg.segment_len_s
            )
    triggers = _merge_triggers(candidates, cfg.buffer_half_len_s)
    return [cut_segment(wave, ir, t.time_s, cfg) for t in triggers]
