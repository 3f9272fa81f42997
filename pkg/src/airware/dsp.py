"""Spectrogram front end.

Windowing, a radix-2 FFT, dB magnitudes, extraction of the band around
the ultrasound carrier, resampling of IR events onto the frame grid,
dataset normalization, and the exhaustive STFT parameter search.

The transform is implemented in-repo (iterative Cooley-Tukey over
power-of-two lengths, vectorized across frames) so it can be checked
against a naive O(n^2) DFT with no external FFT dependency.
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .core import Dataset, FeatureTensor, PipelineConfig, SampleRecord, Waveform
from .errors import BandOutOfRange, ShapeMismatch, TooShort, ZeroVarianceWarning

DB_FLOOR_EPS = 1e-12

_bitrev_cache: dict[int, np.ndarray] = {}
_twiddle_cache: dict[int, np.ndarray] = {}


def _bit_reversal(n: int) -> np.ndarray:
    perm = _bitrev_cache.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.intp)
        for _ in range(bits):
            perm = (perm << 1) | (idx & 1)
            idx >>= 1
        _bitrev_cache[n] = perm
    return perm


def fft_radix2(x) -> np.ndarray:
    """DFT along the last axis; length must be a power of two.

    Iterative decimation-in-time: bit-reversal permutation followed by
    log2(n) butterfly passes, each vectorized over all leading axes.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError("fft length must be a power of two, got %d" % n)
    y = np.ascontiguousarray(x[..., _bit_reversal(n)], dtype=np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddle_cache.get(size)
        if tw is None:
            tw = np.exp(-2j * np.pi * np.arange(half) / size)
            _twiddle_cache[size] = tw
        v = y.reshape(-1, n // size, size)
        even = v[..., :half]
        odd = v[..., half:] * tw
        upper = even + odd
        lower = even - odd
        v[..., :half] = upper
        v[..., half:] = lower
        size *= 2
    return y


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46*cos(2*pi*k/(n-1)), k = 0..n-1."""
    if n < 2:
        raise ValueError("window length must be >= 2")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


@dataclass(frozen=True)
class Spectrogram:
    """dB magnitudes on a [frames x bins] grid (one-sided spectrum)."""

    magnitudes_db: np.ndarray
    bin_hz: float
    frame_hop_s: float
    carrier_bin: int
    frame_offset_s: float  # center time of frame 0

    @property
    def n_frames(self) -> int:
        return self.magnitudes_db.shape[0]

    @property
    def n_bins(self) -> int:
        return self.magnitudes_db.shape[1]

    def frame_times(self) -> np.ndarray:
        """Center time of every frame, in seconds."""
        return self.frame_offset_s + self.frame_hop_s * np.arange(self.n_frames)


def stft(wave: Waveform, cfg: PipelineConfig) -> Spectrogram:
    """Hamming-windowed short-time transform, one-sided dB magnitudes.

    Frame count F = floor((len - window)/hop) + 1; dB is
    20*log10(|X| + 1e-12) so silence maps to a finite floor.
    """
    x = wave.samples
    n = cfg.stft_window
    if len(x) < n:
        raise TooShort("waveform has %d samples, window needs %d" % (len(x), n))
    hop = cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[::hop]
    spectrum = fft_radix2(frames * hamming_window(n))
    mags = np.abs(spectrum[:, : n // 2 + 1])
    return Spectrogram(
        magnitudes_db=20.0 * np.log10(mags + DB_FLOOR_EPS),
        bin_hz=wave.sample_rate_hz / n,
        frame_hop_s=hop / wave.sample_rate_hz,
        carrier_bin=cfg.carrier_bin,
        frame_offset_s=(n / 2.0) / wave.sample_rate_hz,
    )


def extract_band(spec: Spectrogram, half_width: int) -> np.ndarray:
    """Bins within half_width of the carrier, the carrier itself removed.

    Column order is ascending frequency: [c-hw, c) then (c, c+hw].
    """
    c = spec.carrier_bin
    if c - half_width < 0 or c + half_width >= spec.n_bins:
        raise BandOutOfRange(
            "band [%d, %d] outside spectrum of %d bins"
            % (c - half_width, c + half_width, spec.n_bins)
        )
    cols = np.r_[c - half_width : c, c + 1 : c + half_width + 1]
    return spec.magnitudes_db[:, cols]


def ir_resample(ir, frame_grid) -> np.ndarray:
    """Scatter (speed, angle) events onto the nearest frame centers.

    Rows with no event stay (0, 0); when two events land on one frame
    the faster one wins.
    """
    grid = np.asarray(frame_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) == 0:
        raise ShapeMismatch("frame grid must be a nonempty 1-D array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("frame grid must be strictly increasing")
    out = np.zeros((len(grid), 2), dtype=np.float64)
    events = sorted(ir.events, key=lambda e: e.speed)  # slowest first
    mids = (grid[1:] + grid[:-1]) / 2.0
    for ev in events:
        row = int(np.searchsorted(mids, ev.time_s))
        out[row, 0] = ev.speed
        out[row, 1] = ev.angle_deg
    return out


def featurize_segment(wave: Waveform, ir, cfg: PipelineConfig) -> FeatureTensor:
    """One segment's classifier input: doppler band + frame-aligned IR."""
    spec = stft(wave, cfg)
    return FeatureTensor(
        doppler=extract_band(spec, cfg.band_half_width),
        ir=ir_resample(ir, spec.frame_times()),
    )


@dataclass(frozen=True)
class NormalizationStats:
    """Fitted standardization parameters plus the records they came from.

    `fitted_on` lets evaluation assert that no test record leaked into
    the fit. doppler stats are scalars unless per_column is set.
    """

    doppler_mean: np.ndarray
    doppler_std: np.ndarray
    ir_mean: np.ndarray
    ir_std: np.ndarray
    per_column: bool
    fitted_on: frozenset


def _safe_std(x, axis=None) -> np.ndarray:
    std = np.std(x, axis=axis)
    bad = std < 1e-12
    if np.any(bad):
        warnings.warn("zero-variance feature column(s); std clamped to 1",
                      ZeroVarianceWarning, stacklevel=3)
        std = np.where(bad, 1.0, std)
    return np.atleast_1d(np.asarray(std, dtype=np.float64))


def fit_normalization(ds: Dataset) -> NormalizationStats:
    if len(ds) < 2:
        raise ValueError("need at least 2 records to fit normalization")
    dop = np.stack([r.features.doppler for r in ds.records])  # [n, F, B]
    ir = np.stack([r.features.ir for r in ds.records])  # [n, F, 2]
    if ds.config.per_column_norm:
        d_mean = dop.mean(axis=(0, 1))
        d_std = _safe_std(dop.reshape(-1, dop.shape[-1]), axis=0)
    else:
        # the band is one physical quantity: one scale for all columns
        d_mean = np.atleast_1d(dop.mean())
        d_std = _safe_std(dop)
    ir_flat = ir.reshape(-1, 2)
    return NormalizationStats(
        doppler_mean=np.asarray(d_mean, dtype=np.float64),
        doppler_std=d_std,
        ir_mean=ir_flat.mean(axis=0),
        ir_std=_safe_std(ir_flat, axis=0),
        per_column=ds.config.per_column_norm,
        fitted_on=frozenset(r.key for r in ds.records),
    )


def _apply_stats(feats: FeatureTensor, stats: NormalizationStats) -> FeatureTensor:
    return FeatureTensor(
        doppler=(feats.doppler - stats.doppler_mean) / stats.doppler_std,
        ir=(feats.ir - stats.ir_mean) / stats.ir_std,
    )


def denormalize(feats: FeatureTensor, stats: NormalizationStats) -> FeatureTensor:
    return FeatureTensor(
        doppler=feats.doppler * stats.doppler_std + stats.doppler_mean,
        ir=feats.ir * stats.ir_std + stats.ir_mean,
    )


def normalize_dataset(ds: Dataset, stats: NormalizationStats | None = None):
    """Standardize features to zero mean, unit deviation.

    With `stats` given they are applied as-is (the test-split path);
    otherwise they are fitted on `ds` first. Returns (dataset, stats).
    """
    if stats is None:
        stats = fit_normalization(ds)
    records = tuple(
        dataclasses.replace(r, features=_apply_stats(r.features, stats))
        for r in ds.records
    )
    return Dataset(ds.config, records), stats


def refeaturize(ds: Dataset, cfg: PipelineConfig) -> Dataset:
    """Rebuild every record's features from its stored raw signals."""
    records = []
    for rec in ds.records:
        if rec.wave is None or rec.ir_stream is None:
            raise ValueError("record %r carries no raw signals" % (rec.key,))
        records.append(
            dataclasses.replace(rec, features=featurize_segment(rec.wave, rec.ir_stream, cfg))
        )
    return Dataset(cfg, tuple(records))


def stft_grid_search(ds_raw: Dataset, evaluator) -> list[dict]:
    """Score every (window, overlap, half_width) cell of the search grid.

    `evaluator` maps a featurized Dataset to a score in [0, 1]. A cell
    whose featurization or evaluation raises is kept in the table with
    ok=False. Rows come back ranked best first, failures last.
    """
    from .core import HALF_WIDTH_GRID, OVERLAP_GRID, WINDOW_GRID

    rows = []
    for window, overlap, hw in itertools.product(WINDOW_GRID, OVERLAP_GRID, HALF_WIDTH_GRID):
        cfg = dataclasses.replace(
            ds_raw.config, stft_window=window, stft_overlap=overlap, band_half_width=hw
        )
        row = {"window": window, "overlap": overlap, "half_width": hw,
               "score": float("nan"), "ok": False, "error": ""}
        try:
            score = float(evaluator(refeaturize(ds_raw, cfg)))
            row.update(score=score, ok=True)
        except Exception as exc:  # cell failure must not kill the sweep
            row["error"] = "%s: %s" % (type(exc).__name__, exc)
        rows.append(row)
    rows.sort(key=lambda r: (not r["ok"], -r["score"] if r["ok"] else 0.0))
    return rows
