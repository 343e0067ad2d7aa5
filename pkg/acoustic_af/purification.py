"""
Pulse wave purification.

Three stages turn a multi-channel record into one clean 30 s pulse wave:

1. static component elimination: the I/Q trajectory of every channel is cut
   into 2.5 s windows (0.5 s hop). In each window the trajectory is nearly a
   line segment; its principal direction and the slower (diastolic) sense of
   travel locate the side of the arc center, which is then placed eta*d_max
   away from the window centroid. Phase is re-derived about that center.
2. frequency selection: score S = (P + eta_b) / 2 per channel, keep the best.
3. motion artifact removal: 7-level Coif5 stationary wavelet transform,
   reconstructed from bands c4..c7 (0.5-8 Hz) only.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pywt
from scipy.spatial.distance import pdist

from acoustic_af.config import PurificationConfig, QualityConfig
from acoustic_af.errors import (
    AcousticAFError,
    ContractError,
    DegenerateSignalError,
    QualityGateError,
    SelectionError,
)
from acoustic_af.quality import QualityReport, assess
from acoustic_af.records import IQSeries, MultiChannelRecord, PhaseSeries, PulseSegment

logger = logging.getLogger(__name__)

# rotates a direction clockwise by 90 degrees
CLOCKWISE = np.array([[0.0, 1.0], [-1.0, 0.0]])
LOW_LINEARITY = 0.6


@dataclass
class ArcWindow:
    points: np.ndarray
    start: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 3:
            raise ContractError(f"arc window needs >= 3 two-dimensional points, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ContractError("arc window contains non-finite points")


@dataclass
class ArcCenterEstimate:
    center: np.ndarray
    pc1: np.ndarray
    diastolic_dir: np.ndarray
    d_max: float
    eta: float
    explained_ratio: float

    @property
    def arc_direction(self) -> np.ndarray:
        return CLOCKWISE @ self.diastolic_dir


@dataclass
class WindowDecision:
    index: int
    start: int
    end: int
    degenerate: bool = False
    fired: bool = False
    angle: Optional[float] = None
    radial_residual: Optional[float] = None
    explained_ratio: Optional[float] = None
    center: Optional[Tuple[float, float]] = None

    @property
    def low_quality(self) -> bool:
        return self.explained_ratio is not None and self.explained_ratio < LOW_LINEARITY

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "start": self.start,
            "end": self.end,
            "degenerate": self.degenerate,
            "fired": self.fired,
            "angle": self.angle,
            "radial_residual": self.radial_residual,
            "explained_ratio": self.explained_ratio,
            "low_quality": self.low_quality,
            "center": list(self.center) if self.center is not None else None,
        }


@dataclass
class StaticElimination:
    phase: PhaseSeries
    windows: List[WindowDecision]
    passthrough: bool = False

    @property
    def rectified_count(self) -> int:
        return sum(window.fired for window in self.windows)


@dataclass
class SwtDecomposition:
    """Bands c1..c8, finest detail first; c8 is the level-7 approximation"""

    bands: List[np.ndarray]
    wavelet: str = "coif5"
    levels: int = 7
    rate: float = 128.0

    def band_ranges(self) -> List[Tuple[float, float]]:
        nyquist = self.rate / 2
        ranges = [(nyquist / 2 ** k, nyquist / 2 ** (k - 1)) for k in range(1, self.levels + 1)]
        ranges.append((0.0, nyquist / 2 ** self.levels))
        return ranges


@dataclass
class ChannelScore:
    index: int
    carrier: float
    explained_ratio: float
    band_ratio: float
    flags: List[str] = field(default_factory=list)

    @property
    def score(self) -> float:
        return (self.explained_ratio + self.band_ratio) / 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "carrier": self.carrier,
            "P": self.explained_ratio,
            "eta_b": self.band_ratio,
            "S": self.score,
            "flags": self.flags,
        }


def trajectory_vectors(points: np.ndarray) -> np.ndarray:
    """v_i = P_{i+1} - P_i"""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        raise ContractError("trajectory needs at least 2 points")
    return np.diff(points, axis=0)


def _principal_axes(vectors: np.ndarray) -> Tuple[np.ndarray, float]:
    """Leading eigenvector of the uncentered second-moment matrix and its explained ratio"""
    moment = vectors.T @ vectors / len(vectors)
    total = np.trace(moment)
    if total <= 0:
        raise DegenerateSignalError("all trajectory vectors are zero")
    eigenvalues, eigenvectors = np.linalg.eigh(moment)
    pc1 = eigenvectors[:, -1]
    if pc1[0] < 0 or (abs(pc1[0]) < 1e-12 and pc1[1] < 0):
        pc1 = -pc1
    return pc1, float(eigenvalues[-1] / total)


def primary_direction(vectors: np.ndarray) -> np.ndarray:
    return _principal_axes(np.asarray(vectors, dtype=np.float64))[0]


def explained_ratio(vectors: np.ndarray) -> float:
    return _principal_axes(np.asarray(vectors, dtype=np.float64))[1]


def diastolic_direction(
    vectors: np.ndarray, pc1: np.ndarray, previous: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Sense of pc1 along which the trajectory moves slower.

    Falls back to the previous window's direction when one side is empty or
    both sides move equally fast.
    """
    projections = np.asarray(vectors, dtype=np.float64) @ pc1
    forward = projections[projections > 0]
    backward = -projections[projections < 0]
    if len(forward) == 0 or len(backward) == 0 or np.isclose(forward.mean(), backward.mean(), rtol=1e-9, atol=0):
        if previous is None:
            raise DegenerateSignalError("diastolic direction undetermined and no previous window")
        return previous
    return pc1 if forward.mean() < backward.mean() else -pc1


def center_from_direction(points: np.ndarray, direction: np.ndarray, eta: float = 5.0) -> Tuple[np.ndarray, float]:
    """C = centroid + eta * d_max * (d rotated clockwise by 90 degrees)"""
    points = np.asarray(points, dtype=np.float64)
    d_max = float(pdist(points).max()) if len(points) > 1 else 0.0
    return points.mean(axis=0) + eta * d_max * (CLOCKWISE @ direction), d_max


def estimate_center(
    window: ArcWindow, eta: float = 5.0, previous_direction: Optional[np.ndarray] = None
) -> ArcCenterEstimate:
    vectors = trajectory_vectors(window.points)
    pc1, ratio = _principal_axes(vectors)
    direction = diastolic_direction(vectors, pc1, previous_direction)
    center, d_max = center_from_direction(window.points, direction, eta)
    return ArcCenterEstimate(
        center=center, pc1=pc1, diastolic_dir=direction, d_max=d_max, eta=eta, explained_ratio=ratio
    )


def window_bounds(n: int, rate: float, config: Optional[PurificationConfig] = None) -> List[Tuple[int, int]]:
    """Sliding windows; a short tail is merged into the last full window"""
    config = config or PurificationConfig()
    size = int(round(config.window_seconds * rate))
    hop = int(round(config.hop_seconds * rate))
    if n < size:
        raise ContractError(f"need at least one {config.window_seconds} s window ({size} samples), got {n}")
    starts = list(range(0, n - size + 1, hop))
    bounds = [(start, start + size) for start in starts]
    bounds[-1] = (starts[-1], n)
    return bounds


def _angle_between(a: np.ndarray, b: np.ndarray) -> float:
    norms = np.linalg.norm(a) * np.linalg.norm(b)
    if norms == 0:
        return float(np.pi)
    return float(np.arccos(np.clip(np.dot(a, b) / norms, -1.0, 1.0)))


def _radial_residual(points: np.ndarray, center: np.ndarray, span: float) -> float:
    """Spread of the distances to center, relative to the window span"""
    if span <= 0:
        return 0.0
    return float(np.std(np.linalg.norm(points - center, axis=1)) / span)


def _angles_about(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    offset = points - center
    return np.unwrap(np.arctan2(offset[:, 1], offset[:, 0]))


def _stitch_phase(points: np.ndarray, regions: List[Tuple[int, int]], centers: List[np.ndarray], fade: int) -> np.ndarray:
    """Phase about a piecewise-constant center, continuous across junctions"""
    phase = np.empty(len(points))
    previous = None
    for (lo, hi), center in zip(regions, centers):
        if previous is None:
            phase[lo:hi] = _angles_about(points[lo:hi], center)
            previous = center
            continue
        new = _angles_about(points[lo - 1:hi], center)
        new += phase[lo - 1] - new[0]
        phase[lo:hi] = new[1:]
        if not np.array_equal(center, previous):
            old = _angles_about(points[lo - 1:min(hi, lo + fade)], previous)
            old += phase[lo - 1] - old[0]
            span = len(old) - 1
            weight = np.arange(1, span + 1) / (span + 1)
            phase[lo:lo + span] = (1 - weight) * old[1:] + weight * new[1:span + 1]
        previous = center
    return phase


def run_static_elimination(iq: IQSeries, config: Optional[PurificationConfig] = None) -> StaticElimination:
    """
    Sliding-window arc center tracking with the angular gate.

    The center in use starts at the I/Q origin. A window replaces it with its
    own estimate only when the direction from the window centroid to the center
    in use differs from the estimated arc-center direction by more than the
    gate angle, and the center in use does not already fit the window: a center
    on the concave side whose distances to the window points spread by at most
    radial_tolerance * d_max is kept.
    """
    config = config or PurificationConfig()
    points = iq.points
    bounds = window_bounds(len(points), iq.rate, config)
    regions = [(start, bounds[k + 1][0]) for k, (start, _) in enumerate(bounds[:-1])]
    regions.append((bounds[-1][0], len(points)))

    current = np.zeros(2)
    previous_direction = None
    centers: List[np.ndarray] = []
    decisions: List[WindowDecision] = []
    for index, (start, end) in enumerate(bounds):
        decision = WindowDecision(index=index, start=start, end=end)
        window_points = points[start:end]
        try:
            estimate = estimate_center(ArcWindow(window_points, start), config.eta, previous_direction)
        except (DegenerateSignalError, ContractError):
            decision.degenerate = True
            decisions.append(decision)
            centers.append(current)
            continue
        previous_direction = estimate.diastolic_dir
        actual = current - window_points.mean(axis=0)
        decision.angle = _angle_between(actual, estimate.arc_direction)
        decision.explained_ratio = estimate.explained_ratio
        decision.radial_residual = _radial_residual(window_points, current, estimate.d_max)
        # a center on the concave side that the arc already circles stays
        fits = decision.radial_residual <= config.radial_tolerance and decision.angle <= np.pi / 2
        if decision.angle > config.gate_angle and not fits:
            current = estimate.center
            decision.fired = True
        decision.center = (float(current[0]), float(current[1]))
        decisions.append(decision)
        centers.append(current)

    if all(decision.degenerate for decision in decisions):
        logger.warning("carrier %s: every window degenerate, static elimination passed through", iq.carrier)
        phase = np.unwrap(np.arctan2(iq.q, iq.i))
        return StaticElimination(
            phase=PhaseSeries(phase=phase, rate=iq.rate, carrier=iq.carrier), windows=decisions, passthrough=True
        )

    phase = _stitch_phase(points, regions, centers, config.fade_samples)
    logger.debug("carrier %s: %d of %d windows rectified", iq.carrier,
                 sum(d.fired for d in decisions), len(decisions))
    return StaticElimination(phase=PhaseSeries(phase=phase, rate=iq.rate, carrier=iq.carrier), windows=decisions)


def eliminate_static(iq: IQSeries, config: Optional[PurificationConfig] = None) -> PhaseSeries:
    return run_static_elimination(iq, config).phase


def pca_explained_ratio(iq: IQSeries, config: Optional[PurificationConfig] = None) -> float:
    """Mean first-component explained ratio of the trajectory vectors over all windows"""
    config = config or PurificationConfig()
    points = iq.points
    ratios = []
    for start, end in window_bounds(len(points), iq.rate, config):
        try:
            ratios.append(explained_ratio(trajectory_vectors(points[start:end])))
        except DegenerateSignalError:
            continue
    if not ratios:
        raise DegenerateSignalError(f"carrier {iq.carrier}: every window degenerate")
    return float(np.mean(ratios))


def band_energy_ratio(phase: PhaseSeries, quality: Optional[QualityConfig] = None) -> float:
    """Energy in 0.5-5 Hz over energy above 0.2 Hz, from the de-meaned periodogram"""
    quality = quality or QualityConfig()
    values = phase.phase - phase.phase.mean()
    power = np.abs(np.fft.rfft(values)) ** 2
    freqs = np.fft.rfftfreq(len(values), d=1.0 / phase.rate)
    total = power[freqs > quality.ignored_band].sum()
    if total <= 1e-12 * power.sum() or total == 0:
        raise DegenerateSignalError("no energy above the ignored low band")
    low, high = quality.cardiac_band
    return float(power[(freqs >= low) & (freqs <= high)].sum() / total)


def argmax_score(scores: Sequence[Optional[float]], carriers: Sequence[float]) -> int:
    """Index of the highest score; ties go to the lowest carrier frequency"""
    candidates = [(s, c, i) for i, (s, c) in enumerate(zip(scores, carriers)) if s is not None]
    if not candidates:
        raise SelectionError("no valid channel to select")
    best = max(s for s, _, _ in candidates)
    return min((c, i) for s, c, i in candidates if s == best)[1]


def score_channel(index: int, iq: IQSeries, phase: PhaseSeries,
                  config: Optional[PurificationConfig] = None,
                  quality: Optional[QualityConfig] = None) -> ChannelScore:
    flags = []
    try:
        ratio = pca_explained_ratio(iq, config)
    except DegenerateSignalError:
        ratio = 0.0
        flags.append("P degenerate")
    try:
        band = band_energy_ratio(phase, quality)
    except DegenerateSignalError:
        band = 0.0
        flags.append("eta_b degenerate")
    return ChannelScore(index=index, carrier=iq.carrier, explained_ratio=ratio, band_ratio=band, flags=flags)


def select_channel(
    record: MultiChannelRecord,
    phases: Optional[Dict[int, PhaseSeries]] = None,
    config: Optional[PurificationConfig] = None,
    quality: Optional[QualityConfig] = None,
) -> int:
    """
    Channel index with the highest S = (P + eta_b) / 2.

    phases maps channel index to its statically corrected phase; when absent,
    static elimination runs here.
    """
    scores = channel_scores(record, phases, config, quality)
    values: List[Optional[float]] = [None] * len(record.channels)
    for score in scores:
        values[score.index] = score.score
    return argmax_score(values, record.carriers)


def channel_scores(
    record: MultiChannelRecord,
    phases: Optional[Dict[int, PhaseSeries]] = None,
    config: Optional[PurificationConfig] = None,
    quality: Optional[QualityConfig] = None,
) -> List[ChannelScore]:
    scores = []
    for index, channel in enumerate(record.channels):
        if not channel.valid or channel.iq is None:
            continue
        phase = phases.get(index) if phases is not None else None
        if phase is None:
            phase = eliminate_static(channel.iq, config)
        scores.append(score_channel(index, channel.iq, phase, config, quality))
    if not scores:
        raise SelectionError("record has no valid channel")
    return scores


def swt_decompose(segment: np.ndarray, config: Optional[PurificationConfig] = None, rate: float = 128.0) -> SwtDecomposition:
    config = config or PurificationConfig()
    values = np.asarray(segment, dtype=np.float64)
    block = 2 ** config.levels
    if len(values) % block:
        raise ContractError(
            f"SWT needs a length that is a multiple of {block}, got {len(values)}; "
            f"pad or trim to {len(values) // block * block} or {(len(values) // block + 1) * block} samples"
        )
    # [cA7, cD7, cD6, ..., cD1]
    coeffs = pywt.swt(values, config.wavelet, level=config.levels, trim_approx=True, norm=True)
    details = [np.asarray(c) for c in coeffs[:0:-1]]
    return SwtDecomposition(bands=details + [np.asarray(coeffs[0])], wavelet=config.wavelet,
                            levels=config.levels, rate=rate)


def swt_reconstruct(decomposition: SwtDecomposition, keep: Optional[Iterable[int]] = None) -> np.ndarray:
    """Inverse SWT from the kept 1-based bands; every other band is zeroed"""
    kept = set(range(1, len(decomposition.bands) + 1)) if keep is None else set(keep)
    bands = [band if number in kept else np.zeros_like(band)
             for number, band in enumerate(decomposition.bands, start=1)]
    coeffs = [bands[-1]] + bands[-2::-1]
    return np.asarray(pywt.iswt(coeffs, decomposition.wavelet, norm=True))


def remove_motion_artifacts(
    segment: np.ndarray, config: Optional[PurificationConfig] = None, rate: int = 128, **segment_fields: Any
) -> PulseSegment:
    config = config or PurificationConfig()
    decomposition = swt_decompose(segment, config, rate)
    low, high = config.kept_bands
    cleaned = swt_reconstruct(decomposition, keep=range(low, high + 1))
    return PulseSegment(samples=cleaned, rate=rate, **segment_fields)


def purify(
    record: MultiChannelRecord,
    quality_report: Optional[QualityReport] = None,
    force: bool = False,
    config: Optional[PurificationConfig] = None,
    quality: Optional[QualityConfig] = None,
    static_elimination: bool = True,
    artifact_removal: bool = True,
) -> PulseSegment:
    """
    Quality-gated record -> one purified 3840-sample pulse wave.

    The two switches skip a stage; they exist for ablation runs and are
    recorded in the provenance.
    """
    config = config or PurificationConfig()
    quality = quality or QualityConfig()
    if quality_report is None:
        quality_report = assess(record, quality)
    if not quality_report.passed and not force:
        raise QualityGateError("record failed the quality gate: " + "; ".join(quality_report.reasons))

    phases: Dict[int, PhaseSeries] = {}
    eliminations: Dict[int, StaticElimination] = {}
    for index, channel in enumerate(record.channels):
        if not channel.valid or channel.iq is None:
            continue
        if static_elimination:
            try:
                eliminations[index] = run_static_elimination(channel.iq, config)
            except AcousticAFError as e:
                logger.warning("carrier %s: static elimination failed: %s", channel.carrier, e)
                continue
            phases[index] = eliminations[index].phase
        elif channel.phase is not None:
            phases[index] = channel.phase

    if not phases:
        raise SelectionError("record has no channel left after static elimination")
    scores = [score_channel(index, record.channels[index].iq, phase, config, quality)
              for index, phase in phases.items()]
    values: List[Optional[float]] = [None] * len(record.channels)
    for score in scores:
        values[score.index] = score.score
    chosen = argmax_score(values, record.carriers)
    carrier = record.channels[chosen].carrier

    samples = phases[chosen].phase
    if len(samples) != record.segment_length:
        raise ContractError(f"purified segment has {len(samples)} samples, expected {record.segment_length}")

    trace: Dict[str, Any] = {
        "chosen_index": chosen,
        "chosen_carrier": carrier,
        "scores": [score.to_dict() for score in scores],
        "static_elimination": static_elimination,
        "artifact_removal": artifact_removal,
        "forced": bool(force and not quality_report.passed),
    }
    if static_elimination:
        elimination = eliminations[chosen]
        trace["rectified_windows"] = elimination.rectified_count
        trace["passthrough"] = elimination.passthrough
        trace["windows"] = [window.to_dict() for window in elimination.windows]
    provenance = {**record.provenance, "purification": trace}

    if artifact_removal:
        return remove_motion_artifacts(samples, config, record.rate, source_carrier=carrier,
                                       label=record.label, provenance=provenance)
    return PulseSegment(samples=samples - samples.mean(), rate=record.rate, source_carrier=carrier,
                        label=record.label, provenance=provenance)
