"""
Multi-carrier probe synthesis and wrist channel simulation.

The simulator produces labeled recordings with a known ground-truth phase
track so every later stage can be checked against it.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy import signal

from acoustic_af.config import ChannelScenario, ProbeConfig, read_yaml
from acoustic_af.errors import ConfigurationError, ScenarioParseError
from acoustic_af.records import AudioBuffer, PhaseSeries, Rhythm

logger = logging.getLogger(__name__)

RR_MIN = 0.3
RR_MAX = 2.0
NSR_CV = 0.03
AF_CV = 0.25
NSR_CV_MAX = 0.1
AF_CV_MIN = 0.2
MAX_DRAWS = 100
MANIFEST_NAME = "manifest.jsonl"

# Pulse template proportions, as fractions of the RR interval
UPSTROKE_FRACTION = 0.3
DECAY_TAU_FRACTION = 0.3

SCENARIO_PRESETS: Dict[str, Dict[str, Any]] = {
    "clean": dict(phase_amplitude=0.3, static_offset=(0.2, 0.0), drift_amplitude=0.05,
                  drift_frequency=0.1, noise_snr=20.0),
    "blurred": dict(phase_amplitude=0.3, static_offset=(-1.45, 3.0), noise_snr=20.0),
    "inverted": dict(phase_amplitude=0.3, static_offset=(0.3, 0.0), invert=True, noise_snr=20.0),
    "noise_only": dict(phase_amplitude=0.0, noise_snr=0.0),
    "motion_heavy": dict(phase_amplitude=0.3, static_offset=(0.2, 0.0), drift_amplitude=1.2,
                         drift_frequency=0.35, noise_snr=20.0),
    "talking": dict(phase_amplitude=0.3, static_offset=(0.2, 0.0), noise_snr=20.0, interference_snr=0.0),
    "music": dict(phase_amplitude=0.3, static_offset=(0.2, 0.0), noise_snr=20.0, interference_snr=0.0,
                  interference_rate=2.0),
}


@dataclass
class BeatTrain:
    rr_intervals: np.ndarray
    rhythm_label: Rhythm
    seed: int
    duration: float
    warnings: List[str] = field(default_factory=list)

    @property
    def beat_onsets(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.rr_intervals)[:-1]])

    def coefficient_of_variation(self) -> float:
        return float(np.std(self.rr_intervals) / np.mean(self.rr_intervals))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rr_intervals": [float(rr) for rr in self.rr_intervals],
            "rhythm_label": self.rhythm_label.value,
            "seed": self.seed,
            "duration": self.duration,
            "warnings": list(self.warnings),
        }


def scenario_preset(name: str, **overrides: Any) -> ChannelScenario:
    if name not in SCENARIO_PRESETS:
        raise ConfigurationError("known scenario preset", f"{name!r} not in {sorted(SCENARIO_PRESETS)}")
    return ChannelScenario(**{**SCENARIO_PRESETS[name], **overrides})


def carrier_phase(carrier: float, n: int, sample_rate: int, start_sample: int = 0) -> np.ndarray:
    """2*pi*f*k/fs with exact argument reduction for integral carriers"""
    k = np.arange(start_sample, start_sample + n, dtype=np.float64)
    if float(carrier).is_integer():
        return 2 * np.pi * np.mod(carrier * k, sample_rate) / sample_rate
    return 2 * np.pi * carrier * k / sample_rate


def synthesize_probe(config: ProbeConfig) -> AudioBuffer:
    """S(t) = sum_i alpha_i cos(2 pi f_i t)"""
    n = int(round(config.duration * config.sample_rate))
    samples = np.zeros(n)
    for carrier, gain in zip(config.carriers, config.gains):
        samples += gain * np.cos(carrier_phase(carrier, n, config.sample_rate))
    return AudioBuffer(samples=samples, sample_rate=config.sample_rate)


def _draw_intervals(rng: np.random.Generator, rhythm: Rhythm, mean_rr: float, count: int) -> np.ndarray:
    if rhythm is Rhythm.AF:
        sigma = math.sqrt(math.log(1 + AF_CV ** 2))
        mu = math.log(mean_rr) - sigma ** 2 / 2
        intervals = rng.lognormal(mu, sigma, size=count)
    else:
        intervals = mean_rr * (1 + NSR_CV * rng.standard_normal(count))
    return np.clip(intervals, RR_MIN, RR_MAX)


def _truncate_to_duration(intervals: np.ndarray, duration: float) -> np.ndarray:
    cumulative = np.cumsum(intervals)
    count = int(np.searchsorted(cumulative, duration, side="left")) + 1
    return intervals[:count]


def _meets_contract(intervals: np.ndarray, rhythm: Rhythm) -> bool:
    cv = np.std(intervals) / np.mean(intervals)
    return cv >= AF_CV_MIN if rhythm is Rhythm.AF else cv <= NSR_CV_MAX


def generate_beat_train(rhythm: Rhythm, duration: float, seed: int, mean_rr: float = 0.8) -> BeatTrain:
    """
    Draw RR intervals for one rhythm.

    NSR uses Gaussian jitter around mean_rr, AF a lognormal law with CV 0.25.
    Draws that miss the rhythm's CV contract are redrawn from the same stream,
    so the result depends only on the arguments.
    """
    rhythm = Rhythm(rhythm)
    if duration <= 0:
        raise ConfigurationError("duration > 0", f"{duration}")
    warnings: List[str] = []
    if not RR_MIN <= mean_rr <= RR_MAX:
        clamped = min(max(mean_rr, RR_MIN), RR_MAX)
        warnings.append(f"mean_rr {mean_rr} clamped to {clamped}")
        logger.warning("mean_rr %.3f outside [%.1f, %.1f], clamped to %.3f", mean_rr, RR_MIN, RR_MAX, clamped)
        mean_rr = clamped

    rng = np.random.default_rng(seed)
    count = int(math.ceil(duration / RR_MIN)) + 1
    intervals = _truncate_to_duration(_draw_intervals(rng, rhythm, mean_rr, count), duration)
    draws = 1
    while not _meets_contract(intervals, rhythm) and draws < MAX_DRAWS:
        intervals = _truncate_to_duration(_draw_intervals(rng, rhythm, mean_rr, count), duration)
        draws += 1

    if not _meets_contract(intervals, rhythm):
        target = AF_CV if rhythm is Rhythm.AF else NSR_CV
        mean = intervals.mean()
        cv = np.std(intervals) / mean
        scale = target / cv if cv > 0 else 0.0
        intervals = np.clip(mean + (intervals - mean) * scale, RR_MIN, RR_MAX)
        # rescaling can shorten the train below the duration
        while intervals.sum() < duration:
            intervals = np.append(intervals, mean)
        warnings.append(f"RR variability rescaled to CV {target} after {draws} draws")
        logger.warning("beat train seed=%d rescaled to meet %s CV contract", seed, rhythm.value)

    return BeatTrain(
        rr_intervals=intervals, rhythm_label=rhythm, seed=seed, duration=float(duration), warnings=warnings
    )


def pulse_template(t: np.ndarray, rr: float) -> np.ndarray:
    """
    One beat sampled at offsets t in [0, rr).

    Raised-cosine upstroke over the first 30% of the interval, then an
    exponential decay (tau = 0.3 rr) shifted so the beat ends at zero.
    """
    rise = UPSTROKE_FRACTION * rr
    tau = DECAY_TAU_FRACTION * rr
    floor = math.exp(-(rr - rise) / tau)
    upstroke = 0.5 * (1 - np.cos(np.pi * np.minimum(t, rise) / rise))
    decay = (np.exp(-(t - rise) / tau) - floor) / (1 - floor)
    return np.where(t < rise, upstroke, decay)


def render_phase_track(beats: BeatTrain, scenario: ChannelScenario, rate: float) -> PhaseSeries:
    """Ground-truth cardiac phase theta_c(t), each beat peaking at phase_amplitude"""
    if rate < 64:
        raise ConfigurationError("track rate >= 64 Hz", f"{rate}")
    n = int(round(beats.duration * rate))
    t = np.arange(n) / rate
    track = np.zeros(n)
    for onset, rr in zip(beats.beat_onsets, beats.rr_intervals):
        lo = int(math.ceil(onset * rate - 1e-9))
        hi = min(n, int(math.ceil((onset + rr) * rate - 1e-9)))
        if lo >= hi:
            continue
        shape = pulse_template(t[lo:hi] - onset, rr)
        peak = shape.max()
        if peak > 0:
            track[lo:hi] = shape / peak
    track *= scenario.phase_amplitude
    if scenario.drift_amplitude:
        track += scenario.drift_amplitude * np.sin(2 * np.pi * scenario.drift_frequency * t)
    return PhaseSeries(phase=track, rate=rate)


def band_limited_interference(
    n: int, sample_rate: int, band: Tuple[float, float], rate: float, rng: np.random.Generator
) -> np.ndarray:
    """Unit-power noise confined to `band` (Hz), its envelope swelling at `rate` Hz like syllables or beats"""
    if band[1] >= sample_rate / 2:
        raise ConfigurationError("interference band below Nyquist", f"{band} at {sample_rate} Hz")
    sos = signal.butter(6, band, btype="bandpass", fs=sample_rate, output="sos")
    noise = signal.sosfiltfilt(sos, rng.standard_normal(n))
    if rate > 0:
        t = np.arange(n) / sample_rate
        noise *= 1 + np.sin(2 * np.pi * rate * t + rng.uniform(-np.pi, np.pi))
    return noise / np.sqrt(np.mean(noise ** 2))


def simulate_received(
    probe: ProbeConfig, track: PhaseSeries, scenario: ChannelScenario, seed: int = 0
) -> AudioBuffer:
    """
    Received microphone signal for every carrier of the probe.

    Each carrier becomes A*alpha_i*cos(2 pi f_i t - theta_c(t) - theta_p) plus an
    unmodulated copy whose baseband phasor is static_offset relative to the
    modulated phasor at rest. Carriers after the first rotate their static
    phasor by an independent seeded angle. Noise power, and the power of an
    optional band-limited interferer, is set against the modulated carrier power.
    """
    ratio = probe.sample_rate / track.rate
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigurationError("track rate divides sample rate", f"{probe.sample_rate} / {track.rate}")

    rng = np.random.default_rng(seed)
    n = int(round(probe.duration * probe.sample_rate))
    t = np.arange(n) / probe.sample_rate
    theta = np.interp(t, np.arange(len(track)) / track.rate, track.phase)
    if scenario.invert:
        theta = -theta

    static = scenario.static_complex
    samples = np.zeros(n)
    modulated_power = 0.0
    for index, (carrier, gain) in enumerate(zip(probe.carriers, probe.gains)):
        amplitude = scenario.channel_gain * gain
        base = carrier_phase(carrier, n, probe.sample_rate)
        samples += amplitude * np.cos(base - theta - scenario.phase_offset)
        modulated_power += amplitude ** 2 / 2
        if static != 0:
            rotation = 0.0 if index == 0 else rng.uniform(-np.pi, np.pi)
            static_phase = scenario.phase_offset + np.angle(static) + rotation
            samples += amplitude * abs(static) * np.cos(base - static_phase)

    if scenario.noise_snr is not None and math.isfinite(scenario.noise_snr):
        noise_power = modulated_power / 10 ** (scenario.noise_snr / 10)
        samples += rng.normal(0.0, math.sqrt(noise_power), size=n)
    if scenario.interference_snr is not None:
        # separate stream: the other components match the interferer-free rendering
        interference = band_limited_interference(
            n, probe.sample_rate, scenario.interference_band, scenario.interference_rate,
            np.random.default_rng([seed, 1]),
        )
        samples += math.sqrt(modulated_power / 10 ** (scenario.interference_snr / 10)) * interference
    return AudioBuffer(samples=samples, sample_rate=probe.sample_rate)


@dataclass
class SimulatedRecording:
    audio: AudioBuffer
    beats: BeatTrain
    track: PhaseSeries
    scenario: ChannelScenario
    seed: int
    subject: Optional[str] = None
    scenario_name: Optional[str] = None

    def sidecar(self) -> Dict[str, Any]:
        return {
            "label": self.beats.rhythm_label.value,
            "seed": self.seed,
            "subject": self.subject,
            "scenario_name": self.scenario_name,
            "scenario": self.scenario.model_dump(mode="json"),
            "beat_train": self.beats.to_dict(),
            "track_rate": self.track.rate,
        }


def simulate_recording(
    rhythm: Rhythm,
    scenario: ChannelScenario,
    probe: Optional[ProbeConfig] = None,
    seed: int = 0,
    mean_rr: float = 0.8,
    track_rate: int = 128,
    subject: Optional[str] = None,
    scenario_name: Optional[str] = None,
) -> SimulatedRecording:
    probe = probe or ProbeConfig()
    beats = generate_beat_train(rhythm, probe.duration, seed=seed, mean_rr=mean_rr)
    track = render_phase_track(beats, scenario, track_rate)
    audio = simulate_received(probe, track, scenario, seed=seed)
    return SimulatedRecording(
        audio=audio, beats=beats, track=track, scenario=scenario, seed=seed,
        subject=subject, scenario_name=scenario_name,
    )


class CorpusEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rhythm: Rhythm
    count: int = Field(ge=1)
    subject: str = "subject-0"
    scenario: str = "clean"
    overrides: Dict[str, Any] = Field(default_factory=dict)
    mean_rr_range: Tuple[float, float] = (0.6, 1.0)
    random_phase_offset: bool = True


class CorpusSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    recordings: List[CorpusEntry]


def load_corpus_spec(path: Path) -> CorpusSpec:
    data = read_yaml(Path(path))
    try:
        return CorpusSpec.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise ScenarioParseError(f"{path}: {where}: {first['msg']}", line=_line_of(path, first["loc"])) from e


def _line_of(path: Path, loc: Tuple[Any, ...]) -> Optional[int]:
    """Best-effort line of the first key in loc; yaml.compose keeps node marks"""
    with open(path, "r", encoding="utf-8") as handle:
        node = yaml.compose(handle)
    line = None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            match = next(((k, v) for k, v in node.value if k.value == part), None)
            if match is None:
                break
            line = match[0].start_mark.line + 1
            node = match[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def recording_seed(root_seed: int, entry_index: int, item_index: int) -> int:
    return int(np.random.SeedSequence([root_seed, entry_index, item_index]).generate_state(1)[0])


def iter_corpus(spec: CorpusSpec):
    """Yield every recording of a corpus spec, deterministically from spec.seed"""
    for entry_index, entry in enumerate(spec.recordings):
        for item_index in range(entry.count):
            seed = recording_seed(spec.seed, entry_index, item_index)
            rng = np.random.default_rng(seed)
            low, high = entry.mean_rr_range
            mean_rr = float(rng.uniform(low, high))
            overrides = dict(entry.overrides)
            if entry.random_phase_offset and "phase_offset" not in overrides:
                overrides["phase_offset"] = float(rng.uniform(-np.pi, np.pi))
            scenario = scenario_preset(entry.scenario, **overrides)
            yield simulate_recording(
                entry.rhythm, scenario, probe=spec.probe, seed=seed, mean_rr=mean_rr,
                subject=entry.subject, scenario_name=entry.scenario,
            )


def synthesize_corpus(spec: CorpusSpec, out_dir: Path, provenance: Optional[Dict[str, Any]] = None) -> List[Path]:
    """
    Write one WAV + ground-truth JSON pair per recording of the spec, plus a
    manifest.jsonl listing path, label, subject and scenario of each.

    With `provenance`, every sidecar carries it and manifest.json records it
    next to the corpus seed and size.
    """
    from acoustic_af.io import ManifestEntry, sidecar_path, write_json, write_manifest, write_recording

    out_dir = Path(out_dir)
    paths, entries = [], []
    for number, recording in enumerate(iter_corpus(spec)):
        name = f"{number:04d}_{recording.subject}_{recording.beats.rhythm_label.value}"
        sidecar = recording.sidecar()
        if provenance is not None:
            sidecar["provenance"] = provenance
        path = write_recording(out_dir / f"{name}.wav", recording.audio, sidecar)
        paths.append(path)
        entries.append(ManifestEntry(path=path, label=recording.beats.rhythm_label,
                                     subject=recording.subject, scenario=recording.scenario_name))
    manifest = write_manifest(out_dir / MANIFEST_NAME, entries)
    if provenance is not None:
        write_json(sidecar_path(manifest), {"seed": spec.seed, "recordings": len(paths), "provenance": provenance})
    logger.info("synthesized %d recordings into %s", len(paths), out_dir)
    return paths
