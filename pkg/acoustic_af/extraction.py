"""
Pulse wave extraction.

Per carrier: Butterworth bandpass (f_c +/- 50 Hz), I/Q mixing with a
low-pass Butterworth, decimation to 128 Hz and four-quadrant phase with
unwrapping. All filters run forward-backward so they add no delay.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import signal

from acoustic_af.config import ExtractionConfig, ProbeConfig
from acoustic_af.errors import AcousticAFError, ConfigurationError, ContractError, DegenerateSignalError
from acoustic_af.probe_sim import carrier_phase
from acoustic_af.records import AudioBuffer, ChannelData, IQSeries, MultiChannelRecord, PhaseSeries

logger = logging.getLogger(__name__)

DEGENERATE_FRACTION = 0.01


@lru_cache(maxsize=64)
def _bandpass_sos(carrier: float, half_width: float, sample_rate: float, order: int) -> np.ndarray:
    return signal.butter(
        order, [carrier - half_width, carrier + half_width], btype="bandpass", fs=sample_rate, output="sos"
    )


@lru_cache(maxsize=64)
def _lowpass_sos(cutoff: float, sample_rate: float, order: int) -> np.ndarray:
    return signal.butter(order, cutoff, btype="lowpass", fs=sample_rate, output="sos")


def bandpass(audio: AudioBuffer, carrier: float, config: Optional[ExtractionConfig] = None) -> AudioBuffer:
    config = config or ExtractionConfig()
    nyquist = audio.sample_rate / 2
    low, high = carrier - config.bandpass_half_width, carrier + config.bandpass_half_width
    if low <= 0 or high >= nyquist:
        raise ConfigurationError(
            "carrier +/- half width inside (0, Nyquist)", f"{carrier} Hz at {audio.sample_rate} Hz"
        )
    sos = _bandpass_sos(float(carrier), config.bandpass_half_width, float(audio.sample_rate), config.bandpass_order)
    filtered = signal.sosfiltfilt(sos, audio.samples)
    return AudioBuffer(samples=filtered, sample_rate=audio.sample_rate, start_time=audio.start_time)


def iq_demodulate(audio: AudioBuffer, carrier: float, config: Optional[ExtractionConfig] = None) -> IQSeries:
    """I = LP(x cos(2 pi f t)), Q = LP(x sin(2 pi f t)), at the audio rate"""
    config = config or ExtractionConfig()
    start_sample = int(round(audio.start_time * audio.sample_rate))
    phase = carrier_phase(carrier, len(audio.samples), audio.sample_rate, start_sample)
    sos = _lowpass_sos(config.lowpass_cutoff, float(audio.sample_rate), config.lowpass_order)
    i = signal.sosfiltfilt(sos, audio.samples * np.cos(phase))
    q = signal.sosfiltfilt(sos, audio.samples * np.sin(phase))
    return IQSeries(i=i, q=q, rate=audio.sample_rate, carrier=carrier)


def decimate(iq: IQSeries, target_rate: int = 128, config: Optional[ExtractionConfig] = None) -> IQSeries:
    config = config or ExtractionConfig()
    ratio = iq.rate / target_rate
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise ConfigurationError("source rate is an integer multiple of target rate", f"{iq.rate} / {target_rate}")
    ratio = int(round(ratio))
    if ratio == 1:
        return IQSeries(i=iq.i.copy(), q=iq.q.copy(), rate=target_rate, carrier=iq.carrier)
    cutoff = min(config.decimation_cutoff, 0.5 * target_rate)
    sos = _lowpass_sos(cutoff, float(iq.rate), config.decimation_order)
    stop = (len(iq) // ratio) * ratio
    i = signal.sosfiltfilt(sos, iq.i)[:stop:ratio]
    q = signal.sosfiltfilt(sos, iq.q)[:stop:ratio]
    return IQSeries(i=i, q=q, rate=target_rate, carrier=iq.carrier)


def phase_of(iq: IQSeries, epsilon: float = 1e-6) -> PhaseSeries:
    """
    Unwrapped four-quadrant phase atan2(Q, I).

    A plain arctan(Q/I) loses the quadrant; atan2 followed by unwrap keeps the
    sequence continuous.
    """
    magnitude = np.abs(iq.i) + np.abs(iq.q)
    weak = np.count_nonzero(magnitude < epsilon)
    if len(iq) == 0 or weak >= DEGENERATE_FRACTION * len(iq):
        raise DegenerateSignalError(f"no carrier at {iq.carrier} Hz: {weak} of {len(iq)} samples below {epsilon}")
    return PhaseSeries(phase=np.unwrap(np.arctan2(iq.q, iq.i)), rate=iq.rate, carrier=iq.carrier)


def extract_channel(audio: AudioBuffer, carrier: float, config: Optional[ExtractionConfig] = None) -> ChannelData:
    """Run one carrier end to end; failures mark the channel invalid"""
    config = config or ExtractionConfig()
    try:
        baseband = iq_demodulate(bandpass(audio, carrier, config), carrier, config)
        iq = decimate(baseband, config.rate, config)
        iq = IQSeries(
            i=iq.i[: config.segment_length], q=iq.q[: config.segment_length], rate=iq.rate, carrier=carrier
        )
        phase = phase_of(iq, config.degenerate_epsilon)
    except AcousticAFError as e:
        logger.warning("channel %.0f Hz invalid: %s", carrier, e)
        return ChannelData(carrier=carrier, valid=False, reason=str(e))
    return ChannelData(carrier=carrier, iq=iq, phase=phase)


def extract_all(
    audio: AudioBuffer, probe: Optional[ProbeConfig] = None, config: Optional[ExtractionConfig] = None
) -> MultiChannelRecord:
    """Four time-aligned channels trimmed to one 30 s segment at 128 Hz"""
    probe = probe or ProbeConfig()
    config = config or ExtractionConfig()
    needed = config.segment_length / config.rate
    if audio.duration + 1e-9 < needed:
        raise ContractError(f"recording covers {audio.duration:.2f} s, need {needed:.2f} s")
    # only the first segment is extracted
    samples = int(round(needed * audio.sample_rate))
    segment = AudioBuffer(samples=audio.samples[:samples], sample_rate=audio.sample_rate, start_time=audio.start_time)

    def run(carrier: float) -> ChannelData:
        return extract_channel(segment, carrier, config)

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            channels = list(pool.map(run, probe.carriers))
    else:
        channels = [run(carrier) for carrier in probe.carriers]
    logger.info("extracted %d/%d valid channels", sum(c.valid for c in channels), len(channels))
    return MultiChannelRecord(channels=channels, rate=config.rate, segment_length=config.segment_length)
