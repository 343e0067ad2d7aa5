import numpy as np
import pytest

from acoustic_af.config import DetectorConfig, ProbeConfig, TrainConfig
from acoustic_af.detector import LabeledSegments
from acoustic_af.extraction import extract_all
from acoustic_af.probe_sim import scenario_preset, simulate_recording
from acoustic_af.records import Rhythm

SINGLE_CARRIER = dict(carriers=[18000.0], gains=[1.0])


@pytest.fixture(scope="session")
def single_probe() -> ProbeConfig:
    return ProbeConfig(**SINGLE_CARRIER)


@pytest.fixture(scope="session")
def clean_recording():
    return simulate_recording(Rhythm.NSR, scenario_preset("clean"), seed=3, scenario_name="clean")


@pytest.fixture(scope="session")
def clean_record(clean_recording):
    return extract_all(clean_recording.audio)


@pytest.fixture(scope="session")
def noise_record():
    recording = simulate_recording(Rhythm.NSR, scenario_preset("noise_only"), seed=4, scenario_name="noise_only")
    return extract_all(recording.audio)


@pytest.fixture
def tiny_detector() -> DetectorConfig:
    """Same layout at 64 samples and 2 channels, small enough for many trainings"""
    return DetectorConfig(channels=2, kernel_size=3, input_length=64)


@pytest.fixture
def quick_training() -> TrainConfig:
    return TrainConfig(max_epochs=2, patience=2, batch_size=4, seed=0)


def make_labeled(count: int = 12, length: int = 64, subjects=None, seed: int = 0) -> LabeledSegments:
    """Alternating non-AF / AF random segments, standardized"""
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((count, length))
    samples = (samples - samples.mean(axis=1, keepdims=True)) / samples.std(axis=1, keepdims=True)
    labels = np.arange(count) % 2
    return LabeledSegments(
        samples=samples,
        labels=labels.astype(np.int64),
        subjects=list(subjects) if subjects is not None else [],
        names=[f"r{i:02d}" for i in range(count)],
    )


@pytest.fixture
def labeled():
    return make_labeled
