import numpy as np

from acoustic_af.config import PipelineConfig
from acoustic_af.dataset import build_dataset, load_segment, run_pipeline
from acoustic_af.io import ManifestEntry, segment_to_dict, write_json, write_recording
from acoustic_af.probe_sim import scenario_preset, simulate_recording
from acoustic_af.records import PulseSegment, Rhythm


def test_clean_recording_runs_through(clean_recording):
    run = run_pipeline(clean_recording.audio, label=Rhythm.NSR)
    assert run.passed
    assert run.segment is not None
    assert run.segment.label is Rhythm.NSR
    assert len(run.segment.samples) == 3840


def test_ablation_switches_reach_purification(clean_recording):
    run = run_pipeline(clean_recording.audio, static_elimination=False, artifact_removal=False)
    trace = run.segment.provenance["purification"]
    assert trace["static_elimination"] is False
    assert trace["artifact_removal"] is False


def test_segment_file_takes_manifest_label(tmp_path):
    path = write_json(tmp_path / "s.json", segment_to_dict(PulseSegment(samples=np.arange(4.0), rate=128)))
    segment, reason = load_segment(path, PipelineConfig(), label=Rhythm.AF)
    assert reason is None
    assert segment.label is Rhythm.AF


def test_manifest_dataset_rejects_noise(tmp_path, clean_recording):
    noise = simulate_recording(Rhythm.AF, scenario_preset("noise_only"), seed=8)
    clean_path = write_recording(tmp_path / "clean.wav", clean_recording.audio, clean_recording.sidecar())
    noise_path = write_recording(tmp_path / "noise.wav", noise.audio, noise.sidecar())
    entries = [
        ManifestEntry(path=clean_path, label=Rhythm.NSR, subject="s1"),
        ManifestEntry(path=noise_path, label=Rhythm.AF, subject="s2"),
        ManifestEntry(path=tmp_path / "missing.json", label=Rhythm.AF, subject="s3"),
    ]
    built = build_dataset(entries)
    assert len(built.data) == 1
    assert built.data.names == ["clean.wav"]
    assert built.data.labels.tolist() == [0]
    assert set(built.rejected) == {"noise.wav", "missing.json"}
    assert built.subjects == ["s1", "s2", "s3"]
    np.testing.assert_allclose(built.data.samples[0].std(), 1.0)
