import hashlib
import json
import math

import numpy as np
import pytest

from acoustic_af.config import PipelineConfig, PurificationConfig, TrainConfig, load_config
from acoustic_af.errors import ConfigurationError, ContractError, ScenarioParseError
from acoustic_af.io import (
    SEGMENT_FORMAT,
    ManifestEntry,
    decode_wav,
    dumps,
    encode_wav,
    provenance,
    read_manifest,
    read_recording,
    record_from_dict,
    record_to_dict,
    segment_from_dict,
    segment_to_dict,
    sha256_digest,
    write_manifest,
    write_recording,
)
from acoustic_af.records import AudioBuffer, PulseSegment, Rhythm


class TestConfig:
    def test_defaults(self):
        config = load_config()
        assert config.probe.carriers == [18000.0, 19000.0, 20000.0, 21000.0]
        assert config.extraction.rate == 128
        assert config.extraction.segment_length == 3840
        assert config.quality.stability_threshold == 0.90
        assert config.quality.cardiac_threshold == 0.70
        assert config.purification.gate_angle == pytest.approx(math.pi / 6)
        assert config.purification.eta == 5.0
        assert config.detector.kernel_size == 32
        assert config.training.learning_rate == 0.001

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "pipeline.yaml"
        path.write_text("seed: 3\nquality:\n  stability_threshold: 0.8\n  cardiac_threshold: 0.6\n")
        config = load_config(path, {"quality": {"cardiac_threshold": 0.5}})
        assert config.seed == 3
        assert config.quality.stability_threshold == 0.8
        assert config.quality.cardiac_threshold == 0.5

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "pipeline.yaml"
        path.write_text("quality:\n  stabilty_threshold: 0.8\n")
        with pytest.raises(ConfigurationError):
            load_config(path)

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "pipeline.yaml"
        path.write_text("quality:\n  stability_threshold: [0.8\n")
        with pytest.raises(ScenarioParseError) as excinfo:
            load_config(path)
        assert excinfo.value.line is not None

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "pipeline.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ScenarioParseError):
            load_config(path)

    def test_invariants(self):
        with pytest.raises(ConfigurationError):
            PurificationConfig(hop_seconds=3.0, window_seconds=2.5)
        with pytest.raises(ConfigurationError):
            PurificationConfig(kept_bands=(6, 4))
        with pytest.raises(ConfigurationError):
            TrainConfig(optimizer="sgd")

    def test_round_trips_through_dict(self):
        config = PipelineConfig()
        assert PipelineConfig.model_validate(json.loads(json.dumps(config.to_dict()))) == config


class TestWav:
    def test_round_trip(self, tmp_path):
        samples = 0.5 * np.sin(np.linspace(0, 100, 4800))
        path = write_recording(tmp_path / "a.wav", AudioBuffer(samples, 48000), {"label": "AF"})
        audio, sidecar = read_recording(path)
        assert audio.sample_rate == 48000
        np.testing.assert_allclose(audio.samples, samples, atol=1e-7)
        assert sidecar["label"] == "AF"
        assert sidecar["scale"] == 1.0
        assert sidecar["sample_rate"] == 48000

    def test_overload_is_rescaled(self, tmp_path):
        samples = np.array([0.0, 2.0, -1.0, 0.5])
        path = write_recording(tmp_path / "loud.wav", AudioBuffer(samples, 48000), {})
        audio, sidecar = read_recording(path)
        assert sidecar["scale"] == pytest.approx(0.5)
        np.testing.assert_allclose(audio.samples, samples * 0.5, atol=1e-7)

    def test_in_memory(self):
        data, scale = encode_wav(AudioBuffer(np.array([0.25, -0.25]), 8000))
        assert scale == 1.0
        audio = decode_wav(data)
        np.testing.assert_allclose(audio.samples, [0.25, -0.25])

    def test_integer_pcm_is_normalized(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "pcm.wav"
        wavfile.write(path, 8000, np.array([0, 16384, -32768], dtype=np.int16))
        np.testing.assert_allclose(decode_wav(path).samples, [0.0, 0.5, -1.0])

    def test_stereo_rejected(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "stereo.wav"
        wavfile.write(path, 8000, np.zeros((10, 2), dtype=np.float32))
        with pytest.raises(ContractError):
            decode_wav(path)

    def test_garbage_rejected(self):
        with pytest.raises(ContractError):
            decode_wav(b"RIFF????not a wav")


class TestArtifacts:
    def test_record_round_trip(self, clean_record):
        restored = record_from_dict(json.loads(dumps(record_to_dict(clean_record))))
        assert restored.carriers == clean_record.carriers
        for a, b in zip(restored.channels, clean_record.channels):
            np.testing.assert_array_equal(a.phase.phase, b.phase.phase)
            np.testing.assert_array_equal(a.iq.i, b.iq.i)

    def test_segment_round_trip(self):
        segment = PulseSegment(samples=np.arange(5.0), rate=128, source_carrier=19000.0, label=Rhythm.NSR)
        restored = segment_from_dict(json.loads(dumps(segment_to_dict(segment))))
        np.testing.assert_array_equal(restored.samples, segment.samples)
        assert restored.label is Rhythm.NSR
        assert restored.source_carrier == 19000.0

    def test_wrong_format(self):
        with pytest.raises(ContractError):
            segment_from_dict({"format": "something-else"})

    @pytest.mark.parametrize("drop", ["header", "channels"])
    def test_record_missing_key(self, clean_record, drop):
        payload = json.loads(dumps(record_to_dict(clean_record)))
        del payload[drop]
        with pytest.raises(ContractError, match="malformed multi-channel record"):
            record_from_dict(payload)

    def test_record_missing_channel_field(self, clean_record):
        payload = json.loads(dumps(record_to_dict(clean_record)))
        del payload["channels"][0]["carrier"]
        with pytest.raises(ContractError):
            record_from_dict(payload)

    def test_record_unknown_label(self, clean_record):
        payload = json.loads(dumps(record_to_dict(clean_record)))
        payload["header"]["label"] = "flutter"
        with pytest.raises(ContractError):
            record_from_dict(payload)

    def test_segment_missing_samples(self):
        with pytest.raises(ContractError, match="malformed pulse segment"):
            segment_from_dict({"format": SEGMENT_FORMAT, "rate": 128})

    def test_dumps_is_canonical(self):
        assert dumps({"b": 1, "a": 2}) == dumps({"a": 2, "b": 1})
        with pytest.raises(ValueError):
            dumps({"x": float("nan")})

    def test_digest(self, tmp_path):
        path = tmp_path / "blob.bin"
        path.write_bytes(b"acoustic")
        assert sha256_digest(path) == "sha256:" + hashlib.sha256(b"acoustic").hexdigest()
        assert sha256_digest(b"acoustic") == sha256_digest(path)

    def test_provenance(self, tmp_path):
        path = tmp_path / "in.wav"
        path.write_bytes(b"abc")
        payload = provenance(PipelineConfig(), [path], stage="extract")
        assert payload["stage"] == "extract"
        assert payload["inputs"] == {"in.wav": sha256_digest(b"abc")}
        assert payload["config"]["seed"] == 0

    def test_manifest_round_trip(self, tmp_path):
        entries = [ManifestEntry(path=tmp_path / "a.wav", label=Rhythm.AF, subject="s1", scenario="clean"),
                   ManifestEntry(path=tmp_path / "seg" / "b.json", label=Rhythm.NSR, subject="s2")]
        restored = read_manifest(write_manifest(tmp_path / "manifest.jsonl", entries))
        assert restored == entries

    def test_bad_manifest_line(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text('{"path": "a.wav", "label": "AF", "subject": "s1"}\n{"path": "b.wav"}\n')
        with pytest.raises(ScenarioParseError) as excinfo:
            read_manifest(path)
        assert excinfo.value.line == 2
