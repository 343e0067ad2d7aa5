import numpy as np
import pytest

from acoustic_af.config import ChannelScenario, ProbeConfig
from acoustic_af.errors import ConfigurationError, ScenarioParseError
from acoustic_af.io import read_manifest
from acoustic_af.probe_sim import (
    MANIFEST_NAME,
    BeatTrain,
    CorpusEntry,
    CorpusSpec,
    carrier_phase,
    generate_beat_train,
    load_corpus_spec,
    render_phase_track,
    scenario_preset,
    simulate_received,
    simulate_recording,
    synthesize_corpus,
    synthesize_probe,
)
from acoustic_af.records import PhaseSeries, Rhythm


class TestProbe:
    def test_single_carrier_starts_at_full_scale(self):
        audio = synthesize_probe(ProbeConfig(carriers=[18000.0], gains=[1.0], duration=1.0))
        assert len(audio.samples) == 48000
        assert audio.samples[0] == pytest.approx(1.0)

    def test_thirty_seconds_at_48k(self):
        audio = synthesize_probe(ProbeConfig())
        assert len(audio.samples) == 1_440_000

    def test_equal_gains_give_equal_spectral_lines(self):
        audio = synthesize_probe(ProbeConfig(duration=1.0))
        spectrum = np.abs(np.fft.rfft(audio.samples))
        lines = spectrum[[18000, 19000, 20000, 21000]]
        assert np.all(np.abs(20 * np.log10(lines / lines[0])) < 0.1)
        assert np.max(np.abs(audio.samples)) <= 1.0 + 1e-12

    @pytest.mark.parametrize("carriers,gains", [
        ([18000.0, 18100.0], [0.5, 0.5]),
        ([18000.0, 19000.0], [0.8, 0.8]),
        ([17000.0], [1.0]),
        ([23500.0], [1.0]),
        ([18000.0, 19000.0], [1.0]),
    ])
    def test_invalid_probe_rejected(self, carriers, gains):
        with pytest.raises(ConfigurationError):
            ProbeConfig(carriers=carriers, gains=gains)


class TestBeatTrain:
    @pytest.mark.parametrize("seed", range(10))
    def test_af_is_irregular_and_nsr_regular(self, seed):
        af = generate_beat_train(Rhythm.AF, 30.0, seed=seed)
        nsr = generate_beat_train(Rhythm.NSR, 30.0, seed=seed)
        assert af.coefficient_of_variation() >= 0.2
        assert nsr.coefficient_of_variation() <= 0.1

    @pytest.mark.parametrize("rhythm", [Rhythm.AF, Rhythm.NSR])
    def test_intervals_cover_duration_within_bounds(self, rhythm):
        beats = generate_beat_train(rhythm, 30.0, seed=11)
        assert beats.rr_intervals.sum() >= 30.0
        assert beats.rr_intervals.min() >= 0.3
        assert beats.rr_intervals.max() <= 2.0

    def test_nsr_beat_count(self):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=2, mean_rr=0.8)
        assert 36 <= len(beats.rr_intervals) <= 39

    def test_same_seed_same_train(self):
        a = generate_beat_train(Rhythm.AF, 30.0, seed=7)
        b = generate_beat_train(Rhythm.AF, 30.0, seed=7)
        np.testing.assert_array_equal(a.rr_intervals, b.rr_intervals)

    def test_out_of_range_mean_is_clamped_with_warning(self):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=0, mean_rr=3.0)
        assert beats.warnings
        assert beats.rr_intervals.max() <= 2.0

    def test_zero_duration_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_beat_train(Rhythm.NSR, 0.0, seed=0)


class TestPhaseTrack:
    def test_zero_amplitude_is_flat(self):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=0)
        track = render_phase_track(beats, ChannelScenario(phase_amplitude=0.0), 128)
        assert len(track) == 3840
        assert np.all(track.phase == 0)

    def test_single_beat_peaks_at_amplitude(self):
        beats = BeatTrain(rr_intervals=np.array([1.0]), rhythm_label=Rhythm.NSR, seed=0, duration=1.0)
        track = render_phase_track(beats, ChannelScenario(phase_amplitude=0.3), 128)
        assert track.phase.max() == pytest.approx(0.3, abs=1e-9)
        assert track.phase.min() >= 0

    def test_nsr_fundamental_in_cardiac_range(self):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=1, mean_rr=0.8)
        track = render_phase_track(beats, ChannelScenario(), 128)
        spectrum = np.abs(np.fft.rfft(track.phase - track.phase.mean()))
        freqs = np.fft.rfftfreq(len(track), d=1 / 128)
        peak = freqs[1:][np.argmax(spectrum[1:])]
        assert 0.5 <= peak <= 2.0

    def test_low_track_rate_rejected(self):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=0)
        with pytest.raises(ConfigurationError):
            render_phase_track(beats, ChannelScenario(), 32)


class TestReceived:
    probe = ProbeConfig(carriers=[18000.0], gains=[1.0], duration=1.0)

    def _base(self):
        return carrier_phase(18000.0, 48000, 48000)

    def test_identity_channel_is_scaled_shifted_probe(self):
        track = PhaseSeries(phase=np.zeros(128), rate=128)
        scenario = ChannelScenario(phase_amplitude=0.0, phase_offset=0.7, channel_gain=0.5)
        audio = simulate_received(self.probe, track, scenario)
        np.testing.assert_allclose(audio.samples, 0.5 * np.cos(self._base() - 0.7), atol=1e-12)

    def test_static_offset_adds_in_phase_copy(self):
        track = PhaseSeries(phase=np.zeros(128), rate=128)
        scenario = ChannelScenario(phase_amplitude=0.0, static_offset=(0.5, 0.0), channel_gain=0.5)
        audio = simulate_received(self.probe, track, scenario)
        np.testing.assert_allclose(audio.samples, 0.75 * np.cos(self._base()), atol=1e-12)

    def test_inversion_negates_the_track(self):
        track = PhaseSeries(phase=0.3 * np.sin(np.linspace(0, 4 * np.pi, 128)), rate=128)
        flipped = PhaseSeries(phase=-track.phase, rate=128)
        inverted = simulate_received(self.probe, track, ChannelScenario(invert=True))
        plain = simulate_received(self.probe, flipped, ChannelScenario())
        np.testing.assert_allclose(inverted.samples, plain.samples, atol=1e-12)

    def test_noise_free_energy_matches_probe(self):
        probe = ProbeConfig(duration=2.0)
        beats = generate_beat_train(Rhythm.NSR, 2.0, seed=0)
        scenario = ChannelScenario(phase_amplitude=0.3, channel_gain=0.5)
        audio = simulate_received(probe, render_phase_track(beats, scenario, 128), scenario)
        expected = sum((0.5 * gain) ** 2 / 2 for gain in probe.gains)
        assert np.mean(audio.samples ** 2) == pytest.approx(expected, rel=0.01)

    def test_track_rate_must_divide_sample_rate(self):
        track = PhaseSeries(phase=np.zeros(100), rate=100.5)
        with pytest.raises(ConfigurationError):
            simulate_received(self.probe, track, ChannelScenario())

    def test_recording_is_deterministic(self):
        a = simulate_recording(Rhythm.AF, scenario_preset("clean"), probe=self.probe, seed=9)
        b = simulate_recording(Rhythm.AF, scenario_preset("clean"), probe=self.probe, seed=9)
        np.testing.assert_array_equal(a.audio.samples, b.audio.samples)
        assert a.sidecar() == b.sidecar()

    def test_interferer_stays_in_its_band(self):
        probe = ProbeConfig(duration=1.0)
        talking = scenario_preset("talking")
        quiet = talking.model_copy(update={"interference_snr": None})
        track = render_phase_track(generate_beat_train(Rhythm.NSR, 1.0, seed=2), talking, 128)
        interference = (simulate_received(probe, track, talking, seed=2).samples
                        - simulate_received(probe, track, quiet, seed=2).samples)

        modulated_power = sum((0.5 * gain) ** 2 / 2 for gain in probe.gains)
        assert np.mean(interference ** 2) == pytest.approx(modulated_power, rel=1e-6)
        power = np.abs(np.fft.rfft(interference)) ** 2
        freqs = np.fft.rfftfreq(len(interference), 1 / probe.sample_rate)
        in_band = (freqs >= 17000) & (freqs <= 22000)
        assert power[in_band].sum() / power.sum() >= 0.99

    def test_interferer_band_must_fit_the_sample_rate(self):
        track = PhaseSeries(phase=np.zeros(128), rate=128)
        scenario = ChannelScenario(interference_snr=0.0, interference_band=(20000.0, 25000.0))
        with pytest.raises(ConfigurationError):
            simulate_received(self.probe, track, scenario)

    def test_inverted_interferer_band_rejected(self):
        with pytest.raises(ConfigurationError):
            ChannelScenario(interference_band=(21000.0, 18000.0))

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            scenario_preset("underwater")


class TestCorpus:
    def _spec(self):
        return CorpusSpec(
            seed=5,
            probe=ProbeConfig(duration=1.0),
            recordings=[
                CorpusEntry(rhythm=Rhythm.AF, count=2, subject="s1"),
                CorpusEntry(rhythm=Rhythm.NSR, count=2, subject="s2", scenario="inverted"),
            ],
        )

    def test_writes_pairs_and_manifest(self, tmp_path):
        paths = synthesize_corpus(self._spec(), tmp_path)
        assert [p.name for p in paths] == ["0000_s1_AF.wav", "0001_s1_AF.wav", "0002_s2_NSR.wav", "0003_s2_NSR.wav"]
        assert all(p.with_suffix(".json").exists() for p in paths)
        entries = read_manifest(tmp_path / MANIFEST_NAME)
        assert [e.label for e in entries] == [Rhythm.AF, Rhythm.AF, Rhythm.NSR, Rhythm.NSR]
        assert [e.scenario for e in entries] == ["clean", "clean", "inverted", "inverted"]
        assert entries[0].path == paths[0]

    def test_same_seed_same_bytes(self, tmp_path):
        first = synthesize_corpus(self._spec(), tmp_path / "a")
        second = synthesize_corpus(self._spec(), tmp_path / "b")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()
            assert a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()
        assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (tmp_path / "b" / MANIFEST_NAME).read_bytes()

    def test_malformed_yaml_reports_line(self, tmp_path):
        path = tmp_path / "corpus.yaml"
        path.write_text("seed: 1\nrecordings:\n  - rhythm: AF\n    count: [1\n")
        with pytest.raises(ScenarioParseError) as excinfo:
            load_corpus_spec(path)
        assert excinfo.value.line is not None

    def test_invalid_field_reports_its_line(self, tmp_path):
        path = tmp_path / "corpus.yaml"
        path.write_text("seed: 1\nrecordings:\n  - rhythm: AF\n    count: 0\n")
        with pytest.raises(ScenarioParseError) as excinfo:
            load_corpus_spec(path)
        assert excinfo.value.line == 4
