import numpy as np
import pytest

from acoustic_af.config import ChannelScenario, ProbeConfig, PurificationConfig
from acoustic_af.errors import ContractError, DegenerateSignalError, QualityGateError, SelectionError
from acoustic_af.extraction import extract_all, phase_of
from acoustic_af.probe_sim import generate_beat_train, render_phase_track, scenario_preset, simulate_recording
from acoustic_af.purification import (
    ArcWindow,
    argmax_score,
    band_energy_ratio,
    center_from_direction,
    channel_scores,
    diastolic_direction,
    estimate_center,
    explained_ratio,
    pca_explained_ratio,
    primary_direction,
    purify,
    remove_motion_artifacts,
    run_static_elimination,
    score_channel,
    select_channel,
    swt_decompose,
    swt_reconstruct,
    trajectory_vectors,
    window_bounds,
)
from acoustic_af.records import ChannelData, IQSeries, MultiChannelRecord, PhaseSeries, Rhythm

SINGLE = ProbeConfig(carriers=[18000.0], gains=[1.0])
T = np.arange(3840) / 128


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x ** 2)))


class TestTrajectory:
    def test_vectors(self):
        np.testing.assert_array_equal(trajectory_vectors([[0, 0], [1, 1], [3, 2]]), [[1, 1], [2, 1]])

    def test_primary_direction_of_a_line(self):
        vectors = np.array([[1.0, 1.0], [2.0, 2.0], [-1.0, -1.0]])
        np.testing.assert_allclose(primary_direction(vectors), [np.sqrt(0.5), np.sqrt(0.5)])
        assert explained_ratio(vectors) == pytest.approx(1.0)

    def test_slower_sense_is_diastolic(self):
        vectors = np.array([[3.0, 0.0], [-1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
        pc1 = primary_direction(vectors)
        np.testing.assert_allclose(diastolic_direction(vectors, pc1), [-1.0, 0.0])

    def test_one_sided_motion_without_history(self):
        vectors = np.array([[1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(DegenerateSignalError):
            diastolic_direction(vectors, np.array([1.0, 0.0]))

    def test_one_sided_motion_reuses_previous(self):
        vectors = np.array([[1.0, 0.0], [2.0, 0.0]])
        previous = np.array([0.0, 1.0])
        np.testing.assert_array_equal(diastolic_direction(vectors, np.array([1.0, 0.0]), previous), previous)

    def test_zero_vectors(self):
        with pytest.raises(DegenerateSignalError):
            primary_direction(np.zeros((5, 2)))

    def test_center_is_clockwise_of_diastole(self):
        center, d_max = center_from_direction(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([1.0, 0.0]), eta=5.0)
        assert d_max == pytest.approx(1.0)
        np.testing.assert_allclose(center, [0.5, -5.0])

    def test_window_needs_three_points(self):
        with pytest.raises(ContractError):
            ArcWindow(np.zeros((2, 2)))

    def test_arc_center_points_to_true_center(self):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=0)
        track = render_phase_track(beats, ChannelScenario(phase_amplitude=0.1), 128).phase
        angle = np.pi / 2 + track
        points = np.column_stack([np.cos(angle), np.sin(angle)])[:320]
        estimate = estimate_center(ArcWindow(points))
        toward = estimate.center - points.mean(axis=0)
        truth = -points.mean(axis=0)
        cosine = toward @ truth / (np.linalg.norm(toward) * np.linalg.norm(truth))
        assert cosine > np.cos(np.pi / 6)


class TestWindows:
    def test_thirty_second_layout(self):
        bounds = window_bounds(3840, 128)
        assert len(bounds) == 56
        assert bounds[0] == (0, 320)
        assert bounds[1] == (64, 384)
        assert bounds[-1] == (3520, 3840)

    def test_short_tail_joins_last_window(self):
        assert window_bounds(350, 128)[-1] == (0, 350)

    def test_too_short(self):
        with pytest.raises(ContractError):
            window_bounds(100, 128)


def _correlation_with_truth(scenario: str, seed: int):
    recording = simulate_recording(Rhythm.NSR, scenario_preset(scenario), probe=SINGLE, seed=seed)
    record = extract_all(recording.audio, SINGLE)
    channel = record.channels[0]
    corrected = run_static_elimination(channel.iq).phase.phase
    truth = recording.track.phase
    return np.corrcoef(channel.phase.phase, truth)[0, 1], np.corrcoef(corrected, truth)[0, 1]


class TestStaticElimination:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_inversion_is_corrected(self, seed):
        raw, corrected = _correlation_with_truth("inverted", seed)
        assert raw <= 0
        assert corrected >= 0.9

    @pytest.mark.parametrize("seed", [0, 1])
    def test_blurred_arc_is_recovered(self, seed):
        _, corrected = _correlation_with_truth("blurred", seed)
        assert corrected >= 0.9

    def test_clean_channel_is_kept(self):
        raw, corrected = _correlation_with_truth("clean", 5)
        assert corrected >= 0.95

    @pytest.mark.parametrize("offset", [0.0, 0.7, 2.5])
    def test_centered_arc_is_left_alone(self, offset):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=1)
        track = render_phase_track(beats, ChannelScenario(phase_amplitude=0.3), 128).phase
        iq = IQSeries(i=0.5 * np.cos(track + offset), q=0.5 * np.sin(track + offset), rate=128, carrier=18000.0)
        result = run_static_elimination(iq)
        assert result.rectified_count == 0
        assert all(w.radial_residual < 1e-9 for w in result.windows if not w.degenerate)
        np.testing.assert_allclose(result.phase.phase, phase_of(iq).phase, atol=1e-9)

    def test_offset_center_still_fires(self):
        beats = generate_beat_train(Rhythm.NSR, 30.0, seed=1)
        track = render_phase_track(beats, ChannelScenario(phase_amplitude=0.3), 128).phase
        phasor = 0.5 * np.exp(1j * track) + (-1.45 + 3.0j) * 0.5
        iq = IQSeries(i=phasor.real, q=phasor.imag, rate=128, carrier=18000.0)
        result = run_static_elimination(iq)
        assert result.windows[0].fired
        assert result.windows[0].radial_residual > 0.05
        assert np.corrcoef(result.phase.phase, track)[0, 1] >= 0.9

    def test_decisions_are_recorded(self, clean_record):
        result = run_static_elimination(clean_record.channels[0].iq)
        assert len(result.windows) == 56
        assert len(result.phase) == 3840
        assert not result.passthrough
        assert all(w.angle is not None for w in result.windows if not w.degenerate)

    def test_constant_trajectory_passes_through(self):
        iq = IQSeries(i=np.ones(3840), q=np.ones(3840), rate=128, carrier=18000.0)
        result = run_static_elimination(iq)
        assert result.passthrough
        assert all(w.degenerate for w in result.windows)
        np.testing.assert_allclose(result.phase.phase, np.pi / 4)


class TestSelection:
    def test_highest_score(self):
        assert argmax_score([0.2, 0.9, None, 0.5], [18000, 19000, 20000, 21000]) == 1

    def test_tie_goes_to_lowest_carrier(self):
        assert argmax_score([0.7, 0.9, 0.9], [18000, 21000, 19000]) == 2

    def test_nothing_valid(self):
        with pytest.raises(SelectionError):
            argmax_score([None, None], [18000, 19000])

    def test_linear_trajectory_explains_everything(self):
        s = np.sin(2 * np.pi * 1.2 * T)
        assert pca_explained_ratio(IQSeries(i=s, q=2 * s, rate=128, carrier=18000.0)) == pytest.approx(1.0, abs=1e-9)

    def test_isotropic_noise_explains_half(self):
        rng = np.random.default_rng(0)
        iq = IQSeries(i=rng.standard_normal(3840), q=rng.standard_normal(3840), rate=128, carrier=18000.0)
        assert abs(pca_explained_ratio(iq) - 0.5) <= 0.05

    def test_noise_lowers_explained_ratio(self):
        clean = _arc_iq(seed=2)
        rng = np.random.default_rng(1)
        noisy = IQSeries(i=clean.i + rng.normal(0, 0.05, 3840), q=clean.q + rng.normal(0, 0.05, 3840),
                         rate=128, carrier=18000.0)
        assert pca_explained_ratio(clean) > pca_explained_ratio(noisy)

    def test_band_ratio_of_cardiac_tone(self):
        assert band_energy_ratio(PhaseSeries(np.sin(2 * np.pi * 2 * T), rate=128)) >= 0.99

    def test_band_ratio_with_out_of_band_tone(self):
        phase = np.sin(2 * np.pi * 2 * T) + np.sin(2 * np.pi * 20 * T)
        assert band_energy_ratio(PhaseSeries(phase, rate=128)) == pytest.approx(0.5, abs=0.02)

    def test_drift_only_scores_zero_with_flag(self):
        drift = PhaseSeries(np.sin(2 * np.pi * 0.1 * T), rate=128)
        with pytest.raises(DegenerateSignalError):
            band_energy_ratio(drift)
        score = score_channel(0, _arc_iq(seed=2), drift)
        assert score.band_ratio == 0.0
        assert "eta_b degenerate" in score.flags

    def test_clean_channel_among_noise_is_selected(self):
        record = _noisy_record(clean_index=2)
        assert select_channel(record, {i: c.phase for i, c in enumerate(record.channels)}) == 2

    def test_selection_ignores_channel_scale(self):
        record = _noisy_record(clean_index=1)
        phases = {i: c.phase for i, c in enumerate(record.channels)}
        baseline = [s.score for s in channel_scores(record, phases)]
        for index, (channel, k) in enumerate(zip(record.channels, [3.0, 0.2, 7.5, 0.01])):
            channel.iq = IQSeries(i=k * channel.iq.i, q=k * channel.iq.q, rate=128, carrier=channel.carrier)
            phases[index] = PhaseSeries(k * phases[index].phase, rate=128, carrier=channel.carrier)
        assert select_channel(record, phases) == 1
        np.testing.assert_allclose([s.score for s in channel_scores(record, phases)], baseline, rtol=1e-9)


def _arc_iq(seed: int, offset: float = 0.4, carrier: float = 18000.0) -> IQSeries:
    beats = generate_beat_train(Rhythm.NSR, 30.0, seed=seed)
    track = render_phase_track(beats, ChannelScenario(phase_amplitude=0.3), 128).phase
    return IQSeries(i=0.5 * np.cos(track + offset), q=0.5 * np.sin(track + offset), rate=128, carrier=carrier)


def _noisy_record(clean_index: int) -> MultiChannelRecord:
    rng = np.random.default_rng(clean_index)
    channels = []
    for index, carrier in enumerate([18000.0, 19000.0, 20000.0, 21000.0]):
        if index == clean_index:
            iq = _arc_iq(seed=4, carrier=carrier)
        else:
            iq = IQSeries(i=rng.standard_normal(3840), q=rng.standard_normal(3840), rate=128, carrier=carrier)
        channels.append(ChannelData(carrier=carrier, iq=iq, phase=phase_of(iq)))
    return MultiChannelRecord(channels=channels, rate=128, segment_length=3840)


class TestWavelet:
    def test_band_ranges(self):
        bands = swt_decompose(np.zeros(3840)).band_ranges()
        assert bands[0] == (32.0, 64.0)
        assert bands[3] == (4.0, 8.0)
        assert bands[6] == (0.5, 1.0)
        assert bands[7] == (0.0, 0.5)

    def test_default_kept_bands_span_half_to_eight_hertz(self):
        ranges = swt_decompose(np.zeros(3840)).band_ranges()
        low, high = PurificationConfig().kept_bands
        kept = ranges[low - 1:high]
        assert min(lo for lo, _ in kept) == 0.5
        assert max(hi for _, hi in kept) == 8.0

    def test_all_bands_reconstruct_input(self):
        x = np.random.default_rng(0).standard_normal(3840)
        assert np.max(np.abs(swt_reconstruct(swt_decompose(x)) - x)) < 1e-8

    def test_band_filter_is_linear(self):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal((2, 3840))
        keep = range(4, 8)
        combined = swt_reconstruct(swt_decompose(2 * x - 3 * y), keep)
        separate = 2 * swt_reconstruct(swt_decompose(x), keep) - 3 * swt_reconstruct(swt_decompose(y), keep)
        np.testing.assert_allclose(combined, separate, atol=1e-9)

    def test_drift_is_suppressed(self):
        drift = np.sin(2 * np.pi * 0.05 * T)
        assert rms(remove_motion_artifacts(drift).samples) <= 0.1 * rms(drift)

    def test_cardiac_tone_survives(self):
        pulse = np.sin(2 * np.pi * 2.0 * T)
        ratio = rms(remove_motion_artifacts(pulse).samples) / rms(pulse)
        assert 10 ** (-1 / 20) <= ratio <= 10 ** (1 / 20)

    def test_length_must_be_multiple_of_128(self):
        with pytest.raises(ContractError):
            swt_decompose(np.zeros(3800))


class TestPurify:
    def test_clean_record(self, clean_record):
        segment = purify(clean_record)
        assert len(segment.samples) == 3840
        assert segment.rate == 128
        assert segment.source_carrier in clean_record.carriers
        trace = segment.provenance["purification"]
        assert trace["chosen_carrier"] == segment.source_carrier
        assert trace["static_elimination"] and trace["artifact_removal"]
        assert not trace["forced"]
        assert len(trace["scores"]) == 4

    def test_gate_blocks_noise(self, noise_record):
        with pytest.raises(QualityGateError):
            purify(noise_record)

    def test_force_bypasses_gate(self, noise_record):
        segment = purify(noise_record, force=True)
        assert len(segment.samples) == 3840
        assert segment.provenance["purification"]["forced"]

    def test_ablation_switches(self, clean_record):
        segment = purify(clean_record, static_elimination=False, artifact_removal=False)
        trace = segment.provenance["purification"]
        assert not trace["static_elimination"]
        assert not trace["artifact_removal"]
        assert "windows" not in trace
        assert segment.samples.mean() == pytest.approx(0.0, abs=1e-9)

    def test_custom_kept_bands(self, clean_record):
        config = PurificationConfig(kept_bands=(5, 6))
        segment = purify(clean_record, config=config)
        assert len(segment.samples) == 3840
