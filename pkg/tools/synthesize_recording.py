from collections.abc import Generator
from typing import Any, Dict

from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from acoustic_af.config import ProbeConfig
from acoustic_af.errors import AcousticAFError
from acoustic_af.io import encode_wav
from acoustic_af.probe_sim import SCENARIO_PRESETS, scenario_preset, simulate_recording
from acoustic_af.records import Rhythm
from tool_utils import get_logger, pipeline_config

logger = get_logger(__name__)


class SynthesizeRecordingTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage]:

        response_data: Dict[str, Any] = {
            "success": False,
            "ground_truth": None,
            "message": ""
        }

        # --- 1. Retrieve & Validate Inputs ---
        rhythm = tool_parameters.get("rhythm")
        if rhythm not in (Rhythm.AF.value, Rhythm.NSR.value):
            response_data["message"] = "Fatal Error: rhythm must be 'AF' or 'NSR'."
            yield self.create_json_message(response_data)
            return

        scenario_name = tool_parameters.get("scenario") or "clean"
        if scenario_name not in SCENARIO_PRESETS:
            response_data["message"] = f"Fatal Error: unknown scenario '{scenario_name}'. Choose one of {sorted(SCENARIO_PRESETS)}."
            yield self.create_json_message(response_data)
            return

        try:
            config = pipeline_config(self.runtime.credentials)
            duration = float(tool_parameters.get("duration") or 30)
            seed = tool_parameters.get("seed")
            seed = config.seed if seed is None or seed == "" else int(seed)
        except (AcousticAFError, ValueError) as e:
            response_data["message"] = f"Fatal Error: Invalid parameters: {str(e)}"
            yield self.create_json_message(response_data)
            return

        # --- 2. Simulate the wrist channel ---
        try:
            probe = ProbeConfig(**{**config.probe.model_dump(), "duration": duration})
            recording = simulate_recording(
                Rhythm(rhythm), scenario_preset(scenario_name), probe=probe, seed=seed,
                scenario_name=scenario_name,
            )
            wav_bytes, scale = encode_wav(recording.audio)
        except (AcousticAFError, ValueError) as e:
            response_data["message"] = f"Fatal Error: Synthesis failed: {str(e)}"
            yield self.create_json_message(response_data)
            return

        logger.info("synthesized %s recording, scenario %s, seed %d", rhythm, scenario_name, seed)

        # --- 3. Yield the WAV and the ground truth ---
        yield self.create_blob_message(
            blob=wav_bytes,
            meta={"mime_type": "audio/wav", "filename": f"{rhythm}_{scenario_name}_{seed}.wav"},
        )
        response_data["success"] = True
        response_data["ground_truth"] = {**recording.sidecar(), "scale": scale}
        response_data["message"] = (
            f"Synthesized {duration:.0f} s {rhythm} recording ({scenario_name}), "
            f"{len(recording.beats.rr_intervals)} beats."
        )
        yield self.create_json_message(response_data)
