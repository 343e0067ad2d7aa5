from collections.abc import Generator
from typing import Any, Dict

import numpy as np
import requests
from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from acoustic_af.dataset import run_pipeline
from acoustic_af.errors import AcousticAFError
from acoustic_af.io import segment_to_dict
from tool_utils import fetch_audio, get_logger, pipeline_config

logger = get_logger(__name__)


class PurifyRecordingTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage]:

        response_data: Dict[str, Any] = {
            "success": False,
            "segment": None,
            "quality_report": None,
            "message": ""
        }

        # --- 1. Retrieve & Validate Inputs ---
        audio_url = tool_parameters.get("audio_url")
        if not audio_url:
            response_data["message"] = "Fatal Error: audio_url is required but was not provided."
            yield self.create_json_message(response_data)
            return
        force = bool(tool_parameters.get("force", False))
        include_samples = bool(tool_parameters.get("include_samples", False))

        try:
            config = pipeline_config(self.runtime.credentials)
        except AcousticAFError as e:
            response_data["message"] = f"Fatal Error: Invalid provider settings: {str(e)}"
            yield self.create_json_message(response_data)
            return

        # --- 2. Fetch the recording ---
        try:
            audio = fetch_audio(audio_url)
        except (requests.exceptions.RequestException, ValueError, AcousticAFError) as e:
            response_data["message"] = f"Fatal Error: Could not fetch the recording: {str(e)}"
            yield self.create_json_message(response_data)
            return

        # --- 3. Extract, gate and purify ---
        try:
            run = run_pipeline(audio, config, force=force)
        except AcousticAFError as e:
            response_data["message"] = f"Fatal Error: Purification failed: {str(e)}"
            yield self.create_json_message(response_data)
            return

        response_data["quality_report"] = run.report.to_dict()
        if run.segment is None:
            response_data["message"] = f"Recording failed the quality gate: {run.report.guidance}. Set force to purify anyway."
            yield self.create_json_message(response_data)
            return

        # --- 4. Summarize the purified pulse wave ---
        segment = run.segment
        trace = segment.provenance.get("purification", {})
        summary: Dict[str, Any] = {
            "source_carrier": segment.source_carrier,
            "rate": segment.rate,
            "length": len(segment.samples),
            "std": float(np.std(segment.samples)),
            "rectified_windows": trace.get("rectified_windows"),
            "scores": trace.get("scores"),
            "forced": trace.get("forced", False),
        }
        if include_samples:
            summary["samples"] = segment_to_dict(segment)["samples"]

        logger.info("purified recording on carrier %s", segment.source_carrier)
        response_data["success"] = True
        response_data["segment"] = summary
        response_data["message"] = f"Purified pulse wave from the {segment.source_carrier:.0f} Hz carrier."
        yield self.create_json_message(response_data)
