from collections.abc import Generator
from typing import Any, Dict

import requests
from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from acoustic_af.errors import AcousticAFError
from acoustic_af.extraction import extract_all
from acoustic_af.quality import assess
from tool_utils import fetch_audio, get_logger, pipeline_config

logger = get_logger(__name__)


class AssessRecordingTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage]:

        response_data: Dict[str, Any] = {
            "success": False,
            "quality_report": None,
            "message": ""
        }

        # --- 1. Retrieve & Validate Required Input ---
        audio_url = tool_parameters.get("audio_url")
        if not audio_url:
            response_data["message"] = "Fatal Error: audio_url is required but was not provided."
            yield self.create_json_message(response_data)
            return

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

        # --- 3. Extract channels and run the quality gate ---
        try:
            record = extract_all(audio, config.probe, config.extraction)
            report = assess(record, config.quality)
        except AcousticAFError as e:
            response_data["message"] = f"Fatal Error: Assessment failed: {str(e)}"
            yield self.create_json_message(response_data)
            return

        logger.info("assessed recording: pass=%s", report.passed)
        response_data["success"] = True
        response_data["quality_report"] = report.to_dict()
        if report.passed:
            response_data["message"] = "Recording passed the quality gate."
        else:
            response_data["message"] = f"Recording failed the quality gate: {report.guidance}."
        yield self.create_json_message(response_data)
