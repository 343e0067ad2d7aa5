from collections.abc import Generator
from typing import Any, Dict

import requests
from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from acoustic_af.detector import predict
from acoustic_af.errors import AcousticAFError
from acoustic_af.extraction import extract_all
from acoustic_af.quality import assess
from tool_utils import fetch_audio, fetch_model, get_logger, model_url, pipeline_config

logger = get_logger(__name__)


class DetectAFTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage]:

        response_data: Dict[str, Any] = {
            "success": False,
            "verdict": None,
            "quality_report": None,
            "message": ""
        }

        # --- 1. Retrieve & Validate Inputs ---
        audio_url = tool_parameters.get("audio_url")
        if not audio_url:
            response_data["message"] = "Fatal Error: audio_url is required but was not provided."
            yield self.create_json_message(response_data)
            return

        credentials = self.runtime.credentials
        url = model_url(tool_parameters, credentials)
        if not url:
            response_data["message"] = "Fatal Error: no detector model. Pass model_url or set one in the provider settings."
            yield self.create_json_message(response_data)
            return
        force = bool(tool_parameters.get("force", False))

        try:
            config = pipeline_config(credentials)
        except AcousticAFError as e:
            response_data["message"] = f"Fatal Error: Invalid provider settings: {str(e)}"
            yield self.create_json_message(response_data)
            return

        # --- 2. Fetch model and recording ---
        try:
            model = fetch_model(url)
            audio = fetch_audio(audio_url)
        except (requests.exceptions.RequestException, ValueError, AcousticAFError) as e:
            response_data["message"] = f"Fatal Error: Download failed: {str(e)}"
            yield self.create_json_message(response_data)
            return

        # --- 3. Extract, gate, purify and classify ---
        try:
            record = extract_all(audio, config.probe, config.extraction)
            report = assess(record, config.quality)
            prediction = predict(model, record, quality_report=report, force=force, pipeline=config)
        except AcousticAFError as e:
            response_data["message"] = f"Fatal Error: Detection failed: {str(e)}"
            yield self.create_json_message(response_data)
            return

        logger.info("verdict %s (p_af=%s)", prediction.label, prediction.probability_af)
        response_data["success"] = True
        response_data["verdict"] = prediction.to_dict()
        response_data["quality_report"] = report.to_dict()
        if prediction.abstained:
            response_data["message"] = f"No verdict: the recording failed the quality gate ({report.guidance})."
        else:
            response_data["message"] = f"Verdict: {prediction.label} (probability of AF {prediction.probability_af:.3f})."
        yield self.create_json_message(response_data)
