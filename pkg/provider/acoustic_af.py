from typing import Any

from dify_plugin import ToolProvider
from dify_plugin.errors.tool import ToolProviderCredentialValidationError

from acoustic_af.errors import ConfigurationError
from tool_utils import check_url, pipeline_config


class AcousticAFProvider(ToolProvider):

    def _validate_credentials(self, credentials: dict[str, Any]) -> None:
        """
        Validate the provider settings for Acoustic AF Detection
        All settings are optional:
        1. Quality thresholds (stability score C, cardiac band ratio) in (0, 1)
        2. Root seed, a non-negative integer
        3. Default detector model URL (http or https)
        """
        try:
            pipeline_config(credentials)
        except ConfigurationError as e:
            raise ToolProviderCredentialValidationError(str(e))

        model_url = credentials.get("model_url")
        if model_url:
            try:
                check_url(model_url)
            except ValueError as e:
                raise ToolProviderCredentialValidationError(f"Invalid model URL: {str(e)}")
