"""
Shared helpers for the Acoustic AF Detection plugin tools.
Turns provider settings into a pipeline config and fetches recordings and
models given by URL.
"""

import logging
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional
from urllib.parse import urlparse

import requests
from dify_plugin.config.logger_format import plugin_logger_handler

from acoustic_af.config import PipelineConfig, load_config
from acoustic_af.detector import DetectorModel, load_model
from acoustic_af.errors import ConfigurationError
from acoustic_af.io import decode_wav, sha256_digest
from acoustic_af.records import AudioBuffer

REQUEST_TIMEOUT = 30
MAX_DOWNLOAD_BYTES = 64 * 1024 * 1024


def get_logger(name: str) -> logging.Logger:
    logger = logging.getLogger(name)
    logger.setLevel(logging.INFO)
    if plugin_logger_handler not in logger.handlers:
        logger.addHandler(plugin_logger_handler)
    return logger


logger = get_logger(__name__)


def _setting(credentials: Dict[str, Any], name: str, cast, default):
    raw = credentials.get(name)
    if raw is None or str(raw).strip() == "":
        return default
    try:
        return cast(str(raw).strip())
    except ValueError:
        raise ConfigurationError(f"{name} is a valid {cast.__name__}", repr(raw))


def pipeline_config(credentials: Dict[str, Any]) -> PipelineConfig:
    """Provider settings (quality thresholds, seed) on top of the defaults"""
    stability = _setting(credentials, "stability_threshold", float, 0.90)
    cardiac = _setting(credentials, "cardiac_threshold", float, 0.70)
    seed = _setting(credentials, "seed", int, 0)
    for name, value in (("stability_threshold", stability), ("cardiac_threshold", cardiac)):
        if not 0 < value < 1:
            raise ConfigurationError(f"{name} in (0, 1)", f"{value}")
    if seed < 0:
        raise ConfigurationError("seed >= 0", f"{seed}")
    return load_config(overrides={
        "seed": seed,
        "quality": {"stability_threshold": stability, "cardiac_threshold": cardiac},
        "training": {"seed": seed},
    })


def check_url(url: str) -> str:
    parsed = urlparse(url)
    if parsed.scheme not in ("http", "https") or not parsed.netloc:
        raise ValueError(f"expected an http(s) URL, got {url!r}")
    return url


def download(url: str) -> bytes:
    response = requests.get(check_url(url), timeout=REQUEST_TIMEOUT)
    response.raise_for_status()
    if len(response.content) > MAX_DOWNLOAD_BYTES:
        raise ValueError(f"download exceeds {MAX_DOWNLOAD_BYTES} bytes")
    return response.content


def fetch_audio(url: str) -> AudioBuffer:
    data = download(url)
    logger.info("fetched %d bytes of audio (%s)", len(data), sha256_digest(data))
    return decode_wav(data, name=urlparse(url).path.rsplit("/", 1)[-1] or "<download>")


def fetch_model(url: str) -> DetectorModel:
    data = download(url)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.aafd"
        path.write_bytes(data)
        model = load_model(path)
    logger.info("loaded detector model (%s)", sha256_digest(data))
    return model


def model_url(tool_parameters: Dict[str, Any], credentials: Dict[str, Any]) -> Optional[str]:
    """Per-call model URL, else the provider default"""
    return tool_parameters.get("model_url") or credentials.get("model_url") or None
