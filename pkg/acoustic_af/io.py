"""
File formats of the pipeline artifacts and their provenance digests.

Artifacts are written deterministically: canonical JSON (sorted keys, fixed
indentation) and float32 WAV, so two runs with the same seed produce the
same bytes.
"""

import json
import logging
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path
from typing import Any, BinaryIO, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from cryptography.hazmat.primitives import hashes
from scipy.io import wavfile

from acoustic_af.config import PipelineConfig
from acoustic_af.errors import ContractError, ScenarioParseError
from acoustic_af.records import (
    AudioBuffer,
    ChannelData,
    IQSeries,
    MultiChannelRecord,
    PhaseSeries,
    PulseSegment,
    Rhythm,
)

logger = logging.getLogger(__name__)

RECORD_FORMAT = "acoustic-af/record/1"
SEGMENT_FORMAT = "acoustic-af/segment/1"


def sha256_digest(data: Union[bytes, Path]) -> str:
    if isinstance(data, Path):
        data = data.read_bytes()
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return "sha256:" + digest.finalize().hex()


def provenance(config: PipelineConfig, inputs: Iterable[Path] = (), **extra: Any) -> Dict[str, Any]:
    """Resolved config plus digests of every input file, keyed by file name"""
    return {
        "config": config.to_dict(),
        "inputs": {Path(path).name: sha256_digest(Path(path)) for path in inputs},
        **extra,
    }


def dumps(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding="utf-8")
    return path


def read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"{path}: {e.msg}", line=e.lineno) from e


def sidecar_path(wav_path: Path) -> Path:
    return Path(wav_path).with_suffix(".json")


def _write_wav(target: Union[Path, BinaryIO], audio: AudioBuffer, name: str) -> float:
    peak = float(np.max(np.abs(audio.samples))) if len(audio.samples) else 0.0
    scale = 1.0
    if peak > 1.0:
        scale = 1.0 / peak
        logger.warning("%s: peak %.3f exceeds full scale, rescaled by %.6f", name, peak, scale)
    wavfile.write(target, int(audio.sample_rate), (audio.samples * scale).astype("<f4"))
    return scale


def encode_wav(audio: AudioBuffer) -> Tuple[bytes, float]:
    """In-memory float32 WAV and the applied scale factor"""
    buffer = BytesIO()
    scale = _write_wav(buffer, audio, "<memory>")
    return buffer.getvalue(), scale


def decode_wav(source: Union[Path, bytes], name: str = "<memory>") -> AudioBuffer:
    """Mono WAV of any PCM or float sample format, as float samples in [-1, 1]"""
    try:
        sample_rate, data = wavfile.read(BytesIO(source) if isinstance(source, bytes) else source)
    except ValueError as e:
        raise ContractError(f"{name}: not a readable WAV file: {e}") from e
    if data.ndim != 1:
        raise ContractError(f"{name}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        samples = data.astype(np.float64)
    return AudioBuffer(samples=samples, sample_rate=int(sample_rate))


def write_recording(path: Path, audio: AudioBuffer, sidecar: Optional[Dict[str, Any]] = None) -> Path:
    """Mono float32 WAV; samples beyond [-1, 1] are rescaled and the factor recorded"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scale = _write_wav(path, audio, path.name)
    if sidecar is not None:
        write_json(sidecar_path(path), {**sidecar, "sample_rate": int(audio.sample_rate), "scale": scale})
    return path


def read_recording(path: Path) -> Tuple[AudioBuffer, Optional[Dict[str, Any]]]:
    path = Path(path)
    audio = decode_wav(path, path.name)
    sidecar = read_json(sidecar_path(path)) if sidecar_path(path).exists() else None
    return audio, sidecar


def _floats(values: Optional[np.ndarray]) -> Optional[List[float]]:
    return None if values is None else [float(v) for v in values]


def record_to_dict(record: MultiChannelRecord) -> Dict[str, Any]:
    channels = []
    for channel in record.channels:
        channels.append({
            "carrier": channel.carrier,
            "valid": channel.valid,
            "reason": channel.reason,
            "i": _floats(channel.iq.i) if channel.iq is not None else None,
            "q": _floats(channel.iq.q) if channel.iq is not None else None,
            "phase": _floats(channel.phase.phase) if channel.phase is not None else None,
        })
    return {
        "format": RECORD_FORMAT,
        "header": {
            "carriers": record.carriers,
            "rate": record.rate,
            "segment_length": record.segment_length,
            "label": record.label.value if record.label else None,
        },
        "channels": channels,
        "provenance": record.provenance,
    }


def record_from_dict(payload: Dict[str, Any]) -> MultiChannelRecord:
    if payload.get("format") != RECORD_FORMAT:
        raise ContractError(f"not a multi-channel record (format {payload.get('format')!r})")
    try:
        return _record_fields(payload)
    except (KeyError, TypeError, ValueError) as e:
        raise ContractError(f"malformed multi-channel record: {type(e).__name__} {e}") from e


def _record_fields(payload: Dict[str, Any]) -> MultiChannelRecord:
    header = payload["header"]
    rate = header["rate"]
    channels = []
    for entry in payload["channels"]:
        iq = None
        if entry["i"] is not None:
            iq = IQSeries(i=np.array(entry["i"]), q=np.array(entry["q"]), rate=rate, carrier=entry["carrier"])
        phase = None
        if entry["phase"] is not None:
            phase = PhaseSeries(phase=np.array(entry["phase"]), rate=rate, carrier=entry["carrier"])
        channels.append(ChannelData(
            carrier=entry["carrier"], iq=iq, phase=phase, valid=entry["valid"], reason=entry["reason"]
        ))
    label = Rhythm(header["label"]) if header.get("label") else None
    return MultiChannelRecord(
        channels=channels, rate=rate, segment_length=header["segment_length"],
        label=label, provenance=payload.get("provenance", {}),
    )


def segment_to_dict(segment: PulseSegment) -> Dict[str, Any]:
    return {
        "format": SEGMENT_FORMAT,
        "rate": segment.rate,
        "source_carrier": segment.source_carrier,
        "label": segment.label.value if segment.label else None,
        "samples": _floats(segment.samples),
        "provenance": segment.provenance,
    }


def segment_from_dict(payload: Dict[str, Any]) -> PulseSegment:
    if payload.get("format") != SEGMENT_FORMAT:
        raise ContractError(f"not a pulse segment (format {payload.get('format')!r})")
    try:
        return PulseSegment(
            samples=np.array(payload["samples"], dtype=np.float64),
            rate=payload["rate"],
            source_carrier=payload.get("source_carrier"),
            label=Rhythm(payload["label"]) if payload.get("label") else None,
            provenance=payload.get("provenance", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ContractError(f"malformed pulse segment: {type(e).__name__} {e}") from e


@dataclass
class ManifestEntry:
    path: Path
    label: Rhythm
    subject: str
    scenario: Optional[str] = None

    def to_dict(self, relative_to: Optional[Path] = None) -> Dict[str, Any]:
        path = self.path
        if relative_to is not None:
            try:
                path = path.relative_to(relative_to)
            except ValueError:
                pass
        return {"path": path.as_posix(), "label": self.label.value,
                "subject": self.subject, "scenario": self.scenario}


def write_manifest(path: Path, entries: Iterable[ManifestEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(entry.to_dict(path.parent), sort_keys=True) for entry in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: Path) -> List[ManifestEntry]:
    """One JSON object per line: path, label, subject, scenario"""
    path = Path(path)
    entries = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            item = json.loads(line)
            entries.append(ManifestEntry(
                path=(path.parent / item["path"]),
                label=Rhythm(item["label"]),
                subject=str(item["subject"]),
                scenario=item.get("scenario"),
            ))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ScenarioParseError(f"{path}: bad manifest entry: {e}", line=number) from e
    return entries
