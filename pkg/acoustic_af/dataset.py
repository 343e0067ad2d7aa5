"""
Recording -> purified segment runs and manifest-driven datasets.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from acoustic_af.config import PipelineConfig
from acoustic_af.detector import LabeledSegments
from acoustic_af.errors import AcousticAFError
from acoustic_af.extraction import extract_all
from acoustic_af.io import ManifestEntry, read_json, read_recording, segment_from_dict
from acoustic_af.purification import purify
from acoustic_af.quality import QualityReport, assess
from acoustic_af.records import AudioBuffer, MultiChannelRecord, PulseSegment, Rhythm

logger = logging.getLogger(__name__)


@dataclass
class PipelineRun:
    record: MultiChannelRecord
    report: QualityReport
    segment: Optional[PulseSegment] = None

    @property
    def passed(self) -> bool:
        return self.report.passed


def run_pipeline(
    audio: AudioBuffer,
    config: Optional[PipelineConfig] = None,
    label: Optional[Rhythm] = None,
    force: bool = False,
    static_elimination: bool = True,
    artifact_removal: bool = True,
) -> PipelineRun:
    """Extract, assess and (if the gate passes or force is set) purify one recording"""
    config = config or PipelineConfig()
    record = extract_all(audio, config.probe, config.extraction)
    record.label = label
    report = assess(record, config.quality)
    run = PipelineRun(record=record, report=report)
    if report.passed or force:
        run.segment = purify(
            record, report, force=force, config=config.purification, quality=config.quality,
            static_elimination=static_elimination, artifact_removal=artifact_removal,
        )
    return run


def load_segment(
    path: Path, config: PipelineConfig, label: Optional[Rhythm] = None, **switches: Any
) -> Tuple[Optional[PulseSegment], Optional[str]]:
    """
    A manifest path is either a purified segment (.json) or a recording (.wav)
    that is run through the pipeline. Returns (segment, rejection reason).
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        segment = segment_from_dict(read_json(path))
        if label is not None:
            segment.label = label
        return segment, None
    audio, sidecar = read_recording(path)
    if label is None and sidecar and sidecar.get("label"):
        label = Rhythm(sidecar["label"])
    run = run_pipeline(audio, config, label=label, **switches)
    if run.segment is None:
        return None, "; ".join(run.report.reasons) or "quality gate failed"
    return run.segment, None


@dataclass
class ManifestDataset:
    data: LabeledSegments
    rejected: Dict[str, str] = field(default_factory=dict)
    subjects: List[str] = field(default_factory=list)


def build_dataset(
    entries: Sequence[ManifestEntry], config: Optional[PipelineConfig] = None, **switches: Any
) -> ManifestDataset:
    """
    Labeled, standardized segments for every manifest entry that survives the
    quality gate. `subjects` lists every subject named in the manifest,
    including those whose records were all rejected.
    """
    config = config or PipelineConfig()
    segments, subjects, names = [], [], []
    rejected: Dict[str, str] = {}
    for entry in entries:
        try:
            segment, reason = load_segment(entry.path, config, entry.label, **switches)
        except (AcousticAFError, OSError) as e:
            segment, reason = None, str(e)
        if segment is None:
            logger.warning("%s rejected: %s", entry.path.name, reason)
            rejected[entry.path.name] = reason
            continue
        segment.label = entry.label
        segments.append(segment)
        subjects.append(entry.subject)
        names.append(entry.path.name)
    logger.info("dataset: %d segments, %d rejected", len(segments), len(rejected))
    return ManifestDataset(
        data=LabeledSegments.from_segments(segments, subjects=subjects, names=names),
        rejected=rejected,
        subjects=sorted({entry.subject for entry in entries}),
    )
