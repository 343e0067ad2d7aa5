"""
1D residual network that labels 30 s pulse waves as AF or non-AF.

Layout (kernel 32 everywhere, 16 channels):
    input conv (stride 1) -> 6 residual blocks with strides 1,4,1,4,1,4
    -> batch-norm -> ReLU -> flatten (16 x 60) -> dense (2) -> softmax
"""

import copy
import json
import logging
import math
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from cryptography.hazmat.primitives import hashes
from sklearn.metrics import f1_score
from torch import nn

from acoustic_af.config import DetectorConfig, PipelineConfig, TrainConfig
from acoustic_af.errors import (
    ConfigurationError,
    ContractError,
    CorruptModelError,
    DegenerateSignalError,
    ModelVersionError,
    TrainingDivergedError,
)
from acoustic_af.purification import purify
from acoustic_af.quality import QualityReport, assess
from acoustic_af.records import MultiChannelRecord, PulseSegment

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"AAFD"
MODEL_FORMAT_VERSION = 1
ARCHITECTURE = "af-resnet1d"
CLASS_NAMES = ("non-AF", "AF")
ABSTAIN = "abstain"
TENSOR_DTYPES = {"float32": "<f4", "float64": "<f8"}


def zscore(segment: Union[PulseSegment, np.ndarray, Sequence[float]]) -> np.ndarray:
    """Standardize with the population standard deviation"""
    values = segment.samples if isinstance(segment, PulseSegment) else np.asarray(segment, dtype=np.float64)
    std = values.std()
    if std == 0 or not np.isfinite(std):
        raise DegenerateSignalError("cannot standardize a constant segment")
    return (values - values.mean()) / std


class SameConv1d(nn.Module):
    """Conv1d with fixed 'same' padding: (k-1)//2 left, the rest right"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1):
        super().__init__()
        self.left = (kernel_size - 1) // 2
        self.right = kernel_size - 1 - self.left
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size, stride=stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.pad(x, (self.left, self.right)))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, kernel_size: int, stride: int, momentum: float, eps: float):
        super().__init__()
        self.conv1 = SameConv1d(channels, channels, kernel_size, stride)
        self.bn1 = nn.BatchNorm1d(channels, momentum=momentum, eps=eps)
        self.conv2 = SameConv1d(channels, channels, kernel_size, 1)
        self.bn2 = nn.BatchNorm1d(channels, momentum=momentum, eps=eps)
        self.shortcut = nn.Identity() if stride == 1 else nn.Conv1d(channels, channels, 1, stride=stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def output_length(length: int, strides: Sequence[int]) -> int:
    for stride in strides:
        length = math.ceil(length / stride)
    return length


class AFResNet(nn.Module):
    def __init__(self, config: DetectorConfig):
        super().__init__()
        # torch keeps (1 - momentum) of the running statistic
        momentum = 1.0 - config.bn_momentum
        self.input_conv = SameConv1d(1, config.channels, config.kernel_size)
        self.blocks = nn.ModuleList(
            ResidualBlock(config.channels, config.kernel_size, stride, momentum, config.bn_epsilon)
            for stride in config.strides
        )
        self.head_bn = nn.BatchNorm1d(config.channels, momentum=momentum, eps=config.bn_epsilon)
        self.dense = nn.Linear(config.channels * output_length(config.input_length, config.strides), 2)
        for module in self.modules():
            if isinstance(module, (nn.Conv1d, nn.Linear)):
                nn.init.kaiming_uniform_(module.weight, a=math.sqrt(5))
                nn.init.zeros_(module.bias)

    def features(self, x: torch.Tensor) -> List[torch.Tensor]:
        """Output of the input conv and of every residual block"""
        outputs = [self.input_conv(x)]
        for block in self.blocks:
            outputs.append(block(outputs[-1]))
        return outputs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        out = F.relu(self.head_bn(self.features(x)[-1]))
        return self.dense(out.flatten(1))


@dataclass
class DetectorModel:
    network: AFResNet
    config: DetectorConfig
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.network.parameters()).dtype

    def tensor(self, batch: np.ndarray) -> torch.Tensor:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 1:
            batch = batch[None, :]
        if batch.shape[-1] != self.config.input_length:
            raise ContractError(f"detector expects {self.config.input_length} samples, got {batch.shape[-1]}")
        return torch.as_tensor(batch, dtype=self.dtype).unsqueeze(1)

    def feature_shapes(self, segment: np.ndarray) -> List[Tuple[int, int]]:
        self.network.eval()
        with torch.no_grad():
            return [tuple(f.shape[1:]) for f in self.network.features(self.tensor(segment))]


def build_model(config: Optional[DetectorConfig] = None, seed: int = 0, dtype: torch.dtype = torch.float32) -> DetectorModel:
    config = config or DetectorConfig()
    torch.manual_seed(seed)
    network = AFResNet(config).to(dtype)
    return DetectorModel(network=network, config=config, metadata={"init_seed": seed})


def softmax(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)


def forward(model: DetectorModel, segment: np.ndarray) -> np.ndarray:
    """Class probabilities (non-AF, AF) of one normalized segment, inference mode"""
    model.network.eval()
    with torch.no_grad():
        probabilities = softmax(model.network(model.tensor(segment)))
    return probabilities[0].double().numpy()


def forward_batch(model: DetectorModel, segments: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.network.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(segments), batch_size):
            logits = model.network(model.tensor(segments[start:start + batch_size]))
            outputs.append(softmax(logits).double().numpy())
    return np.concatenate(outputs) if outputs else np.zeros((0, 2))


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse class frequency, scaled so a balanced set gets weight 1"""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    weights = np.ones(2)
    present = counts > 0
    weights[present] = len(labels) / (2 * counts[present])
    return weights


def _loss(model: DetectorModel, batch: torch.Tensor, labels: torch.Tensor, weights: Optional[np.ndarray]) -> torch.Tensor:
    weight = None if weights is None else torch.as_tensor(weights, dtype=model.dtype)
    loss = F.cross_entropy(model.network(batch), labels, weight=weight)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"loss is {loss.item()}")
    return loss


@contextmanager
def _frozen_statistics(network: nn.Module) -> Iterator[None]:
    """Training-mode passes inside leave the batch-norm running statistics untouched"""
    buffers = {name: value.clone() for name, value in network.named_buffers()}
    network.train()
    try:
        yield
    finally:
        with torch.no_grad():
            for name, value in network.named_buffers():
                value.copy_(buffers[name])


def batch_loss(
    model: DetectorModel, batch: np.ndarray, labels: Sequence[int], weights: Optional[np.ndarray] = None
) -> float:
    """Training-mode loss of one batch without touching gradients or statistics"""
    with _frozen_statistics(model.network), torch.no_grad():
        loss = _loss(model, model.tensor(batch), torch.as_tensor(np.asarray(labels), dtype=torch.long), weights)
    return float(loss.item())


def loss_and_gradients(
    model: DetectorModel, batch: np.ndarray, labels: Sequence[int], weights: Optional[np.ndarray] = None
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean (optionally class-weighted) cross-entropy in training mode and its
    gradient for every parameter. Batch-norm running statistics are left as
    they were.
    """
    with _frozen_statistics(model.network):
        model.network.zero_grad()
        loss = _loss(model, model.tensor(batch), torch.as_tensor(np.asarray(labels), dtype=torch.long), weights)
        loss.backward()
    gradients = {
        name: parameter.grad.detach().double().numpy().copy()
        for name, parameter in model.network.named_parameters()
    }
    return float(loss.item()), gradients


@dataclass
class LabeledSegments:
    """Standardized segments with class indices (1 = AF) and optional grouping"""

    samples: np.ndarray
    labels: np.ndarray
    subjects: List[str] = field(default_factory=list)
    names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_segments(cls, segments: Sequence[PulseSegment], subjects: Optional[Sequence[str]] = None,
                      names: Optional[Sequence[str]] = None) -> "LabeledSegments":
        if any(segment.label is None for segment in segments):
            raise ConfigurationError("every training segment carries a label")
        samples = np.stack([zscore(segment) for segment in segments]) if segments else np.zeros((0, 0))
        labels = np.array([segment.label.class_index for segment in segments], dtype=np.int64)
        return cls(samples=samples, labels=labels, subjects=list(subjects or []), names=list(names or []))

    def subset(self, indices: Sequence[int]) -> "LabeledSegments":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledSegments(
            samples=self.samples[indices],
            labels=self.labels[indices],
            subjects=[self.subjects[i] for i in indices] if self.subjects else [],
            names=[self.names[i] for i in indices] if self.names else [],
        )


def train(
    model: DetectorModel, train_set: LabeledSegments, validation_set: LabeledSegments,
    config: Optional[TrainConfig] = None,
) -> Tuple[DetectorModel, List[Dict[str, Any]]]:
    """
    Adam with early stopping on validation F1 (AF positive).

    Training continues from the model's current parameters, so a loaded model
    can be fine-tuned. The returned model carries the parameters of the best
    validation epoch.
    """
    config = config or TrainConfig()
    if len(train_set) == 0 or len(validation_set) == 0:
        raise ConfigurationError("non-empty training and validation splits",
                                 f"{len(train_set)} train / {len(validation_set)} validation")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    weights = class_weights(train_set.labels) if config.class_weighted else None
    optimizer = torch.optim.Adam(model.network.parameters(), lr=config.learning_rate)
    inputs = model.tensor(train_set.samples)
    targets = torch.as_tensor(train_set.labels, dtype=torch.long)

    history: List[Dict[str, Any]] = []
    best_f1, best_epoch, best_state = -1.0, 0, copy.deepcopy(model.network.state_dict())
    for epoch in range(1, config.max_epochs + 1):
        model.network.train()
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = torch.as_tensor(order[start:start + config.batch_size])
            optimizer.zero_grad()
            loss = _loss(model, inputs[batch], targets[batch], weights)
            loss.backward()
            optimizer.step()
            losses.append(loss.item() * len(batch))
        predictions = forward_batch(model, validation_set.samples).argmax(axis=1)
        score = float(f1_score(validation_set.labels, predictions, pos_label=1, zero_division=0))
        history.append({"epoch": epoch, "loss": float(np.sum(losses) / len(order)), "val_f1": score})
        logger.info("epoch %d loss %.4f val_f1 %.4f", epoch, history[-1]["loss"], score)
        if score > best_f1:
            best_f1, best_epoch = score, epoch
            best_state = copy.deepcopy(model.network.state_dict())
        elif epoch - best_epoch >= config.patience:
            logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    model.network.load_state_dict(best_state)
    model.metadata.update({
        "best_epoch": best_epoch,
        "best_val_f1": best_f1,
        "history": history,
        "class_weights": None if weights is None else [float(w) for w in weights],
        "training": config.model_dump(mode="json"),
    })
    return model, history


@dataclass
class Prediction:
    label: str
    probability_af: Optional[float] = None
    reason: Optional[str] = None

    @property
    def abstained(self) -> bool:
        return self.label == ABSTAIN

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "probability_af": self.probability_af, "reason": self.reason}


def predict(
    model: DetectorModel,
    item: Union[PulseSegment, MultiChannelRecord],
    quality_report: Optional[QualityReport] = None,
    force: bool = False,
    pipeline: Optional[PipelineConfig] = None,
) -> Prediction:
    """
    AF / non-AF verdict for a purified segment or a raw multi-channel record.

    A record is assessed and purified first; a failed quality gate yields an
    abstain verdict unless forced.
    """
    if isinstance(item, MultiChannelRecord):
        quality_config = pipeline.quality if pipeline is not None else None
        quality_report = quality_report or assess(item, quality_config)
        if not quality_report.passed and not force:
            return Prediction(label=ABSTAIN, reason="; ".join(quality_report.reasons) or "quality gate failed")
        item = purify(item, quality_report, force=force,
                      config=pipeline.purification if pipeline is not None else None,
                      quality=quality_config)
    elif quality_report is not None and not quality_report.passed and not force:
        return Prediction(label=ABSTAIN, reason="; ".join(quality_report.reasons) or "quality gate failed")

    probabilities = forward(model, zscore(item))
    return Prediction(label=CLASS_NAMES[int(np.argmax(probabilities))], probability_af=float(probabilities[1]))


def predict_batch(model: DetectorModel, segments: Union[Sequence[PulseSegment], np.ndarray],
                  standardized: bool = False) -> List[Prediction]:
    """Verdicts for many purified segments in one batched forward pass"""
    if len(segments) == 0:
        return []
    samples = np.asarray(segments) if standardized else np.stack([zscore(s) for s in segments])
    probabilities = forward_batch(model, samples)
    return [
        Prediction(label=CLASS_NAMES[int(np.argmax(row))], probability_af=float(row[1]))
        for row in probabilities
    ]


def _digest(payload: bytes) -> bytes:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(payload)
    return digest.finalize()


def save_model(model: DetectorModel, path: Path) -> Path:
    """
    Versioned container: magic, format version, header length, JSON header
    (architecture, tensor dtype, tensor names and shapes, metadata),
    little-endian tensors in header order, SHA-256 of everything before it.
    """
    dtype = str(model.dtype).removeprefix("torch.")
    if dtype not in TENSOR_DTYPES:
        raise ConfigurationError(f"model dtype in {sorted(TENSOR_DTYPES)}", dtype)
    state = {name: value for name, value in model.network.state_dict().items()
             if not name.endswith("num_batches_tracked")}
    header = {
        "architecture": ARCHITECTURE,
        "config": model.config.model_dump(mode="json"),
        "dtype": dtype,
        "tensors": [[name, list(value.shape)] for name, value in state.items()],
        "metadata": model.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    wire = TENSOR_DTYPES[dtype]
    body = b"".join(value.detach().cpu().numpy().astype(wire).tobytes() for value in state.values())
    payload = MODEL_MAGIC + struct.pack("<II", MODEL_FORMAT_VERSION, len(header_bytes)) + header_bytes + body
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload + _digest(payload))
    return path


def load_model(path: Path) -> DetectorModel:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MODEL_MAGIC:
        raise CorruptModelError(f"{path}: not a detector model file")
    version, header_length = struct.unpack("<II", raw[4:12])
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {MODEL_FORMAT_VERSION}")
    if len(raw) < 12 + header_length + 32:
        raise CorruptModelError(f"{path}: truncated header")
    payload, digest = raw[:-32], raw[-32:]
    if _digest(payload) != digest:
        raise CorruptModelError(f"{path}: checksum mismatch (truncated or modified)")
    try:
        header = json.loads(raw[12:12 + header_length].decode("utf-8"))
        config = DetectorConfig.model_validate(header["config"])
        dtype = header.get("dtype", "float32")
        wire = np.dtype(TENSOR_DTYPES[dtype])
        tensors = [(str(name), [int(size) for size in shape]) for name, shape in header["tensors"]]
    except (ValueError, KeyError, TypeError, AttributeError) as e:
        raise CorruptModelError(f"{path}: unreadable header: {e}") from e
    if header.get("architecture") != ARCHITECTURE:
        raise CorruptModelError(f"{path}: unknown architecture {header.get('architecture')!r}")

    model = build_model(config, dtype=getattr(torch, dtype))
    expected = {name for name in model.network.state_dict() if not name.endswith("num_batches_tracked")}
    offset = 12 + header_length
    state = {}
    for name, shape in tensors:
        width = (int(np.prod(shape)) if shape else 1) * wire.itemsize
        chunk = payload[offset:offset + width]
        if len(chunk) != width:
            raise CorruptModelError(f"{path}: tensor {name} truncated")
        state[name] = torch.from_numpy(np.frombuffer(chunk, dtype=wire).astype(dtype).reshape(shape))
        offset += width
    if offset != len(payload) or set(state) != expected:
        raise CorruptModelError(f"{path}: tensor table does not match the architecture")
    model.network.load_state_dict(state, strict=False)
    model.metadata = header.get("metadata", {})
    return model
