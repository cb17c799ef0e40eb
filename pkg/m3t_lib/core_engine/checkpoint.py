"""
M3TC checkpoint files.

Layout (little-endian):

    b"M3TC"  u16 version  u32 manifest_length  manifest (YAML, UTF-8)
    u32 tensor_count
    per tensor: u16 name_length  name  u16 rank  u32 extents[rank]  float32 values

The manifest carries everything that is not a tensor: the configuration,
the vocabulary, step / epoch counters, the seeds, Adam hyperparameters and
the trainer state, plus the name and shape of every tensor that follows.
Adam moment buffers are stored as tensors named 'adam.m.<param>' and
'adam.v.<param>'.
"""
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import yaml

from m3t_lib.core.exceptions import CheckpointFormatError, ConfigError, ContractError
from m3t_lib.core_engine.config import ModelConfig
from m3t_lib.core_engine.model import M3TModel
from m3t_lib.core_engine.trainer import TrainerState
from m3t_lib.data_processing.vocabulary import Vocabulary
from m3t_lib.tensor.optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"M3TC"
VERSION = 1
_HEADER = struct.Struct("<4sHI")
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")
FIRST_MOMENT_PREFIX = "adam.m."
SECOND_MOMENT_PREFIX = "adam.v."


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    tensors: Dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    adam: Dict[str, Any] = field(default_factory=dict)
    trainer: Dict[str, Any] = field(default_factory=dict)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def adam_state(self) -> AdamState:
        hp = self.adam
        state = AdamState(lr=float(hp.get("lr", self.config.training.lr)),
                          beta1=float(hp.get("beta1", 0.9)), beta2=float(hp.get("beta2", 0.999)),
                          eps=float(hp.get("eps", 1e-8)), step=int(hp.get("step", self.step)))
        for name, values in self.tensors.items():
            if name.startswith(FIRST_MOMENT_PREFIX):
                state.first_moment[name[len(FIRST_MOMENT_PREFIX):]] = values.copy()
            elif name.startswith(SECOND_MOMENT_PREFIX):
                state.second_moment[name[len(SECOND_MOMENT_PREFIX):]] = values.copy()
        return state

    def trainer_state(self) -> TrainerState:
        return TrainerState.from_dict(self.trainer)


def _write_tensor(out: io.BytesIO, name: str, values: np.ndarray):
    raw = name.encode("utf-8")
    out.write(_U16.pack(len(raw)))
    out.write(raw)
    out.write(_U16.pack(values.ndim))
    for extent in values.shape:
        out.write(_U32.pack(extent))
    out.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def encode_checkpoint(model: M3TModel, vocab: Vocabulary, adam: Optional[AdamState] = None,
                      trainer: Optional[TrainerState] = None) -> bytes:
    tensors: Dict[str, np.ndarray] = {name: t.data for name, t in model.state_parameters().items()}
    if adam is not None:
        for name in sorted(adam.first_moment):
            tensors[FIRST_MOMENT_PREFIX + name] = adam.first_moment[name]
            tensors[SECOND_MOMENT_PREFIX + name] = adam.second_moment[name]

    trainer = trainer or TrainerState()
    seed = model.config.training.seed
    manifest = {
        "format": "M3TC",
        "version": VERSION,
        "step": adam.step if adam else 0,
        "epoch": trainer.epoch,
        "rng": {"seed": seed, "epoch": trainer.epoch, "step": adam.step if adam else 0},
        "adam": adam.hyperparameters() if adam else {},
        "trainer": trainer.to_dict(),
        "config": model.config.to_dict(),
        "vocab": vocab.to_dict(),
        "tensors": [{"name": n, "shape": list(v.shape)} for n, v in tensors.items()],
    }
    text = yaml.safe_dump(manifest, default_flow_style=False, sort_keys=False).encode("utf-8")

    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, VERSION, len(text)))
    out.write(text)
    out.write(_U32.pack(len(tensors)))
    for name, values in tensors.items():
        _write_tensor(out, name, values)
    return out.getvalue()


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob, self.pos, self.source = blob, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"{self.source}: truncated at byte {self.pos} (needed {n} more)")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct) -> Tuple:
        return fmt.unpack(self.take(fmt.size))


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(blob, source)
    magic, version, manifest_len = r.unpack(_HEADER)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{source}: unsupported checkpoint version {version}")
    try:
        manifest = yaml.safe_load(r.take(manifest_len).decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise CheckpointFormatError(f"{source}: unreadable manifest: {e}") from e
    if not isinstance(manifest, dict) or "config" not in manifest or "vocab" not in manifest:
        raise CheckpointFormatError(f"{source}: manifest lacks config or vocabulary")

    (count,) = r.unpack(_U32)
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack(_U16)
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(f"{source}: tensor name is not UTF-8") from e
        (rank,) = r.unpack(_U16)
        shape = tuple(r.unpack(_U32)[0] for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(blob):
        raise CheckpointFormatError(f"{source}: {len(blob) - r.pos} trailing bytes")

    declared = {t["name"]: tuple(t["shape"]) for t in manifest.get("tensors", [])}
    for name, values in tensors.items():
        if name in declared and declared[name] != values.shape:
            raise CheckpointFormatError(f"{source}: tensor '{name}' has shape {values.shape}, "
                                        f"manifest says {declared[name]}")

    try:
        config = ModelConfig.from_dict(manifest["config"]).validate()
        vocab = Vocabulary.from_dict(manifest["vocab"])
    except (ConfigError, KeyError, TypeError) as e:
        raise CheckpointFormatError(f"{source}: invalid manifest: {e}") from e
    return Checkpoint(config=config, vocab=vocab, tensors=tensors,
                      step=int(manifest.get("step", 0)), epoch=int(manifest.get("epoch", 0)),
                      adam=dict(manifest.get("adam") or {}), trainer=dict(manifest.get("trainer") or {}))


def save_checkpoint(path: Union[str, Path], model: M3TModel, vocab: Vocabulary,
                    adam: Optional[AdamState] = None, trainer: Optional[TrainerState] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(model, vocab, adam, trainer)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    logger.info(f"Checkpoint written to {path} ({len(blob)} bytes, step {adam.step if adam else 0})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))


def restore_model(checkpoint: Checkpoint, config: Optional[ModelConfig] = None) -> M3TModel:
    """
    Rebuilds the model of a checkpoint and loads its tensors.

    A different `config` may be passed to change evaluation or path settings;
    its model dimensions and ablation switches must match the stored ones.
    """
    config = config or checkpoint.config
    stored = checkpoint.config.to_dict()
    requested = config.to_dict()
    if requested["model"] != stored["model"]:
        raise CheckpointFormatError("model dimensions differ from those stored in the checkpoint")
    if requested["ablation"] != stored["ablation"]:
        raise ConfigError(f"ablation switches {requested['ablation']} differ from the trained variant "
                          f"{stored['ablation']}")
    model = M3TModel(config, len(checkpoint.vocab))
    try:
        model.load_parameters(checkpoint.parameters(), strict=True)
    except (ContractError, ValueError) as e:
        raise CheckpointFormatError(f"checkpoint tensors do not fit the model: {e}") from e
    return model

