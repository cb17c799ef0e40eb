"""
Helpers for parameter containers.

Parameter groups are plain dataclasses whose fields are tensors, lists of
tensors or nested dataclasses; `collect_parameters` flattens them into the
dotted-name mapping used by the optimizer and the checkpoint writer.
"""
from dataclasses import fields, is_dataclass
from typing import Any, Dict

from m3t_lib.tensor.tensor import Tensor


def collect_parameters(prefix: str, container: Any) -> Dict[str, Tensor]:
    """Returns every trainable tensor under `container`, keyed 'prefix.field[.index]'."""
    found: Dict[str, Tensor] = {}

    def _visit(name: str, value: Any):
        if isinstance(value, Tensor):
            if value.requires_grad:
                value.name = name
                found[name] = value
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                _visit(f"{name}.{i}", item)
        elif is_dataclass(value):
            for f in fields(value):
                _visit(f"{name}.{f.name}", getattr(value, f.name))

    for f in fields(container):
        _visit(f"{prefix}.{f.name}" if prefix else f.name, getattr(container, f.name))
    return found
