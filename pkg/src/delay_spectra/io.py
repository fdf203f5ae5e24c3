"""Spec files, deterministic JSON and CSV artifacts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import (
    DelaySystem,
    HistoryFunction,
    PerturbationSpec,
    validate_perturbation,
    validate_system,
)

__all__ = ["SpecFile", "load_spec", "parse_spec", "spec_to_dict", "dumps_json", "write_json", "write_csv"]


@dataclass(frozen=True)
class SpecFile:
    """A validated spec file: the system plus optional history and perturbation."""

    system: DelaySystem
    history: HistoryFunction | None = None
    perturbation: PerturbationSpec | None = None

    @property
    def pert(self) -> PerturbationSpec:
        return self.perturbation if self.perturbation is not None else PerturbationSpec.zero()

    @property
    def hist(self) -> HistoryFunction:
        if self.history is not None:
            return self.history
        return HistoryFunction.constant(np.ones(self.system.n), self.system.h)


def parse_spec(data: dict) -> SpecFile:
    """Validate a decoded spec document.

    Raises
    ------
    ValidationError
        With every problem found in the system, history and perturbation.
    """
    if not isinstance(data, dict):
        raise ValidationError(["spec document must be a JSON object"])
    system = validate_system(data)
    errors = []
    history = None
    if data.get("history") is not None:
        try:
            history = HistoryFunction.from_dict(data["history"], system.h, system.n)
            if history.n != system.n:
                errors.append(f"dimension mismatch: history has {history.n} components, system has {system.n}")
            elif history.h < system.h - 1e-12:
                errors.append(f"history covers [-{history.h}, 0] but the maximal delay is {system.h}")
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"history: {exc}")
    pert = None
    if data.get("perturbation") is not None:
        try:
            pert = validate_perturbation(PerturbationSpec.from_dict(data["perturbation"], system.n), system)
        except ValidationError as exc:
            errors.extend(exc.errors)
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"perturbation: {exc}")
    if errors:
        raise ValidationError(errors)
    return SpecFile(system, history, pert)


def load_spec(path) -> SpecFile:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"{path}: not valid JSON ({exc})"]) from exc
    return parse_spec(data)


def spec_to_dict(spec: SpecFile) -> dict:
    """Normalized document that :func:`parse_spec` maps back to an equal spec."""
    out = spec.system.to_dict()
    if spec.history is not None:
        out["history"] = spec.history.to_dict()
    if spec.perturbation is not None:
        out["perturbation"] = spec.perturbation.to_dict()
    return out


# ---------------------------------------------------------------------------
# deterministic JSON: floats always at 17 significant digits
# ---------------------------------------------------------------------------


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return f"{x:.17g}"


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return _encode({"re": obj.real, "im": obj.imag}, indent, level)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [_encode(v, indent, level + 1) for v in obj]
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(parts) + "]"
        return "[\n" + ",\n".join(pad + p for p in parts) + "\n" + end + "]"
    if hasattr(obj, "to_dict"):
        return _encode(obj.to_dict(), indent, level)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with every float at 17 significant digits.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
    """
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def write_csv(path, header, rows) -> None:
    """CSV with a header line and 17-significant-digit values."""
    lines = [",".join(header)]
    for row in np.asarray(rows, dtype=float):
        lines.append(",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
