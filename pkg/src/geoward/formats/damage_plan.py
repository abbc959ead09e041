"""
Damage plan data structure.

A plan is the set of flat-weight indices forced to zero; it defines the
damage hyperplane W_d = {w : w_i = 0 for i in plan}.
"""

import json
from pathlib import Path
from typing import Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..core.exceptions import FormatError, InvalidInputError


class DamagePlan(BaseModel):
    """Sorted unique flat-weight indices to be zeroed."""

    model_config = ConfigDict(frozen=True)

    indices: Tuple[int, ...] = Field(default=(), description="Strictly increasing flat indices")
    description: str = Field(default="", description="Human-readable origin, e.g. 'layer1 nodes 0-7'")
    groups: Tuple[Tuple[int, ...], ...] = Field(
        default=(), description="Optional per-node index groups, in deletion order"
    )

    @field_validator("indices")
    @classmethod
    def _strictly_increasing(cls, indices: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(i < 0 for i in indices):
            raise ValueError("plan indices must be non-negative")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("plan indices must be strictly increasing")
        return indices

    @classmethod
    def from_indices(cls, indices, description: str = "", groups=()) -> "DamagePlan":
        """Build from any iterable of indices (sorted and de-duplicated)."""
        try:
            return cls(
                indices=tuple(sorted({int(i) for i in indices})),
                description=description,
                groups=tuple(tuple(int(i) for i in g) for g in groups),
            )
        except ValidationError as e:
            raise InvalidInputError(f"Invalid damage plan: {e}")

    @property
    def is_empty(self) -> bool:
        return not self.indices

    def __len__(self) -> int:
        return len(self.indices)

    def check_bounds(self, n: int) -> None:
        if self.indices and self.indices[-1] >= n:
            raise InvalidInputError(
                f"Damage plan index {self.indices[-1]} out of range for n={n}",
                {"n": n, "description": self.description},
            )

    def node_groups(self) -> Tuple[Tuple[int, ...], ...]:
        """Deletion order: recorded groups, or the whole plan as one step."""
        if self.groups:
            return self.groups
        return (self.indices,) if self.indices else ()

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DamagePlan":
        path = Path(path)
        if not path.exists():
            raise InvalidInputError(f"Plan file not found: {path}")
        try:
            return cls.model_validate(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, ValidationError) as e:
            raise FormatError(str(path), f"not a valid damage plan: {e}")
