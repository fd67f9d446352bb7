"""Diagnosis classes and their fixed display/encoding order."""

from __future__ import annotations

import enum


class ClassLabel(str, enum.Enum):
    NORMAL = "Normal"
    NPI = "NPI"
    NPC = "NPC"

    def __str__(self) -> str:
        return self.value


# Display order for confusion matrices and the integer encoding (0..2)
# used for training targets.
CLASS_ORDER = (ClassLabel.NORMAL, ClassLabel.NPI, ClassLabel.NPC)

CLASS_INDEX = {label: i for i, label in enumerate(CLASS_ORDER)}


def parse_class(name: str) -> ClassLabel:
    try:
        return ClassLabel(name)
    except ValueError:
        valid = ", ".join(c.value for c in CLASS_ORDER)
        raise ValueError(f"unknown class {name!r}; expected one of {valid}") from None
