from __future__ import annotations

from enum import IntEnum


class Label(IntEnum):
    NO = 0
    SPIKE = 1

    @property
    def token(self) -> str:
        return "spike" if self is Label.SPIKE else "no"

    @classmethod
    def parse(cls, token: str) -> "Label":
        t = token.strip().lower()
        if t in {"spike", "1"}:
            return cls.SPIKE
        if t in {"no", "0"}:
            return cls.NO
        raise ValueError(f"unknown label token: {token!r}")


# label arrays use int8 with this sentinel for days without rolling stats
UNDEFINED = -1


class PriceParseError(ValueError):
    def __init__(self, row: int, detail: str):
        super().__init__(f"row {row}: {detail}")
        self.row = row


class DuplicateDateError(ValueError):
    pass


class UndefinedRecallError(ValueError):
    pass


class UnknownConditionError(ValueError):
    pass


class PredictionFormatError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch
