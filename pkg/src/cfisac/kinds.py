from enum import Enum


class DetectorKind(str, Enum):
    CLUTTER_UNAWARE = "clutter_unaware"
    CLUTTER_AWARE = "clutter_aware"

    @classmethod
    def parse(cls, value: "str | DetectorKind") -> "DetectorKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"unaware": cls.CLUTTER_UNAWARE, "aware": cls.CLUTTER_AWARE}
        if key in aliases:
            return aliases[key]
        return cls(key)


class Mode(str, Enum):
    """Allocation objective variants."""

    E2E_ISAC = "e2e_isac"
    TX_ONLY_ISAC = "tx_only_isac"
    E2E_NO_SENSING = "e2e_no_sensing"

    @property
    def has_sensing(self) -> bool:
        return self is not Mode.E2E_NO_SENSING

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace("-", "_"))
