"""Exception types shared across the toolkit."""

from __future__ import annotations


class EtaBenchError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(EtaBenchError):
    """Malformed schema document or inconsistent feature constraints."""


class FormulaError(SchemaError):
    """Unparseable derived-feature formula or reference to an unknown feature."""


class MissingColumnError(EtaBenchError):
    """A CSV is missing a feature or label column required by the schema."""


class EmptyDatasetError(EtaBenchError):
    """No usable rows remain after cleaning, or an operation needs a non-empty set."""


class IoFailureError(EtaBenchError):
    """Underlying file could not be read or written."""


class MalformedPcapError(EtaBenchError):
    """Capture file violates the classic pcap layout (bad magic, truncation)."""


class SingleClassDataError(EtaBenchError):
    """Supervised training needs both classes present."""


class DegenerateDataError(EtaBenchError):
    """Training data is unusable (e.g. anomaly model given zero benign rows)."""


class DimensionMismatchError(EtaBenchError):
    """Input vector width disagrees with what a model or schema expects."""


class NotDifferentiableError(EtaBenchError):
    """Analytic gradient requested from a model that does not define one."""


class TooManyPlayersError(EtaBenchError):
    """Exact Shapley enumeration requested above the supported feature count."""


class EmptyFeatureSetError(EtaBenchError):
    """A feature subset argument that must be non-empty was empty."""


class EmptyOutcomeListError(EtaBenchError):
    """Attack-success rate over zero outcomes is undefined."""


class ConfigError(EtaBenchError):
    """Run configuration failed validation.

    Carries every problem found so the CLI can report them all at once.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
