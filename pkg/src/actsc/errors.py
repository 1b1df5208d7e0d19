"""Exception types shared across the package."""

from __future__ import annotations


class ActscError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ActscError):
    """Invalid configuration value or combination."""


class DatasetFormatError(ActscError):
    """A dataset / sample-pool file failed to parse or validate.

    The message names the offending line number or problem_id so bad
    records can be located in large dumps.
    """


class EmptyGroupError(ActscError):
    """A difficulty group required by the gap statistic contains no records."""


class EmptySelectionError(ActscError):
    """Neuron selection produced an empty union set; the probe would have zero features."""


class ProbeTrainingError(ActscError):
    """Probe training could not proceed (bad labels, divergence, ...)."""


class SamplerError(ActscError):
    """An answer source could not produce the requested samples."""


class PoolExhaustedError(SamplerError):
    """A replay pool ran out of pre-generated samples for a problem."""
