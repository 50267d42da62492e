"""Exception types shared across the package."""

from __future__ import annotations


class XcflowError(Exception):
    """Base class for package errors."""


class ConfigError(XcflowError):
    """Bad or inconsistent run configuration."""


class SnapshotFormatError(XcflowError):
    """Snapshot file is malformed or disagrees with the expected layout."""


class GhostStateError(XcflowError):
    """Operation needs filled ghost layers but the field has stale ones."""


class SpdViolationError(XcflowError):
    """Metric lost positive definiteness at one or more nodes."""


class FlowBlowupError(XcflowError):
    """Time stepper produced non-finite values."""


class GaugeDriftError(XcflowError):
    """Gauge vector field grew past the configured tolerance."""


class NewtonDivergedError(XcflowError):
    """Newton inversion of the tracked diffeomorphism failed to converge."""


class CrossDegenerateError(XcflowError):
    """Cross tensor requested through the inverse route at a degenerate point."""


class QrConvergenceError(XcflowError):
    """Shifted QR iteration exceeded its sweep budget."""
