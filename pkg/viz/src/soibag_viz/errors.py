"""Error types for the viz package."""


class VizError(Exception):
    """Base class for viz failures."""


class MissingRecords(VizError):
    """The log lacks the record kind a plot requires."""

    def __init__(self, kind):
        self.kind = kind
        super().__init__(f"log contains no '{kind}' records")


class UnknownPlotKind(VizError):
    """The requested plot kind is not recognized."""
