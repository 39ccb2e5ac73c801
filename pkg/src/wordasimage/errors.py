"""Exception and warning types shared across the package."""


class WordAsImageError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedFont(WordAsImageError):
    """The font file could not be parsed as an outline font."""


class MissingGlyph(WordAsImageError):
    """The font has no glyph mapped to the requested character."""


class EmptyGlyph(WordAsImageError):
    """The glyph exists but has no contours (e.g. whitespace)."""


class DegenerateGeometry(WordAsImageError):
    """Control points coincide too closely for triangulation."""


class SelfIntersecting(WordAsImageError):
    """Constraint edges of the control polygon cross each other."""

    def __init__(self, msg, edge_pair=None):
        super().__init__(msg)
        self.edge_pair = edge_pair


class SizeMismatch(WordAsImageError):
    """Array or point-set sizes do not agree."""


class NonFiniteCoordinate(WordAsImageError):
    """A path coordinate is NaN or infinite."""


class NonFiniteGradient(WordAsImageError):
    """A gradient contained NaN or infinite entries."""

    def __init__(self, msg, iteration=None):
        super().__init__(msg)
        self.iteration = iteration


class CanvasMismatch(WordAsImageError):
    """Images or paths refer to different canvas geometries."""


class EmptyWord(WordAsImageError):
    """An empty word or concept string was supplied."""


class ServiceUnavailable(WordAsImageError):
    """The remote guidance service could not be reached."""


class ProtocolError(WordAsImageError):
    """The remote guidance service violated the wire protocol."""


class MissingArtifact(WordAsImageError):
    """A manifest references an artifact that does not exist."""


class TargetUnreachableWarning(UserWarning):
    """Subdivision target below the current control-point count."""


class DegenerateTriangleWarning(UserWarning):
    """A triangle collapsed under the current point positions."""
