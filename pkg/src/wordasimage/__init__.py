"""wordasimage: deform font glyph outlines to depict a concept, legibly.

The geometric core (ingestion, triangulation, differentiable rasterization,
augmentation, optimization loop) is pure numpy and fully testable offline;
semantic guidance plugs in through a gradient backend (in-process oracle or
a remote diffusion-based service speaking the /v1/gradient protocol).
"""

__version__ = "0.1.0"

from .engine import RunConfig, optimize_letter
from .fonts import (
    GlyphOutline,
    GlyphPath,
    Subpath,
    load_glyph,
    subdivide_to_target,
    to_cubics,
)
from .guidance import GuidanceSpec

__all__ = [
    "GlyphOutline",
    "GlyphPath",
    "GuidanceSpec",
    "RunConfig",
    "Subpath",
    "load_glyph",
    "optimize_letter",
    "subdivide_to_target",
    "to_cubics",
    "__version__",
]
