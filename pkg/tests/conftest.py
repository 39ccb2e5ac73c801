import pathlib

import numpy as np
import pytest

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def font_bytes() -> bytes:
    return (DATA / "DejaVuSans.ttf").read_bytes()


@pytest.fixture(scope="session")
def font_path() -> pathlib.Path:
    return DATA / "DejaVuSans.ttf"


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240229)


def square_path(side: float = 1.0, origin=(0.0, 0.0)):
    """Unit-square GlyphPath made of 4 equal line-elevated cubics (CCW, y-up)."""
    from wordasimage import bezier
    from wordasimage.fonts import GlyphPath, Subpath

    ox, oy = origin
    corners = np.array(
        [[ox, oy], [ox + side, oy], [ox + side, oy + side], [ox, oy + side]]
    )
    segs = [bezier.line_to_cubic(corners[i], corners[(i + 1) % 4]) for i in range(4)]
    points = np.concatenate([s[:3] for s in segs], axis=0)
    return GlyphPath(points=points, subpaths=(Subpath(0, 4),), letter="□")


@pytest.fixture()
def unit_square():
    return square_path()
