import warnings

import numpy as np
import pytest

from lisn.data import save_image
from lisn.tensor import Tensor

warnings.filterwarnings("ignore", message="Using `httpx`")


def make_smooth(size, seed):
    """Band-limited test image in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = 0.2 + 0.3 * xx + 0.2 * yy
    for _ in range(2):
        cy, cx = rng.uniform(0.25, 0.75, 2)
        img = img + rng.uniform(0.2, 0.4) * np.exp(
            -(((yy - cy) ** 2 + (xx - cx) ** 2) / 0.02)
        )
    return np.clip(img / img.max() * 0.9, 0.0, 1.0).astype(np.float32)


@pytest.fixture
def image_dir(tmp_path):
    """Directory with four smooth 48x48 grayscale PNGs."""
    root = tmp_path / "images"
    root.mkdir()
    for i in range(4):
        save_image(Tensor(make_smooth(48, seed=i)[None, None]), root / f"img{i}.png")
    return root
