import numpy as np
import pytest

from maskflow.core import Prediction, PredictionSet


def rect_mask(height, width, x0, y0, x1, y1):
    """Mask with the half-open box [x0, x1) x [y0, y1) set."""
    m = np.zeros((height, width), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def make_pred(mask, category=1, score=1.0, frame=0):
    return Prediction(mask, category, score, frame)


def make_set(preds, width, height, frame=0, provenance="model"):
    return PredictionSet(frame, width, height, tuple(preds), provenance)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
