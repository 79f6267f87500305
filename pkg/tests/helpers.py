import numpy as np

FIXTURE_IMAGES = 24
FIXTURE_SIZE = 32


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of the scalar function f at x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        f_plus = f(x)
        x[idx] = orig - eps
        f_minus = f(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


class OracleModel:
    """Predicts the ground truth."""

    def predict(self, episodes):
        return np.stack([e.query_mask for e in episodes]).astype(np.float32)


class EmptyModel:

    def predict(self, episodes):
        return np.zeros((len(episodes), *episodes[0].image_shape), dtype=np.float32)


class NoisyModel:
    """Random probabilities seeded by the episode seed."""

    def predict(self, episodes):
        return np.stack([np.random.default_rng(e.seed).random(e.image_shape) for e in episodes])
