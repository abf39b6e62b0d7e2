"""Classic 3D gradient noise (improved Perlin, single octave), vectorised."""

import numpy as np

# The 12 cube-edge gradients, padded to 16 entries so ``hash & 15`` indexes directly.
_GRADIENTS = np.array(
    [
        (1, 1, 0), (-1, 1, 0), (1, -1, 0), (-1, -1, 0),
        (1, 0, 1), (-1, 0, 1), (1, 0, -1), (-1, 0, -1),
        (0, 1, 1), (0, -1, 1), (0, 1, -1), (0, -1, -1),
        (1, 1, 0), (0, -1, 1), (-1, 1, 0), (0, -1, -1),
    ],
    dtype=np.float64,
)


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


class PerlinNoise3:
    """Gradient noise with a random permutation table drawn from ``rng``.

    ``noise(x, y, z)`` is exactly zero at every integer lattice point and is
    clipped to [-1, 1].
    """

    def __init__(self, rng):
        perm = rng.permutation(256)
        self.perm = np.concatenate([perm, perm]).astype(np.int64)

    def _grad_dot(self, h, x, y, z):
        g = _GRADIENTS[h & 15]
        return g[..., 0] * x + g[..., 1] * y + g[..., 2] * z

    def noise(self, x, y, z):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        xf, yf, zf = np.floor(x), np.floor(y), np.floor(z)
        xi = xf.astype(np.int64) & 255
        yi = yf.astype(np.int64) & 255
        zi = zf.astype(np.int64) & 255
        x, y, z = x - xf, y - yf, z - zf
        u, v, w = _fade(x), _fade(y), _fade(z)

        p = self.perm
        a = p[xi] + yi
        aa, ab = p[a] + zi, p[a + 1] + zi
        b = p[xi + 1] + yi
        ba, bb = p[b] + zi, p[b + 1] + zi

        g = self._grad_dot
        x1 = g(p[aa], x, y, z) + u * (g(p[ba], x - 1, y, z) - g(p[aa], x, y, z))
        x2 = g(p[ab], x, y - 1, z) + u * (g(p[bb], x - 1, y - 1, z) - g(p[ab], x, y - 1, z))
        y1 = x1 + v * (x2 - x1)
        x3 = g(p[aa + 1], x, y, z - 1) + u * (g(p[ba + 1], x - 1, y, z - 1) - g(p[aa + 1], x, y, z - 1))
        x4 = g(p[ab + 1], x, y - 1, z - 1) + u * (g(p[bb + 1], x - 1, y - 1, z - 1) - g(p[ab + 1], x, y - 1, z - 1))
        y2 = x3 + v * (x4 - x3)
        return np.clip(y1 + w * (y2 - y1), -1.0, 1.0)

    def sample_voxels(self, idx, cell):
        """Noise at integer voxel indices ``idx`` (shape ``(3, m)``) on a lattice of spacing ``cell``."""
        idx = np.asarray(idx, dtype=np.float64) / float(cell)
        return self.noise(idx[0], idx[1], idx[2])
