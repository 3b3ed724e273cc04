"""Linear image path: blockwise orthonormal transform and helpers.

Images enter the codec through an orthonormal block cosine transform
(analysis) whose transpose reconstructs pixels (synthesis).  Coefficients
are divided by a scalar quantization step to form the latent tensor, one
channel per in-block coefficient index, stacked per color plane.  The
synthesis matrix is also the refit target of the decoder-retraining step,
solved in closed form from weighted normal equations.

File I/O uses binary PNM (P5 grayscale, P6 RGB, maxval 255).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError


def dct_matrix(block):
    """Orthonormal 2D DCT analysis matrix of shape (block**2, block**2)."""
    n = np.arange(block)
    k = n[:, None]
    d = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2.0 * block))
    d *= np.sqrt(2.0 / block)
    d[0] *= np.sqrt(0.5)
    return np.kron(d, d)


@dataclass(frozen=True)
class SynthesisWeights:
    """Latent-to-pixel block matrix plus the level weights that fit it."""

    matrix: np.ndarray         # (block**2, block**2)
    level_weights: np.ndarray  # refit provenance, highest level first


class LinearTransform:
    """Blockwise orthonormal analysis/synthesis with a scalar step."""

    def __init__(self, block=8, step=4.0):
        if block < 1:
            raise ParameterError("block must be positive")
        if step <= 0:
            raise ParameterError("step must be positive")
        self.block = block
        self.step = float(step)
        self.analysis = dct_matrix(block)

    def _to_blocks(self, plane):
        b = self.block
        h, w = plane.shape
        if h % b or w % b:
            raise DataError(f"image dims must be multiples of {b}, got {h}x{w}")
        vecs = (
            plane.reshape(h // b, b, w // b, b)
            .transpose(0, 2, 1, 3)
            .reshape(-1, b * b)
        )
        return vecs, (h // b, w // b)

    def _from_blocks(self, vecs, grid):
        b = self.block
        gh, gw = grid
        return (
            vecs.reshape(gh, gw, b, b).transpose(0, 2, 1, 3).reshape(gh * b, gw * b)
        )

    def block_vectors(self, plane):
        """(H, W) plane to (n_blocks, block**2) row vectors."""
        return self._to_blocks(np.asarray(plane, dtype=np.float64))[0]

    def analyze(self, image):
        """(P, H, W) pixels -> (P*block**2, H/block, W/block) latents."""
        image = np.asarray(image, dtype=np.float64)
        out = []
        for plane in image:
            vecs, grid = self._to_blocks(plane)
            coeffs = vecs @ self.analysis.T / self.step
            out.append(coeffs.T.reshape(self.block ** 2, *grid))
        return np.concatenate(out, axis=0)

    def synthesize(self, latents, weights=None):
        """Latents back to (P, H, W) float pixels (not clipped).

        ``weights`` overrides the default orthonormal synthesis (the
        analysis transpose), e.g. after a decoder refit.
        """
        latents = np.asarray(latents, dtype=np.float64)
        b2 = self.block ** 2
        if latents.shape[0] % b2:
            raise ParameterError("latent channel count is not a block multiple")
        matrix = self.analysis.T if weights is None else weights.matrix
        planes = []
        for p in range(latents.shape[0] // b2):
            lat = latents[p * b2 : (p + 1) * b2]
            grid = lat.shape[1:]
            vecs = (lat.reshape(b2, -1).T * self.step) @ matrix.T
            planes.append(self._from_blocks(vecs, grid))
        return np.stack(planes)


def refit_synthesis(samples, block, ridge=1e-6):
    """Closed-form weighted least-squares refit of the synthesis matrix.

    ``samples`` is an iterable of (weight, Z, X): latent block vectors Z
    (n, block**2) in the synthesis input domain and pixel block vectors X.
    Minimizes sum_l w_l ||Z_l G^T - X_l||_F^2 via normal equations with a
    ridge.  Returns (SynthesisWeights, condition_number).
    """
    b2 = block * block
    gram = np.zeros((b2, b2))
    cross = np.zeros((b2, b2))
    weights = []
    for w, z, x in samples:
        z = np.asarray(z, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if z.shape != x.shape or z.shape[1] != b2:
            raise ParameterError("refit sample shapes must be (n, block**2)")
        gram += w * (z.T @ z)
        cross += w * (x.T @ z)
        weights.append(w)
    if not weights:
        raise ParameterError("no refit samples")
    scale = float(np.trace(gram)) / b2
    reg = ridge * max(scale, 1.0)
    gram[np.diag_indices_from(gram)] += reg
    condition = float(np.linalg.cond(gram))
    matrix = np.linalg.solve(gram, cross.T).T
    return SynthesisWeights(matrix, np.asarray(weights, dtype=np.float64)), condition


def read_pnm(path):
    """Binary PNM to (planes, H, W) uint8: P5 -> 1 plane, P6 -> 3."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        fields = []
        pos = 0
        while len(fields) < 4:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            fields.append(data[start:pos])
        magic, width, height, maxval = (
            fields[0],
            int(fields[1]),
            int(fields[2]),
            int(fields[3]),
        )
        pos += 1  # single whitespace after maxval
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed PNM header in {path}") from exc
    if magic not in (b"P5", b"P6"):
        raise DataError(f"unsupported PNM magic {magic!r}")
    if maxval != 255:
        raise DataError("only maxval 255 PNM files are supported")
    planes = 1 if magic == b"P5" else 3
    need = width * height * planes
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise DataError(f"PNM payload truncated in {path}")
    arr = np.frombuffer(raw, dtype=np.uint8)
    if planes == 1:
        return arr.reshape(1, height, width)
    return arr.reshape(height, width, 3).transpose(2, 0, 1)


def write_pnm(path, image):
    """(1|3, H, W) uint8 to a binary P5/P6 file."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ParameterError("image must be (1, H, W) or (3, H, W)")
    if image.dtype != np.uint8:
        raise ParameterError("image must be uint8")
    planes, h, w = image.shape
    magic = b"P5" if planes == 1 else b"P6"
    body = image[0] if planes == 1 else image.transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(body.tobytes())


def synthetic_image(seed, height=64, width=64, planes=1):
    """Seeded smooth test image: filtered noise plus a gradient, uint8."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    out = np.empty((planes, height, width), dtype=np.uint8)
    yy, xx = np.mgrid[0:height, 0:width]
    for p in range(planes):
        field = gaussian_filter(rng.standard_normal((height, width)), sigma=6.0)
        field += gaussian_filter(rng.standard_normal((height, width)), sigma=2.0) * 0.3
        grad = (xx / max(width - 1, 1) + yy / max(height - 1, 1)) * rng.uniform(0.2, 0.8)
        field = field / max(np.abs(field).max(), 1e-9) + grad
        lo, hi = field.min(), field.max()
        out[p] = np.round((field - lo) / max(hi - lo, 1e-9) * 255.0).astype(np.uint8)
    return out
