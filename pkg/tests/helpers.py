"""Small phantom builders shared by the unit tests."""

import numpy as np

from salseek.volume import PhantomSpec, Volume, make_phantom

NOISE = {"kind": "uniform", "low": 0, "high": 64}


def constant_volume(dims=(24, 24, 24), value=7.0) -> Volume:
    return Volume(np.full(dims, float(value)), (1.0, 1.0, 1.0))


def ball_phantom(n=48, radius=8.0, center=None, seed=0, flat=False):
    dims = [n, n, 1] if flat else [n, n, n]
    c = center if center is not None else [n / 2, n / 2, 0 if flat else n / 2]
    spec = PhantomSpec.from_dict({
        "dims": dims, "rng_seed": seed,
        "regions": [{"shape": "ball", "center": list(c), "radius": radius, "fill": NOISE}],
    })
    return make_phantom(spec)


def square_image(n=64, side=24, origin=None, seed=0):
    o = origin if origin is not None else [(n - side) // 2] * 2
    spec = PhantomSpec.from_dict({
        "dims": [n, n, 1], "rng_seed": seed,
        "regions": [{"shape": "box", "origin": [o[0], o[1], 0], "size": [side, side, 1], "fill": NOISE}],
    })
    return make_phantom(spec)


def symmetric_square(n=64, side=16):
    """Noise-free square whose fill is mirror-symmetric about the center."""
    rng = np.random.default_rng(5)
    img = np.zeros((n, n, 1))
    half = side // 2
    q = rng.integers(0, 64, size=(half, half)).astype(float)
    block = np.block([[q, q[:, ::-1]], [q[::-1, :], q[::-1, ::-1]]])
    o = (n - side) // 2
    img[o : o + side, o : o + side, 0] = block
    return Volume(img, (1.0, 1.0, 1.0))
