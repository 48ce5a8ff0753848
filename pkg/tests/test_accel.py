"""Backend equivalence: the numba kernels must match the numpy fallbacks."""

import numpy as np

from hitop import accel


def random_blob(rng, shape=(48, 48)):
    img = (rng.random(shape) < 0.45).astype(np.uint8)
    # a few dilation-like passes to build connected blobs
    for _ in range(2):
        p = np.pad(img, 1)
        img = ((p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] + img)
               > 1).astype(np.uint8)
    return img


class TestThinPass:
    def test_scalar_matches_numpy(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            img = random_blob(rng)
            for phase in (0, 1):
                out_a = img.copy()
                out_b = img.copy()
                na = accel.thin_pass_scalar(img, out_a, phase)
                nb = accel.thin_pass_numpy(img, out_b, phase)
                assert na == nb
                assert np.array_equal(out_a, out_b)


class TestFilterCsr:
    def test_scalar_matches_numpy(self):
        rng = np.random.default_rng(5)
        for trial in range(3):
            nely, nelx = 13, 17
            rmin = rng.uniform(1.0, 4.0, (nely, nelx))
            a = accel.filter_csr_scalar(nely, nelx, rmin)
            b = accel.filter_csr_numpy(nely, nelx, rmin.ravel())
            for x, y in zip(a, b):
                assert np.array_equal(x, y)

    def test_indices_sorted_per_row(self):
        indptr, indices, _ = accel.filter_csr(6, 7, np.full((6, 7), 2.5))
        for e in range(6 * 7):
            seg = indices[indptr[e]:indptr[e + 1]]
            assert np.all(np.diff(seg) > 0)


class TestLinePixels:
    def test_endpoints_and_connectivity(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            r0, c0, r1, c1 = rng.integers(0, 40, 4)
            px = accel.line_pixels(r0, c0, r1, c1)
            assert tuple(px[0]) == (r0, c0)
            assert tuple(px[-1]) == (r1, c1)
            steps = np.abs(np.diff(px, axis=0))
            assert steps.max(initial=0) <= 1

    def test_single_pixel(self):
        px = accel.line_pixels(4, 4, 4, 4)
        assert px.shape == (1, 2)
