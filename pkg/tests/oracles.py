"""Loop-level reference implementations used as independent oracles."""

import math

import numpy as np

from wgsr.physics import ModalBasis, default_mode_count, greens_function


def brute_force_km(response, model, freqs, array, grid):
    """Kirchhoff image by explicit loops over frequency, pixel and receiver."""
    pix = grid.pixel_centers()
    offset = np.abs(pix[:, 0] - array.x_a).min()
    out = np.zeros(grid.size, dtype=complex)
    for j, k in enumerate(freqs.wavenumbers(model)):
        basis = ModalBasis.build(model, k, min_offset=offset)
        for p, y in enumerate(pix):
            for r, xr in enumerate(array.positions()):
                out[p] += np.conj(response[r, j]) * greens_function(model, basis, xr, y)
    return out.reshape(grid.shape)


def pi_triple_loop(a, preds, labels):
    """sqrt(sum_q sum_m |sum_j A[m, j] (I - P)_q[j]|^2) / (B * n_pixels)."""
    bsz, nx, ny = preds.shape
    total = 0.0
    for q in range(bsz):
        diff = (labels[q] - preds[q]).ravel()
        for m in range(a.shape[0]):
            acc = 0j
            for j in range(nx * ny):
                acc += a[m, j] * diff[j]
            total += abs(acc) ** 2
    return math.sqrt(total) / (bsz * nx * ny)


def brute_force_operator(model, grid, frequency, stride=1):
    """Field operator one Green's function call at a time (half-pixel self term)."""
    k = model.wavenumber(frequency)
    self_offset = grid.h_x / 2 if grid.n_x > 1 else 1.0
    basis = ModalBasis.build(model, k, default_mode_count(model.depth, k, self_offset))
    centers = grid.pixel_centers()
    rows = []
    for ix in range(0, grid.n_x, stride):
        for iy in range(0, grid.n_y, stride):
            m = ix * grid.n_y + iy
            x = centers[m]
            row = []
            for j, y in enumerate(centers):
                at = (x[0] + self_offset, x[1]) if j == m else x
                row.append(greens_function(model, basis, at, y, explicit_truncation=True))
            rows.append(row)
    return np.array(rows)
