import math

import numpy as np
import pytest

from cbctsim.errors import ParameterError
from cbctsim.fdk import (RampKernel, backproject, cosine_weight,
                         default_recon_grid, fdk_reconstruct, make_ramp_kernel,
                         ramp_filter_rows)
from cbctsim.geometry import make_circular_trajectory
from cbctsim.projector import ProjectionStack, forward_project
from cbctsim.volume import GridSpec

from conftest import make_sphere_volume


def empty_stack(geom):
    nu, nv = geom.det_pixels
    return ProjectionStack(geom, np.zeros((geom.n_angles, nv, nu), dtype=np.float32))


@pytest.mark.parametrize("tau", [0.5, 0.75, 1.0])
def test_ramp_kernel_closed_form(tau):
    kernel = make_ramp_kernel(8, tau)
    center = 8
    assert kernel.taps[center] == pytest.approx(1.0 / (4 * tau * tau), abs=1e-15)
    for n in range(1, 9):
        expected = 0.0 if n % 2 == 0 else -1.0 / (math.pi ** 2 * n * n * tau * tau)
        assert kernel.taps[center + n] == pytest.approx(expected, abs=1e-15)
        assert kernel.taps[center + n] == kernel.taps[center - n]


def test_ramp_filter_impulse_response():
    geom = make_circular_trajectory(1, sad=500, sdd=900, det_pixels=(33, 3),
                                    det_pitch=(1.0, 1.0))
    stack = empty_stack(geom)
    data = stack.data.copy()
    data[0, 1, 16] = 1.0
    out = ramp_filter_rows(ProjectionStack(geom, data)).data[0, 1]
    assert out[16] == pytest.approx(0.25, abs=1e-7)
    assert out[15] == pytest.approx(-1.0 / math.pi ** 2, abs=1e-7)
    assert out[17] == pytest.approx(-1.0 / math.pi ** 2, abs=1e-7)
    assert out[14] == pytest.approx(0.0, abs=1e-7)
    assert out[18] == pytest.approx(0.0, abs=1e-7)


def test_ramp_filter_constant_row_near_zero_interior():
    geom = make_circular_trajectory(1, sad=500, sdd=900, det_pixels=(256, 1),
                                    det_pitch=(1.0, 1.0))
    stack = ProjectionStack(geom, np.ones((1, 1, 256), dtype=np.float32))
    out = ramp_filter_rows(stack).data[0, 0]
    interior = out[64:192]
    assert np.abs(interior).max() < 1e-2


def test_ramp_filter_linearity(rng):
    geom = make_circular_trajectory(2, sad=500, sdd=900, det_pixels=(32, 4),
                                    det_pitch=(0.75, 0.75))
    a = rng.normal(size=(2, 4, 32)).astype(np.float32)
    b = rng.normal(size=(2, 4, 32)).astype(np.float32)
    fa = ramp_filter_rows(ProjectionStack(geom, a)).data.astype(np.float64)
    fb = ramp_filter_rows(ProjectionStack(geom, b)).data.astype(np.float64)
    fc = ramp_filter_rows(ProjectionStack(geom, 2.0 * a + 0.5 * b)).data.astype(np.float64)
    assert np.allclose(fc, 2.0 * fa + 0.5 * fb, atol=1e-6 * max(1.0, np.abs(fc).max()))


def test_ramp_filter_pitch_mismatch_rejected():
    geom = make_circular_trajectory(1, det_pixels=(8, 2), det_pitch=(0.75, 0.75))
    kernel = make_ramp_kernel(8, 1.0)
    with pytest.raises(ParameterError):
        ramp_filter_rows(empty_stack(geom), kernel)


def test_ramp_kernel_must_be_odd_length():
    with pytest.raises(ParameterError):
        RampKernel(np.zeros(4), 1.0)


def test_cosine_weight_center_is_one():
    geom = make_circular_trajectory(1, sad=500, sdd=900, det_pixels=(33, 33),
                                    det_pitch=(1.0, 1.0))
    nu, nv = geom.det_pixels
    stack = ProjectionStack(geom, np.ones((1, nv, nu), dtype=np.float32))
    out = cosine_weight(stack).data[0]
    assert out[16, 16] == pytest.approx(1.0, abs=1e-7)
    # strictly decreasing away from the principal ray
    assert np.all(np.diff(out[16, 16:]) < 0)
    assert np.all(np.diff(out[16:, 16]) < 0)


def test_cosine_weight_u_equals_sdd():
    geom = make_circular_trajectory(1, sad=2.0, sdd=4.0, det_pixels=(3, 3),
                                    det_pitch=(4.0, 4.0))
    stack = ProjectionStack(geom, np.ones((1, 3, 3), dtype=np.float32))
    out = cosine_weight(stack).data[0]
    # off-center pixel at physical u = pitch = sdd, v = 0
    assert out[1, 2] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-7)


def test_backproject_zero_stack():
    geom = make_circular_trajectory(8, det_pixels=(16, 16), det_pitch=(2, 2))
    grid = GridSpec.centered((0, 0, 0), (8, 8, 8), (2, 2, 2))
    vol = backproject(empty_stack(geom), grid)
    assert np.all(vol.data == 0.0)


def test_fdk_linearity_in_projections(rng):
    geom = make_circular_trajectory(12, sad=300, sdd=500, det_pixels=(24, 24),
                                    det_pitch=(1.5, 1.5))
    grid = GridSpec.centered((0, 0, 0), (12, 12, 12), (1.5, 1.5, 1.5))
    a = rng.uniform(0, 1, (12, 24, 24)).astype(np.float32)
    b = rng.uniform(0, 1, (12, 24, 24)).astype(np.float32)
    fa = fdk_reconstruct(ProjectionStack(geom, a), grid).data.astype(np.float64)
    fb = fdk_reconstruct(ProjectionStack(geom, b), grid).data.astype(np.float64)
    fc = fdk_reconstruct(ProjectionStack(geom, 2.0 * a + 0.5 * b), grid).data.astype(np.float64)
    ref = 2.0 * fa + 0.5 * fb
    assert np.allclose(fc, ref, atol=1e-5 * max(1.0, np.abs(ref).max()))


def test_fdk_sphere_value_recovery_small():
    # smaller sibling of the acceptance run: 90 views, 32^3 grid
    vol, r = make_sphere_volume(radius_mm=20.0, mu=0.02, dims=(32, 32, 32), voxel_mm=2.0)
    geom = make_circular_trajectory(90, sad=400, sdd=700, det_pixels=(64, 64),
                                    det_pitch=(1.5, 1.5))
    stack = forward_project(vol, geom)
    rec = fdk_reconstruct(stack, vol.grid)
    ball = r <= 6.0
    assert float(rec.data[ball].mean()) == pytest.approx(0.02, rel=0.05)


def test_default_recon_grid_dims_from_extents():
    grid = default_recon_grid((0, 0, 0))
    assert grid.dims == (366, 238, 363)
    assert np.allclose(grid.spacing, (0.688, 1.032, 0.688))


def test_fdk_deterministic_across_threads(rng):
    from numba import get_num_threads, set_num_threads
    geom = make_circular_trajectory(6, sad=300, sdd=500, det_pixels=(16, 16),
                                    det_pitch=(2.0, 2.0))
    grid = GridSpec.centered((0, 0, 0), (10, 10, 10), (2, 2, 2))
    stack = ProjectionStack(geom, rng.uniform(0, 1, (6, 16, 16)).astype(np.float32))
    n = get_num_threads()
    outs = []
    try:
        for threads in (1, 2, n):
            set_num_threads(max(1, threads))
            outs.append(fdk_reconstruct(stack, grid).data.copy())
    finally:
        set_num_threads(n)
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], outs[2])
