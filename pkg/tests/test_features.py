import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from hierdet import features
from hierdet.errors import DegenerateRegion
from hierdet.features import (
    ImageRaster,
    effective_source_cells,
    extract_crop,
    extract_zoom,
    precompute_maps,
    zoom_source_cells,
)
from hierdet.geometry import Box, HierarchyScheme, iter_nodes

G = 7


def naive_block_means(img, grid):
    h, w = img.shape[:2]
    bh, bw = h // grid, w // grid
    out = np.zeros((grid, grid, img.shape[2]))
    for r in range(grid):
        for c in range(grid):
            acc = np.zeros(img.shape[2])
            for y in range(r * bh, (r + 1) * bh):
                for x in range(c * bw, (c + 1) * bw):
                    acc += img[y, x]
            out[r, c] = acc / (bh * bw)
    return out


def test_raster_validation():
    with pytest.raises(ValueError):
        ImageRaster(np.zeros((8, 32)))
    with pytest.raises(ValueError):
        ImageRaster(np.full((32, 32), 1.5))
    r = ImageRaster(np.zeros((20, 30)))
    assert (r.width, r.height, r.channels) == (30, 20, 1)


@pytest.mark.parametrize("region", [Box(0, 0, 64, 64), Box(3.3, 7.1, 20.9, 50), Box(10, 10, 12, 11)])
def test_zoom_of_constant_image(region):
    img = ImageRaster(np.full((64, 64, 3), 0.375))
    desc = extract_zoom(img, region, G)
    assert desc.shape == (G * G * 3,)
    np.testing.assert_allclose(desc, 0.375)


def test_zoom_full_region_equals_block_means(rng):
    data = rng.random((56, 70, 2))
    desc = extract_zoom(ImageRaster(data), Box(0, 0, 70, 56), G)
    np.testing.assert_allclose(desc.reshape(G, G, 2), naive_block_means(data, G), atol=1e-12)


def test_zoom_small_region_reads_only_its_patch(rng):
    data = np.zeros((256, 256))
    patch = rng.random((8, 8)) * 0.5 + 0.25
    data[100:108, 40:48] = patch
    desc = extract_zoom(ImageRaster(data), Box(40, 100, 48, 108), G)
    assert desc.shape == (G * G,)
    assert desc.min() >= patch.min() - 1e-12 and desc.max() <= patch.max() + 1e-12
    data[:100] = 1.0
    data[108:] = 1.0
    np.testing.assert_array_equal(desc, extract_zoom(ImageRaster(data), Box(40, 100, 48, 108), G))


def test_zoom_conserves_mass_on_exact_grids(rng):
    data = rng.random((64, 64))
    for region in [Box(0, 0, 56, 56), Box(8, 8, 36, 36), Box(1, 2, 15, 16)]:
        desc = extract_zoom(ImageRaster(data), region, G)
        patch = data[int(region.y0):int(region.y1), int(region.x0):int(region.x1)]
        assert desc.mean() == pytest.approx(patch.mean(), abs=1e-6)


def test_zoom_clips_and_rejects_outside():
    img = ImageRaster(np.full((32, 32), 0.5))
    np.testing.assert_allclose(extract_zoom(img, Box(-10, -10, 16, 16), G), 0.5)
    with pytest.raises(DegenerateRegion):
        extract_zoom(img, Box(40, 40, 50, 50), G)
    with pytest.raises(DegenerateRegion):
        extract_crop(precompute_maps(img), Box(-9, 0, -1, 5), G)


def test_precompute_map_shapes_and_constant():
    maps = precompute_maps(ImageRaster(np.full((64, 64), 0.25)), 8, 16)
    assert maps.shallow.shape[:2] == (8, 8)
    assert maps.deep.shape[:2] == (4, 4)
    np.testing.assert_allclose(maps.shallow, 0.25)
    np.testing.assert_allclose(maps.deep, 0.25)


def test_single_white_pixel_lands_in_one_cell():
    data = np.zeros((32, 32))
    data[13, 21] = 1.0
    shallow = precompute_maps(ImageRaster(data), 8, 16).shallow[:, :, 0]
    assert shallow[1, 2] == pytest.approx(1 / 64)
    assert np.count_nonzero(shallow) == 1


def test_precompute_ceil_semantics(rng):
    data = rng.random((70, 37))
    maps = precompute_maps(ImageRaster(data), 8, 16)
    assert maps.shallow.shape[:2] == (9, 5)
    assert maps.deep.shape[:2] == (5, 3)
    assert maps.shallow[8, 4, 0] == pytest.approx(data[64:70, 32:37].mean())
    assert maps.deep[4, 2, 0] == pytest.approx(data[64:70, 32:37].mean())


def test_precompute_rejects_bad_strides():
    with pytest.raises(ValueError):
        precompute_maps(ImageRaster(np.zeros((32, 32))), 16, 8)


def test_crop_identity_at_deep_scale(rng):
    size = G * 16
    maps = precompute_maps(ImageRaster(rng.random((size, size))), 8, 16)
    desc = extract_crop(maps, Box(0, 0, size, size), G)
    np.testing.assert_array_equal(desc, maps.deep.reshape(-1))
    assert effective_source_cells(maps, Box(0, 0, size, size), G) == G * G


def test_crop_map_selection_threshold(rng):
    size = G * 16
    maps = precompute_maps(ImageRaster(rng.random((size, size))), 8, 16)
    # shorter side one pixel under G * S2 falls back to the shallow map
    assert features._crop(maps, Box(0, 0, size - 1, size), G).shape[:2] == (14, 13)
    assert effective_source_cells(maps, Box(0, 0, size - 1, size), G) == G * G
    assert effective_source_cells(maps, Box(0, 0, 40, 80), G) == 5 * G
    assert effective_source_cells(maps, Box(0, 0, size, size), G) == 7 * 7


def test_crop_upsamples_two_by_two_source(rng):
    maps = precompute_maps(ImageRaster(rng.random((64, 64))), 8, 16)
    region = Box(16, 24, 32, 40)
    assert effective_source_cells(maps, region, G) == 4
    source = maps.shallow[3:5, 2:4, 0]
    desc = extract_crop(maps, region, G).reshape(G, G)
    oracle = ndimage.zoom(source, G / 2, order=1, grid_mode=False)
    np.testing.assert_allclose(desc, oracle, atol=1e-12)
    # corner-aligned: the four source values sit exactly on the corners
    np.testing.assert_allclose(desc[[0, 0, -1, -1], [0, -1, 0, -1]], source.reshape(-1), atol=1e-12)


def test_crop_effective_cells_offset_independent():
    maps = precompute_maps(ImageRaster(np.zeros((64, 64))), 8, 16)
    for off in [0.0, 2.0, 4.0, 5.5, 7.0]:
        assert effective_source_cells(maps, Box(off, off, off + 16, off + 16), G) == 4


def test_crop_constant_image():
    maps = precompute_maps(ImageRaster(np.full((64, 64, 3), 0.6)), 8, 16)
    np.testing.assert_allclose(extract_crop(maps, Box(5, 9, 41, 30), G), 0.6)


def test_tiny_region_still_yields_full_grid(rng):
    maps = precompute_maps(ImageRaster(rng.random((64, 64))), 8, 16)
    assert extract_crop(maps, Box(30.2, 30.2, 30.9, 30.9), G).shape == (G * G,)
    assert effective_source_cells(maps, Box(30.2, 30.2, 30.9, 30.9), G) == 1
    assert extract_zoom(ImageRaster(rng.random((64, 64))), Box(30.2, 30.2, 30.9, 30.9), G).shape == (G * G,)


@pytest.mark.parametrize("scheme", list(HierarchyScheme))
def test_crop_resolution_below_zoom_for_small_regions(scheme):
    maps = precompute_maps(ImageRaster(np.zeros((64, 64))), 8, 16)
    for _, node in iter_nodes(Box(0, 0, 64, 64), scheme, 4):
        cells = effective_source_cells(maps, node, G)
        if min(node.width, node.height) < G * maps.shallow_stride:
            assert cells < G * G
    assert zoom_source_cells(G) == G * G


@settings(max_examples=300, deadline=None)
@given(size=st.sampled_from([64, 100, 128, 224]), x=st.floats(0, 1), y=st.floats(0, 1),
       w=st.floats(1, 55.99), h=st.floats(1, 200))
def test_small_regions_never_reach_full_crop_resolution(size, x, y, w, h):
    maps = precompute_maps(ImageRaster(np.zeros((size, size))), 8, 16)
    h = min(h, size)
    x0, y0 = x * (size - w), y * (size - h)
    assert effective_source_cells(maps, Box(x0, y0, x0 + w, y0 + h), G) < G * G


def test_crop_resolution_monotone_in_region_size():
    maps = precompute_maps(ImageRaster(np.zeros((128, 128))), 8, 16)
    prev = 0
    for side in np.linspace(1, 125, 300):
        region = Box(3.0, 3.0, 3.0 + side, 3.0 + side)
        cells = effective_source_cells(maps, region, G)
        if side >= G * maps.deep_stride:
            # the deep map takes over; still at least G x G cells
            assert cells >= G * G
        else:
            assert cells >= prev
            prev = cells
