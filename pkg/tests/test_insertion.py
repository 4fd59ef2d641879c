import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from styledrag import synthdata
from styledrag.errors import (DatasetError, PlacementError, SegmentationError,
                              ShapeError)
from styledrag.insertion import (InsertionModel, InsertTrainConfig, Placement,
                                 SubjectCutout, default_insertion_arch,
                                 insert_effects, paste, remove_subject,
                                 segment_subject, train_insertion)


def disk_image(size=32, radius=6, center=(16, 16), color=(0.9, 0.1, 0.1),
               bg=(0.7, 0.7, 0.7)):
    img = np.full((size, size, 3), bg, dtype=np.float32)
    yy, xx = np.mgrid[0:size, 0:size]
    mask = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius ** 2
    img[mask] = color
    return img, mask.astype(np.float32)


# -- segmentation -----------------------------------------------------------------


def test_rgba_passthrough():
    rgba = np.zeros((8, 8, 4), dtype=np.float32)
    rgba[2:5, 3:6, 3] = 1.0
    rgba[..., :3] = 0.5
    cut = segment_subject(rgba)
    np.testing.assert_array_equal(cut.rgba[..., 3], rgba[2:5, 3:6, 3])
    assert cut.bbox == (3, 2, 6, 5)


def test_uniform_background_disk_gives_exact_mask():
    img, mask = disk_image()
    cut = segment_subject(img)
    x0, y0, x1, y1 = cut.bbox
    recovered = np.zeros((32, 32), dtype=np.float32)
    recovered[y0:y1, x0:x1] = cut.rgba[..., 3]
    np.testing.assert_array_equal(recovered, mask)


def test_shadow_excluded_from_segmentation():
    """Pixels that are a darkened copy of the background are not subject."""
    img, mask = disk_image()
    img[24:28, 10:20] *= 0.6  # cast shadow: colinear with background color
    cut = segment_subject(img)
    x0, y0, x1, y1 = cut.bbox
    recovered = np.zeros((32, 32), dtype=np.float32)
    recovered[y0:y1, x0:x1] = cut.rgba[..., 3]
    np.testing.assert_array_equal(recovered, mask)


def test_blank_image_raises():
    blank = np.full((16, 16, 3), 0.8, dtype=np.float32)
    with pytest.raises(SegmentationError):
        segment_subject(blank)


def test_largest_component_wins():
    img, mask = disk_image()
    img[2, 2] = (0.0, 0.0, 1.0)  # a one-pixel distractor
    cut = segment_subject(img)
    assert (cut.rgba[..., 3] > 0.5).sum() == mask.sum()


# -- paste -----------------------------------------------------------------------


def make_cutout(h=6, w=5, alpha_value=1.0):
    rgba = np.zeros((h, w, 4), dtype=np.float32)
    rgba[..., 0] = 0.9
    rgba[..., 3] = alpha_value
    return SubjectCutout(rgba=rgba, bbox=(0, 0, w, h))


def test_paste_outside_mask_is_bit_identical():
    target = np.random.default_rng(0).random((24, 24, 3)).astype(np.float32)
    comp, mask = paste(make_cutout(), target, Placement(x=10, y=12, scale=1.0))
    outside = mask == 0
    np.testing.assert_array_equal(comp[outside], target[outside])
    inside = mask == 1.0
    assert inside.any()
    np.testing.assert_array_equal(comp[inside], np.tile([0.9, 0.0, 0.0],
                                                        (inside.sum(), 1)).astype(np.float32))


def test_paste_half_alpha_blends_evenly():
    target = np.full((16, 16, 3), 0.2, dtype=np.float32)
    cut = make_cutout(h=4, w=4)
    cut.rgba[..., 3] = 0.5
    comp, mask = paste(cut, target, Placement(x=8.5, y=8.5, scale=1.0))
    inside = mask == 0.5
    assert inside.any()
    expected = 0.5 * np.array([0.9, 0.0, 0.0]) + 0.5 * 0.2
    np.testing.assert_allclose(comp[inside], np.tile(expected, (inside.sum(), 1)),
                               rtol=1e-6)


def test_paste_zero_alpha_is_target():
    rgba = np.zeros((4, 4, 4), dtype=np.float32)
    rgba[..., 0] = 1.0
    rgba[0, 0, 3] = 0.6  # keep the cutout constructible
    cut = SubjectCutout(rgba=rgba, bbox=(0, 0, 4, 4))
    cut.rgba[..., 3] = 0.0
    target = np.random.default_rng(1).random((12, 12, 3)).astype(np.float32)
    comp, mask = paste(cut, target, Placement(x=6, y=6))
    np.testing.assert_array_equal(comp, target)
    assert mask.max() == 0.0


def test_paste_fully_outside_raises():
    target = np.zeros((16, 16, 3), dtype=np.float32)
    with pytest.raises(PlacementError):
        paste(make_cutout(), target, Placement(x=200, y=200, scale=1.0))


def test_paste_scaling_changes_footprint():
    target = np.zeros((32, 32, 3), dtype=np.float32)
    _, m1 = paste(make_cutout(), target, Placement(x=16, y=16, scale=1.0))
    _, m2 = paste(make_cutout(), target, Placement(x=16, y=16, scale=2.0))
    assert m2.sum() > 3 * m1.sum()


@given(alpha=st.floats(0.0, 1.0))
@settings(max_examples=20, deadline=None)
def test_paste_alpha_over_identity(alpha):
    target = np.full((10, 10, 3), 0.25, dtype=np.float32)
    rgba = np.zeros((2, 2, 4), dtype=np.float32)
    rgba[..., 1] = 0.75
    rgba[0, 0, 3] = 1.0
    cut = SubjectCutout(rgba=rgba, bbox=(0, 0, 2, 2))
    cut.rgba[..., 3] = np.float32(alpha)
    comp, mask = paste(cut, target, Placement(x=4.5, y=4.5))
    inside = mask > 0
    a = np.float32(alpha)
    if a == 0.0:
        assert not inside.any()
    else:
        expected = a * np.array([0.0, 0.75, 0.0], dtype=np.float32) + (1 - a) * 0.25
        np.testing.assert_allclose(comp[inside][0], expected, rtol=2e-6, atol=2e-7)


# -- insertion model ----------------------------------------------------------------


def small_model():
    return InsertionModel(default_insertion_arch(image_size=32, base_width=8),
                          seed=1, sample_steps=2)


def test_untrained_model_warns_and_passes_through():
    m = small_model()
    img, mask = disk_image()
    with pytest.warns(RuntimeWarning):
        out = insert_effects(m, img, mask, seed=0)
    np.testing.assert_array_equal(out, img)
    with pytest.warns(RuntimeWarning):
        out = remove_subject(m, img, mask, seed=0)
    np.testing.assert_array_equal(out, img)


def test_zero_mask_short_circuits():
    m = small_model()
    img, _ = disk_image()
    zero = np.zeros(img.shape[:2], dtype=np.float32)
    np.testing.assert_array_equal(insert_effects(m, img, zero), img)
    np.testing.assert_array_equal(remove_subject(m, img, zero), img)


def test_subject_pixels_never_altered_when_trained():
    m = small_model()
    m.trained = True
    img, mask = disk_image()
    out = insert_effects(m, img, mask, seed=3)
    np.testing.assert_array_equal(out[mask > 0.5], img[mask > 0.5])
    out2 = insert_effects(m, img, mask, seed=3)
    np.testing.assert_array_equal(out, out2)


def test_mask_alignment_checked():
    m = small_model()
    img, mask = disk_image()
    with pytest.raises(ShapeError):
        insert_effects(m, img, mask[:16], seed=0)


def test_train_insertion_validations():
    m = small_model()
    with pytest.raises(DatasetError):
        train_insertion(m, [], InsertTrainConfig(steps=1))
    scene = synthdata.gen_scene(synthdata.PHOTO, 0, size=32)
    bad = (scene.clean, scene.no_effects[:16], scene.with_effects, scene.mask)
    with pytest.raises(DatasetError):
        train_insertion(m, [bad], InsertTrainConfig(steps=1))


def test_train_insertion_zero_steps_keeps_parameters():
    m = small_model()
    before = {n: p.clone() for n, p in m.unet.named_parameters()}
    scenes = [synthdata.gen_scene(synthdata.PHOTO, i, size=32) for i in range(2)]
    train_insertion(m, scenes, InsertTrainConfig(steps=0))
    for n, p in m.unet.named_parameters():
        assert torch.equal(before[n], p)
    assert m.provenance["training"][-1]["steps"] == 0


def test_duplicate_dataset_equals_dedup_with_doubled_steps():
    """Sequential order, batch 1: [a, a] x1 epoch == [a] x2 epochs."""
    scene = synthdata.gen_scene(synthdata.PHOTO, 5, size=32)
    cfg = InsertTrainConfig(steps=2, batch_size=1, seed=7, order="sequential")
    m1 = small_model()
    train_insertion(m1, [scene, scene], cfg)
    m2 = small_model()
    train_insertion(m2, [scene], cfg)
    for (n1, p1), (n2, p2) in zip(m1.unet.named_parameters(),
                                  m2.unet.named_parameters()):
        assert torch.equal(p1, p2), n1


def test_insertion_checkpoint_roundtrip():
    m = small_model()
    m.trained = True
    m.provenance["rounds"].append({"index": 0})
    restored = InsertionModel.from_bytes(m.to_bytes())
    assert restored.trained and restored.sample_steps == m.sample_steps
    assert restored.provenance["rounds"] == [{"index": 0}]
    for (n1, p1), (n2, p2) in zip(m.unet.named_parameters(),
                                  restored.unet.named_parameters()):
        assert torch.equal(p1, p2)
