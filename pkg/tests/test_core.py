import numpy as np
import pytest

from rdfc.core import (
    CameraIntrinsics,
    DepthMap,
    MalformedFileError,
    ParameterError,
    PointCloud,
    RgbImage,
    SampleRecord,
    SegMask,
    decode_depth_mm,
    encode_depth_mm,
    load_depth_png,
    load_rgb_png,
    load_seg_png,
    read_intrinsics,
    read_plane_classes,
    save_depth_png,
    save_rgb_png,
    save_seg_png,
    validity_mask,
    write_intrinsics,
    write_plane_classes,
)


def test_validity_mask_cases():
    assert validity_mask(DepthMap(np.full((3, 4), 2.0))).all()
    assert not validity_mask(DepthMap(np.zeros((3, 4)))).any()
    d = np.ones((3, 4))
    d[0, 0] = 0
    m = validity_mask(DepthMap(d))
    assert not m[0, 0] and m.sum() == 11


@pytest.mark.parametrize("bad", [np.full((2, 2), -1.0), np.full((2, 2), np.nan), np.ones((2, 2, 2))])
def test_depth_rejects_invalid(bad):
    with pytest.raises(ParameterError):
        DepthMap(bad)


def test_rgb_range_and_shape():
    with pytest.raises(ParameterError):
        RgbImage(np.full((2, 2, 3), 1.5))
    with pytest.raises(ParameterError):
        RgbImage(np.zeros((2, 2)))
    a = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    assert np.array_equal(RgbImage.from_uint8(a).to_uint8(), a)


def test_containers_are_read_only():
    d = DepthMap(np.ones((2, 2)))
    with pytest.raises(ValueError):
        d.data[0, 0] = 3.0


def test_segmask_requires_known_classes():
    with pytest.raises(ParameterError):
        SegMask(np.zeros((2, 2), int), {0: "table"})
    with pytest.raises(ParameterError):
        SegMask(np.array([[0, 7]]), {0: "wall"})
    s = SegMask(np.array([[1, 2], [3, 9]]), {1: "floor", 2: "ceiling", 3: "wall", 9: "other"})
    assert s.plane_codes().tolist() == [[1, 2], [3, 0]]


def test_intrinsics_validation_and_transforms():
    with pytest.raises(ParameterError):
        CameraIntrinsics.from_params(-1, 1, 0, 0)
    with pytest.raises(ParameterError):
        CameraIntrinsics(np.zeros((3, 3)))
    K = CameraIntrinsics.from_params(500, 400, 320, 240)
    Ks = K.scaled(0.5, 0.5).cropped(8, 6)
    assert (Ks.fx, Ks.fy, Ks.cx, Ks.cy) == (250, 200, 152, 114)


def test_pointcloud_rejects_nonfinite():
    with pytest.raises(ParameterError):
        PointCloud(np.array([[0, np.inf, 0]]))
    assert len(PointCloud(np.zeros((0, 3)))) == 0


def test_sample_record_shape_check():
    rgb = RgbImage(np.zeros((4, 5, 3)))
    K = CameraIntrinsics.from_params(1, 1, 0, 0)
    with pytest.raises(ParameterError):
        SampleRecord("x", rgb, DepthMap(np.zeros((5, 4))), K)


def test_depth_png_roundtrip(tmp_path):
    d = DepthMap(np.array([[0.0, 1.234], [2.5, 65.535]]))
    save_depth_png(tmp_path / "d.png", d)
    back = load_depth_png(tmp_path / "d.png")
    assert np.array_equal(back.data, d.data)
    with pytest.raises(ParameterError):
        encode_depth_mm(DepthMap(np.full((1, 1), 70.0)))
    assert decode_depth_mm(np.array([[1000]], np.uint16)).data[0, 0] == 1.0


def test_rgb_and_seg_png_roundtrip(tmp_path):
    rgb = RgbImage.from_uint8(np.random.default_rng(0).integers(0, 256, (3, 4, 3)))
    save_rgb_png(tmp_path / "r.png", rgb)
    assert np.array_equal(load_rgb_png(tmp_path / "r.png").data, rgb.data)
    seg = SegMask(np.array([[1, 3], [3, 1]]), {1: "floor", 3: "wall"})
    save_seg_png(tmp_path / "s.png", seg)
    assert np.array_equal(load_seg_png(tmp_path / "s.png", seg.plane_classes).data, seg.data)
    with pytest.raises(MalformedFileError):
        load_seg_png(tmp_path / "s.png", {1: "floor"})


def test_corrupt_files_raise(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not a png")
    with pytest.raises(MalformedFileError):
        load_depth_png(p)
    with pytest.raises(MalformedFileError):
        load_rgb_png(p)
    save_rgb_png(tmp_path / "rgb.png", RgbImage(np.zeros((2, 2, 3))))
    with pytest.raises(MalformedFileError):
        load_depth_png(tmp_path / "rgb.png")


def test_intrinsics_and_classes_files(tmp_path):
    K = CameraIntrinsics.from_params(518.8, 519.5, 325.6, 253.7)
    write_intrinsics(tmp_path / "K.txt", K)
    assert np.array_equal(read_intrinsics(tmp_path / "K.txt").K, K.K)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(MalformedFileError):
        read_intrinsics(tmp_path / "bad.txt")
    write_plane_classes(tmp_path / "pc.txt", {1: "floor", 2: "wall"})
    assert read_plane_classes(tmp_path / "pc.txt") == {1: "floor", 2: "wall"}
    (tmp_path / "pc2.txt").write_text("1 sofa\n")
    with pytest.raises(MalformedFileError):
        read_plane_classes(tmp_path / "pc2.txt")
