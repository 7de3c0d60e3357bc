import numpy as np
import pytest

from purlab import imgio


def image(seed):
    return np.random.default_rng(seed).uniform(-1, 1, (3, 32, 32))


def test_png16_round_trip_precision(tmp_path):
    x = image(0)
    imgio.write_png16(tmp_path / "a.png", x)
    back = imgio.read_image(tmp_path / "a.png")
    assert np.abs(back - x).max() <= 2.0 / 65535 + 1e-12


def test_ingest_same_resolution_round_trip(tmp_path):
    x = image(1)
    imgio.write_png16(tmp_path / "a.png", x)
    batch = imgio.ingest_images(tmp_path)
    assert batch.shape == (1, 3, 32, 32)
    assert np.abs(batch[0] - x).max() <= 1.0 / 255

def test_ingest_downscales_larger_images(tmp_path):
    rng = np.random.default_rng(2)
    big = rng.uniform(-1, 1, (3, 64, 64))
    imgio.write_png16(tmp_path / "big.png", big)
    batch = imgio.ingest_images(tmp_path)
    assert batch.shape == (1, 3, 32, 32)


def test_ingest_center_crops_rectangles(tmp_path):
    rng = np.random.default_rng(3)
    rect = rng.uniform(-1, 1, (3, 32, 64))
    imgio.write_png16(tmp_path / "r.png", np.zeros((3, 32, 32)))
    # write a rectangle manually via cv2 16-bit
    import cv2
    scaled = np.clip((rect.transpose(1, 2, 0) + 1) / 2, 0, 1) * 65535
    cv2.imwrite(str(tmp_path / "rect.png"),
                np.round(scaled).astype(np.uint16)[:, :, ::-1])
    batch = imgio.ingest_images(tmp_path)
    assert batch.shape == (2, 3, 32, 32)


def test_ingest_skips_invalid_files_with_warning(tmp_path):
    imgio.write_png16(tmp_path / "ok.png", image(4))
    (tmp_path / "junk.png").write_bytes(b"not a png at all")
    (tmp_path / "notes.txt").write_text("hello")
    with pytest.warns(UserWarning, match="skipping"):
        batch = imgio.ingest_images(tmp_path)
    assert batch.shape[0] == 1


def test_ingest_empty_directory_rejected(tmp_path):
    with pytest.raises(ValueError, match="no decodable images"):
        imgio.ingest_images(tmp_path)


def test_ingest_missing_directory_rejected(tmp_path):
    with pytest.raises(ValueError, match="not a directory"):
        imgio.ingest_images(tmp_path / "nope")
