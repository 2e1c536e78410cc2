"""Image helpers: luminance, bilinear sampling and binary PPM/PGM files.

Images are float arrays in [0, 1], shaped (H, W) or (H, W, 3).
"""
import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA
    raise ValueError(f"unsupported image shape {img.shape}")


def bilinear(img, x, y) -> np.ndarray:
    """Sample at continuous pixel coordinates (pixel centers at k + 0.5).

    Addressing is clamp-to-edge. Returns (M,) for gray or (M, C) images.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    fx = np.asarray(x, dtype=np.float64) - 0.5
    fy = np.asarray(y, dtype=np.float64) - 0.5
    x0 = np.floor(fx)
    y0 = np.floor(fy)
    ax = fx - x0
    ay = fy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    if img.ndim == 3:
        ax = ax[:, None]
        ay = ay[:, None]
    top = img[y0c, x0c] * (1 - ax) + img[y0c, x1c] * ax
    bot = img[y1c, x0c] * (1 - ax) + img[y1c, x1c] * ax
    return top * (1 - ay) + bot * ay


def quantize(img) -> np.ndarray:
    """Round to the 8-bit grid, returned as floats."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _write_pnm(path, magic, data):
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_ppm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    _write_pnm(path, "P6", np.ascontiguousarray(data))


def write_pgm(path, img) -> None:
    """Write a gray image or boolean mask (True -> 255) as binary PGM."""
    img = np.asarray(img)
    if img.dtype == bool:
        data = img.astype(np.uint8) * 255
    else:
        data = np.round(np.clip(to_gray(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    _write_pnm(path, "P5", np.ascontiguousarray(data))


def _tokens(data, count):
    """First ``count`` whitespace tokens of a PNM header (comments skipped)."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic not in ("P5", "P6"):
        raise ValueError(f"{path}: unsupported PNM magic {magic}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PNM is supported")
    ch = 3 if magic == "P6" else 1
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * ch, offset=pos)
    img = raw.astype(np.float64) / 255.0
    return img.reshape(h, w, 3) if ch == 3 else img.reshape(h, w)
