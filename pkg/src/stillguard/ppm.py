"""Binary PPM (P6) image I/O.

Images travel as float64 [3, H, W] arrays in [0, 1]. Loading maps byte b to
b/255 exactly; saving rounds x*255 to the nearest integer, so values already
on the 1/255 grid round-trip losslessly.
"""

from pathlib import Path

import numpy as np

from .errors import ParseError

_WS = b" \t\r\n"


def save_image(image, path):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ParseError(f"save_image expects [3, H, W], got {image.shape}")
    _, h, w = image.shape
    payload = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    # interleave channels into raster RGB order
    body = payload.transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + body)


def load_image(path):
    blob = Path(path).read_bytes()
    pos = 0

    def skip_ws():
        nonlocal pos
        while pos < len(blob):
            if blob[pos:pos + 1] in (b" ", b"\t", b"\r", b"\n"):
                pos += 1
            elif blob[pos:pos + 1] == b"#":  # comment runs to end of line
                while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                    pos += 1
            else:
                return

    def read_int(field):
        nonlocal pos
        skip_ws()
        start = pos
        while pos < len(blob) and blob[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise ParseError(f"expected integer for {field}", offset=start)
        return int(blob[start:pos])

    if blob[:2] != b"P6":
        raise ParseError(f"unsupported magic {blob[:2]!r} (only binary P6 accepted)", offset=0)
    pos = 2
    width = read_int("width")
    height = read_int("height")
    maxval = read_int("maxval")
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval} (only 8-bit images accepted)", offset=pos)
    if pos >= len(blob) or blob[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise ParseError("missing whitespace after maxval", offset=pos)
    pos += 1
    need = width * height * 3
    body = blob[pos:pos + need]
    if len(body) < need:
        raise ParseError(f"truncated payload: need {need} bytes, have {len(body)}", offset=pos)
    raster = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return raster.transpose(2, 0, 1).astype(np.float64) / 255.0
