"""Reference rasterizer for the golden chart test.

Draws the reference window (closes 100..119, low = close - 1, high = close + 1,
open = previous close, first open 99) and writes binary PPM files.

Conventions:
  plot area     inset by round(margin * size) on every side
  price -> row  round_half_away(bottom - (p - lo) / (hi - lo) * (bottom - top))
  column width  (right - left + 1) / days; candle centre left + floor((d + 0.5) * width)
  body half     floor(body_fraction * width / 2), shrunk while 2 * half + 1 > floor(width)
  draw order    wick (1 px, low..high), then body over it; open == close is a
                1 px horizontal line in the wick colour
"""
import math
import pathlib

WHITE, GREEN, RED, BLACK = (255, 255, 255), (0, 255, 0), (255, 0, 0), (0, 0, 0)


def round_half_away(x):
    r = math.floor(abs(x) + 0.5)
    return -r if x < 0 else r


def reference_window():
    bars = []
    for i in range(20):
        close = 100.0 + i
        open_ = close - 1.0
        bars.append((open_, close + 1.0, close - 1.0, close))
    return bars


def rasterize(bars, size, body_fraction=0.8, margin=0.05):
    img = [[WHITE] * size for _ in range(size)]
    inset = round_half_away(margin * size)
    left, top = inset, inset
    right, bottom = size - 1 - inset, size - 1 - inset
    width = (right - left + 1) / len(bars)
    half = math.floor(body_fraction * width / 2)
    while half > 0 and 2 * half + 1 > math.floor(width):
        half -= 1
    lo = min(b[2] for b in bars)
    hi = max(b[1] for b in bars)

    def row(p):
        if hi > lo:
            return round_half_away(bottom - (p - lo) / (hi - lo) * (bottom - top))
        return round_half_away((top + bottom) / 2)

    def put(x, y, c):
        if 0 <= x < size and 0 <= y < size:
            img[y][x] = c

    for d, (o, h, l, c) in enumerate(bars):
        cx = left + math.floor((d + 0.5) * width)
        for y in range(row(h), row(l) + 1):
            put(cx, y, BLACK)
        if o == c:
            for x in range(cx - half, cx + half + 1):
                put(x, row(o), BLACK)
            continue
        colour = GREEN if c > o else RED
        for y in range(row(max(o, c)), row(min(o, c)) + 1):
            for x in range(cx - half, cx + half + 1):
                put(x, y, colour)
    return img


def write_ppm(img, path):
    size = len(img)
    data = bytes(v for line in img for px in line for v in px)
    path.write_bytes(b"P6\n%d %d\n255\n" % (size, size) + data)


if __name__ == "__main__":
    here = pathlib.Path(__file__).parent
    for size in (224, 64):
        write_ppm(rasterize(reference_window(), size), here / f"reference_{size}.ppm")
