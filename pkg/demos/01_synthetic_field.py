"""
A synthetic nursery field
=========================

Three ranges of four rows, twenty plant positions per row.  Some positions
hold two or three plants grown together; their boxes carry the Double and
Triple classes and count as two and three plants.
"""
import sys
from pathlib import Path

from masc.raster import write_image
from masc.synth import FieldSpec, generate_field

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

spec = FieldSpec(ranges=3, rows_per_range=4, plants_per_row=20, double_rate=0.10, triple_rate=0.03, seed=1)
field = generate_field(spec)
h, w = field.image.shape[:2]
print(f"field is {w} x {h} px, {len(field.truth)} boxes")

# per-row truth, in reading order
print(field.report.to_csv())

# the layout the generator used; the counting stage has to rediscover it
for k, ((y0, y1), rows) in enumerate(zip(field.layout.ranges, field.layout.rows_per_range), start=1):
    print(f"range {k}: y {y0:.0f}..{y1:.0f}, rows at x =", [round((a + b) / 2) for a, b in rows])

write_image(out / "field.png", field.image)
print("wrote", out / "field.png")
